"""
🛠️ Utility Functions
Common helpers used across the application: config, logging, seeding, artifacts
"""

import os
import json
import yaml
import logging
from pathlib import Path
from typing import Dict, Any, List, Optional, Union

import numpy as np


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load configuration from YAML file

    Args:
        config_path: Path to config file (defaults to $FLICKER_LAB_CONFIG or config.yaml)

    Returns:
        Dictionary with configuration
    """
    if config_path is None:
        config_path = os.environ.get('FLICKER_LAB_CONFIG', 'config.yaml')
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
        return config or {}
    except FileNotFoundError:
        logging.error(f"Configuration file not found: {config_path}")
        return {}
    except yaml.YAMLError as e:
        logging.error(f"Error parsing config file: {e}")
        return {}
    except UnicodeDecodeError as e:
        logging.error(f"Unicode decode error in config file: {e}")
        return {}


def setup_logging(config: Dict[str, Any], level: Optional[str] = None) -> logging.Logger:
    """
    Configure logging based on config settings

    Args:
        config: Configuration dictionary
        level: Optional level overriding config and environment

    Returns:
        Configured logger
    """
    log_config = config.get('logging', {})

    level_name = (level
                  or os.environ.get('FLICKER_LAB_LOG_LEVEL')
                  or log_config.get('level', 'INFO')).upper()

    handlers: List[logging.Handler] = [logging.StreamHandler()]
    log_file = log_config.get('log_file')
    if log_file:
        os.makedirs(os.path.dirname(log_file) or '.', exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))

    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=log_config.get('format', '%(asctime)s - %(name)s - %(levelname)s - %(message)s'),
        handlers=handlers,
        force=True
    )

    return logging.getLogger(__name__)


def load_env_variables() -> bool:
    """Load environment variables from .env file"""
    try:
        from dotenv import load_dotenv
        load_dotenv()
        return True
    except ImportError:
        logging.warning("python-dotenv not installed. Using system environment variables.")
        return False
    except Exception as e:
        logging.error(f"Error loading .env file: {e}")
        return False


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Build an independent Philox generator for (seed, *keys)

    Every random draw in the project goes through here, so a task's stream
    depends only on the global seed and its own key path, never on the
    order or parallelism in which tasks run.

    Args:
        seed: Global 64-bit seed
        keys: Spawn key path (purpose tag, task index, ...)

    Returns:
        numpy Generator backed by Philox
    """
    sequence = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                      spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


# Purpose tags for make_rng key paths
RNG_DATASET = 1
RNG_EVAL_SPLIT = 2
RNG_MODEL_INIT = 3
RNG_TRAIN_SHUFFLE = 4
RNG_ATTACK = 5
RNG_BASELINE = 6
RNG_TAU = 7
RNG_CHANNEL_NOISE = 8
RNG_REJITTER = 9
RNG_SPLIT = 10


def parse_float_list(text: Union[str, List[float]]) -> List[float]:
    """
    Parse "5,10,15" style lists

    Args:
        text: Comma separated numbers or an existing list

    Returns:
        List of floats
    """
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(part) for part in str(text).split(',') if part.strip()]


def sanitize_filename(filename: str) -> str:
    """
    Sanitize filename for safe file system operations

    Args:
        filename: Original filename

    Returns:
        Sanitized filename
    """
    import re

    filename = re.sub(r'[<>:"/\\|?*]', '', filename)
    return filename.replace(' ', '_')


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    """Write JSON deterministically (sorted keys, fixed indent)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2))
        f.write('\n')
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON document"""
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def parallel_map(func, items, n_jobs: int = 1) -> list:
    """
    Map func over items, results in submission order

    Args:
        func: Picklable callable
        items: Iterable of arguments
        n_jobs: joblib worker count (1 runs inline)

    Returns:
        List of results, same order as items
    """
    items = list(items)
    if n_jobs == 1 or len(items) <= 1:
        return [func(item) for item in items]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=n_jobs)(delayed(func)(item) for item in items)
