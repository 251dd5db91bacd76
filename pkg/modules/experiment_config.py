"""
🛡️ Experiment Configuration
Schema validation and typed views of config.yaml.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from cerberus import Validator

from modules.attack_core import percent_to_linf
from modules.attack_driver import AttackConfig, AttackMode
from modules.classifier_trainer import TrainConfig
from modules.diffnet import Architecture
from modules.exceptions import ConfigError, ValidationError
from modules.ota_channel import ChannelModel
from modules.synthetic_videos import MAX_CLASSES, SyntheticDatasetSpec
from modules.video_data import Dims


@dataclass
class ValidationResult:
    """Container describing the outcome of a validation step."""

    passed: bool
    issues: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "issues": list(dict.fromkeys(self.issues)),  # preserve order, avoid duplicates
            "warnings": list(dict.fromkeys(self.warnings)),
        }

    @classmethod
    def success(cls) -> "ValidationResult":
        return cls(True, [], [])


_NUMBER = {'type': 'number'}
_POSITIVE = {'type': 'number', 'min': 0, 'nullable': True}

_ATTACK_KEYS = {
    'iterations': {'type': 'integer', 'min': 1},
    'batch_size': {'type': 'integer', 'min': 1, 'nullable': True},
    'learning_rate': {'type': 'number', 'min': 0},
    'adam_beta1': {'type': 'number', 'min': 0, 'max': 1},
    'adam_beta2': {'type': 'number', 'min': 0, 'max': 1},
    'adam_eps': {'type': 'number', 'min': 0},
    'eval_every': {'type': 'integer', 'min': 1},
    'patience': {'type': 'integer', 'min': 1, 'nullable': True},
    'time_invariant': {'type': 'boolean'},
    'select_on_margin': {'type': 'boolean'},
    'linf_pct': _POSITIVE,
    'target_class': {'type': 'integer', 'min': 0, 'nullable': True},
    'margin': {'type': 'dict', 'schema': {
        'm': {'type': 'number', 'min': 0},
        'space': {'type': 'string', 'allowed': ['probability', 'logit']},
        'direction': {'type': 'string', 'allowed': ['untargeted', 'targeted']},
        'target': {'type': 'integer', 'min': 0, 'nullable': True},
    }},
    'weights': {'type': 'dict', 'schema': {
        'lambda': {'type': 'number', 'min': 0},
        'beta1': {'type': 'number', 'min': 0},
        'beta2': {'type': 'number', 'min': 0},
    }},
}

OTA_DEFAULTS = {'probe_amplitude': 0.5, 'variants': 10, 'precompensate': True,
                'scene_renders': 8, 'scene_margin': 0.2, 'scene_iterations': 400}

SCHEMA: Dict[str, Any] = {
    'runtime': {'type': 'dict', 'schema': {
        'seed': {'type': 'integer', 'min': 0},
        'n_jobs': {'type': 'integer'},
        'output_dir': {'type': 'string'},
    }},
    'dataset': {'type': 'dict', 'schema': {
        'T': {'type': 'integer', 'min': 3},
        'H': {'type': 'integer', 'min': 4},
        'W': {'type': 'integer', 'min': 4},
        'v_min': _NUMBER,
        'v_max': _NUMBER,
        'num_classes': {'type': 'integer', 'min': 2, 'max': MAX_CLASSES},
        'clips_per_class': {'type': 'integer', 'min': 1},
        'eval_clips_per_class': {'type': 'integer', 'min': 1},
        'noise_sigma': {'type': 'number', 'min': 0},
        'seed': {'type': 'integer', 'min': 0, 'nullable': True},
    }},
    'model': {'type': 'dict', 'schema': {
        'variant': {'type': 'string', 'allowed': ['A', 'B']},
        'checkpoint': {'type': 'string', 'nullable': True},
    }},
    'training': {'type': 'dict', 'schema': {
        'learning_rate': {'type': 'number', 'min': 0},
        'batch_size': {'type': 'integer', 'min': 1},
        'epochs': {'type': 'integer', 'min': 1},
        'beta1': {'type': 'number', 'min': 0, 'max': 1},
        'beta2': {'type': 'number', 'min': 0, 'max': 1},
        'eps': {'type': 'number', 'min': 0},
        'weight_decay': {'type': 'number', 'min': 0},
        'eval_fraction': {'type': 'number', 'min': 0, 'max': 1},
    }},
    'attack': {'type': 'dict', 'schema': _ATTACK_KEYS},
    'attack_profiles': {'type': 'dict', 'keysrules': {'type': 'string',
                                                      'allowed': [m.value for m in AttackMode]},
                        'valuesrules': {'type': 'dict', 'schema': _ATTACK_KEYS}},
    'baselines': {'type': 'dict', 'schema': {
        'linf_pct': {'type': 'list', 'schema': {'type': 'number', 'min': 0}},
        'repeats': {'type': 'integer', 'min': 1},
    }},
    'channel': {'type': 'dict', 'schema': {
        'crosstalk': {'type': 'list', 'schema': {'type': 'list', 'schema': _NUMBER}},
        'rise_alpha': {'type': 'number', 'min': 0, 'max': 1},
        'phase': {'type': 'integer'},
        'ambient': {'type': 'list', 'schema': _NUMBER},
        'noise_sigma': {'type': 'number', 'min': 0},
    }},
    'ota': {'type': 'dict', 'schema': {
        'probe_amplitude': {'type': 'number', 'min': 0},
        'variants': {'type': 'integer', 'min': 1},
        'precompensate': {'type': 'boolean'},
        'scene_renders': {'type': 'integer', 'min': 1},
        'scene_margin': {'type': 'number', 'min': 0},
        'scene_iterations': {'type': 'integer', 'min': 1},
    }},
    'report': {'type': 'dict', 'schema': {
        'float_format': {'type': 'string'},
    }},
    'logging': {'type': 'dict', 'schema': {
        'level': {'type': 'string', 'allowed': ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']},
        'format': {'type': 'string'},
        'log_file': {'type': 'string', 'nullable': True},
    }},
}


def _flatten_errors(errors: Dict[str, Any], prefix: str = "") -> List[str]:
    messages = []
    for key, value in errors.items():
        path = f"{prefix}{key}"
        for item in value:
            if isinstance(item, dict):
                messages.extend(_flatten_errors(item, f"{path}."))
            else:
                messages.append(f"{path}: {item}")
    return messages


class ExperimentGuard:
    """Schema and consistency checks run before any experiment touches data"""

    def __init__(self, config: Dict[str, Any]):
        self.config = config or {}
        self.logger = logging.getLogger(__name__)

    def ensure_valid(self, enforce: bool = True) -> ValidationResult:
        """Run configuration checks and optionally raise on failure."""
        result = self._run_checks()

        for warning in result.warnings:
            self.logger.warning("Configuration warning: %s", warning)

        if enforce and not result.passed:
            combined = "; ".join(result.issues)
            raise ConfigError(f"Configuration checks failed: {combined}")

        return result

    def _run_checks(self) -> ValidationResult:
        issues: List[str] = []
        warnings: List[str] = []

        validator = Validator(SCHEMA)
        if not validator.validate(self.config):
            issues.extend(_flatten_errors(validator.errors))

        dataset_cfg = self.config.get("dataset", {}) or {}
        if dataset_cfg.get("v_min", -1.0) >= dataset_cfg.get("v_max", 1.0):
            issues.append("dataset: v_min must be below v_max")

        channel_cfg = self.config.get("channel", {}) or {}
        crosstalk = channel_cfg.get("crosstalk")
        if crosstalk is not None and (len(crosstalk) != 3 or any(len(row) != 3 for row in crosstalk)):
            issues.append("channel.crosstalk must be a 3x3 matrix")
        ambient = channel_cfg.get("ambient")
        if ambient is not None and len(ambient) != 3:
            issues.append("channel.ambient must have 3 entries")
        if channel_cfg.get("rise_alpha", 1.0) == 0:
            issues.append("channel.rise_alpha must be > 0")

        for pct in (self.config.get("baselines", {}) or {}).get("linf_pct", []):
            if pct <= 0:
                issues.append(f"baselines.linf_pct values must be positive (got {pct})")

        checkpoint = (self.config.get("model", {}) or {}).get("checkpoint")
        if checkpoint and not Path(checkpoint).exists():
            issues.append(f"model.checkpoint does not exist: {checkpoint}")

        if (self.config.get("logging", {}) or {}).get("level", "INFO").upper() == "DEBUG":
            warnings.append("Logging level is DEBUG; per-iteration attack logs are verbose.")

        profiles = self.config.get("attack_profiles", {}) or {}
        if AttackMode.SINGLE_VIDEO.value in profiles and profiles[AttackMode.SINGLE_VIDEO.value].get("batch_size", 1) != 1:
            warnings.append("attack_profiles.single_video.batch_size is ignored (always 1)")

        return ValidationResult(passed=not issues, issues=issues, warnings=warnings)


@dataclass
class ExperimentConfig:
    """Typed view of the whole configuration"""

    dataset: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    eval_clips_per_class: int = 10
    variant: Architecture = Architecture.A
    checkpoint: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: Dict[str, Any] = field(default_factory=dict)
    attack_profiles: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    sweep: List[float] = field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0])
    repeats: int = 10
    channel: ChannelModel = field(default_factory=ChannelModel)
    ota: Dict[str, Any] = field(default_factory=lambda: dict(OTA_DEFAULTS))
    output_dir: str = "outputs"
    seed: int = 0
    n_jobs: int = 1
    float_format: str = "%.6f"

    @classmethod
    def from_dict(cls, config: Dict[str, Any], seed: Optional[int] = None) -> "ExperimentConfig":
        """
        Build from a loaded config dict

        Args:
            config: Output of load_config (may be empty)
            seed: Override for runtime.seed; propagates to every component

        Returns:
            ExperimentConfig
        """
        config = config or {}
        runtime = config.get('runtime', {}) or {}
        seed = int(runtime.get('seed', 0) if seed is None else seed)
        n_jobs = int(runtime.get('n_jobs', 1))

        data_cfg = config.get('dataset', {}) or {}
        dims = Dims(T=int(data_cfg.get('T', 16)), H=int(data_cfg.get('H', 32)), W=int(data_cfg.get('W', 32)),
                    v_min=float(data_cfg.get('v_min', -1.0)), v_max=float(data_cfg.get('v_max', 1.0)))
        data_seed = data_cfg.get('seed')
        dataset = SyntheticDatasetSpec(dims=dims,
                                       num_classes=int(data_cfg.get('num_classes', 6)),
                                       clips_per_class=int(data_cfg.get('clips_per_class', 20)),
                                       noise_sigma=float(data_cfg.get('noise_sigma', 0.05)),
                                       seed=seed if data_seed is None else int(data_seed))

        train = TrainConfig.from_dict({**(config.get('training', {}) or {}), 'seed': seed, 'n_jobs': n_jobs})
        model_cfg = config.get('model', {}) or {}
        baseline_cfg = config.get('baselines', {}) or {}
        ota_cfg = dict(OTA_DEFAULTS)
        ota_cfg.update(config.get('ota', {}) or {})

        return cls(
            dataset=dataset,
            eval_clips_per_class=int(data_cfg.get('eval_clips_per_class', 10)),
            variant=Architecture(model_cfg.get('variant', 'A')),
            checkpoint=model_cfg.get('checkpoint'),
            train=train,
            attack=dict(config.get('attack', {}) or {}),
            attack_profiles={k: dict(v or {}) for k, v in (config.get('attack_profiles', {}) or {}).items()},
            sweep=[float(v) for v in baseline_cfg.get('linf_pct', [5, 10, 15, 20])],
            repeats=int(baseline_cfg.get('repeats', 10)),
            channel=ChannelModel.from_dict(config.get('channel', {})),
            ota=ota_cfg,
            output_dir=str(runtime.get('output_dir', 'outputs')),
            seed=seed,
            n_jobs=n_jobs,
            float_format=str((config.get('report', {}) or {}).get('float_format', '%.6f')),
        )

    def attack_config(self, mode: str, linf_pct: Optional[float] = None, **overrides) -> AttackConfig:
        """
        Attack settings for a mode: attack section, then the mode's profile, then overrides

        Args:
            mode: single_video, single_class or universal
            linf_pct: Budget in percent of the intensity range (overrides config)
            overrides: Any AttackConfig field

        Returns:
            AttackConfig with zeta in absolute units
        """
        mode = AttackMode(mode)
        merged: Dict[str, Any] = {}
        for layer in (self.attack, self.attack_profiles.get(mode.value, {})):
            for key, value in layer.items():
                if isinstance(value, dict) and isinstance(merged.get(key), dict):
                    merged[key] = {**merged[key], **value}
                else:
                    merged[key] = value
        merged.update({k: v for k, v in overrides.items() if v is not None})
        pct = linf_pct if linf_pct is not None else merged.pop('linf_pct', None)
        merged.pop('linf_pct', None)
        merged['mode'] = mode
        merged['seed'] = self.seed
        merged.setdefault('n_jobs', self.n_jobs)
        if mode is AttackMode.SINGLE_VIDEO:
            merged['batch_size'] = 1
        if pct is not None:
            if pct <= 0:
                raise ValidationError(f"linf_pct must be positive (got {pct})")
            merged['zeta'] = percent_to_linf(pct, self.dataset.dims)
        return AttackConfig.from_dict(merged)

    def scene_attack_config(self, linf_pct: Optional[float] = None) -> AttackConfig:
        """
        Settings for a scene attack developed over several renderings

        Single-class profile with random cyclic shifts, the ota margin, no
        early stop, and checkpoints ranked by how many renderings meet the
        margin.
        """
        cfg = self.attack_config(AttackMode.SINGLE_CLASS, linf_pct, time_invariant=True,
                                 iterations=self.ota.get('scene_iterations'))
        margin = replace(cfg.margin, m=float(self.ota['scene_margin']))
        return replace(cfg, margin=margin, patience=None, select_on_margin=True)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, dataset=replace(self.dataset, seed=seed),
                       train=replace(self.train, seed=seed))

    def to_dict(self) -> Dict[str, Any]:
        """Config echo written next to experiment outputs"""
        return {
            'schema_version': 1,
            'seed': self.seed,
            'dataset': self.dataset.to_dict(),
            'eval_clips_per_class': self.eval_clips_per_class,
            'variant': self.variant.value,
            'checkpoint': self.checkpoint,
            'training': self.train.to_dict(),
            'attack': self.attack,
            'attack_profiles': self.attack_profiles,
            'sweep': self.sweep,
            'repeats': self.repeats,
            'channel': self.channel.to_dict(),
            'ota': self.ota,
            'output_dir': self.output_dir,
        }
