"""
📦 Module Package Initialization
"""

from .utils import (
    load_config,
    setup_logging,
    load_env_variables,
    make_rng,
)
from .exceptions import FlickerLabError, ValidationError, FlickerRuntimeError
from .video_data import Dims, VideoTensor, LabeledVideo, Perturbation
from .diffnet import Architecture, ModelParams, forward, init_params
from .attack_core import MarginSpec, RegWeights, TauMode, objective, fooling_ratio
from .attack_driver import AttackConfig, AttackMode, AttackResult, FlickeringAttack, evaluate
from .experiment_config import ExperimentConfig, ExperimentGuard, ValidationResult

__version__ = "1.0.0"
__all__ = [
    'load_config',
    'setup_logging',
    'load_env_variables',
    'make_rng',
    'FlickerLabError',
    'ValidationError',
    'FlickerRuntimeError',
    'Dims',
    'VideoTensor',
    'LabeledVideo',
    'Perturbation',
    'Architecture',
    'ModelParams',
    'forward',
    'init_params',
    'MarginSpec',
    'RegWeights',
    'TauMode',
    'objective',
    'fooling_ratio',
    'AttackConfig',
    'AttackMode',
    'AttackResult',
    'FlickeringAttack',
    'evaluate',
    'ExperimentConfig',
    'ExperimentGuard',
    'ValidationResult',
]
