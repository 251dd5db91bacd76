"""
🎲 Random Flicker Baselines
Random perturbations matched to a reference flicker trace, used to show an
optimized attack beats noise of the same amplitude.
"""

from enum import Enum
from typing import Callable, Dict

import numpy as np

from modules.utils import make_rng, RNG_BASELINE
from modules.video_data import Perturbation


class BaselineKind(str, Enum):
    UNIFORM = "uniform"
    MINMAX = "minmax"
    SHUFFLE = "shuffle"

    @property
    def code(self) -> int:
        return {'uniform': 1, 'minmax': 2, 'shuffle': 3}[self.value]


def _rng(seed: int, kind: BaselineKind) -> np.random.Generator:
    return make_rng(seed, RNG_BASELINE, kind.code)


def baseline_uniform(delta_ref: Perturbation, seed: int) -> Perturbation:
    """i.i.d. elements drawn from U[min, max] of the reference"""
    low, high = float(delta_ref.trace.min()), float(delta_ref.trace.max())
    if low == high:
        return delta_ref.with_trace(np.full_like(delta_ref.trace, low))
    values = _rng(seed, BaselineKind.UNIFORM).uniform(low, high, size=delta_ref.trace.shape)
    return delta_ref.with_trace(values)


def baseline_minmax(delta_ref: Perturbation, seed: int) -> Perturbation:
    """Each element is the reference min or max with equal probability"""
    low, high = float(delta_ref.trace.min()), float(delta_ref.trace.max())
    coins = _rng(seed, BaselineKind.MINMAX).integers(0, 2, size=delta_ref.trace.shape).astype(bool)
    return delta_ref.with_trace(np.where(coins, high, low))


def baseline_shuffle(delta_ref: Perturbation, seed: int) -> Perturbation:
    """Uniform permutation of all 3T reference elements across frames and channels"""
    flat = delta_ref.trace.ravel()
    shuffled = _rng(seed, BaselineKind.SHUFFLE).permutation(flat)
    return delta_ref.with_trace(shuffled.reshape(delta_ref.trace.shape))


BASELINES: Dict[BaselineKind, Callable[[Perturbation, int], Perturbation]] = {
    BaselineKind.UNIFORM: baseline_uniform,
    BaselineKind.MINMAX: baseline_minmax,
    BaselineKind.SHUFFLE: baseline_shuffle,
}


def make_baseline(kind: str, delta_ref: Perturbation, seed: int) -> Perturbation:
    return BASELINES[BaselineKind(kind)](delta_ref, seed)
