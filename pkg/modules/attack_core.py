"""
⚡ Flickering Attack Core
Objective, regularizers, margin loss, projection and metrics for
spatially uniform per-frame RGB perturbations.

Conventions:
    roll(x, tau)[i] = x[(i + tau) mod T] along the leading time axis
    diff1(x) = roll(x, 1) - x
    diff2(x) = roll(x, -1) - 2x + roll(x, 1)
    D1(delta) = |delta|_2^2 / 3T                       (thickness)
    D2(delta) = (|diff1|_2^2 + |diff2|_2^2) / 3T       (roughness)
    loss = lambda * (beta1 * D1 + beta2 * D2) + mean_n margin(F(X_n + roll(delta, tau_n)))

The clamp to [v_min, v_max] has subgradient 0 wherever the raw sum falls
outside the range; it is the only set-valued derivative in the objective.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from modules.diffnet import ModelParams, Prediction, content_key, value_and_grad_input, forward
from modules.exceptions import ShapeError, ValidationError
from modules.utils import make_rng, parallel_map, RNG_TAU
from modules.video_data import Dims, LabeledVideo, Perturbation, VideoTensor, check_same_dims

logger = logging.getLogger(__name__)


# ==================== TYPES ====================

@dataclass(frozen=True)
class RegWeights:
    """Weights of the regularization term: lambda * (beta1 * D1 + beta2 * D2)"""

    lam: float = 1.0
    beta1: float = 0.5
    beta2: float = 0.5

    def __post_init__(self):
        for name in ('lam', 'beta1', 'beta2'):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValidationError(f"RegWeights.{name} must be finite and >= 0 (got {value})")

    def to_dict(self) -> Dict[str, float]:
        return {'lambda': self.lam, 'beta1': self.beta1, 'beta2': self.beta2}

    @classmethod
    def from_dict(cls, payload: Dict[str, float]) -> "RegWeights":
        payload = payload or {}
        return cls(lam=float(payload.get('lambda', payload.get('lam', 1.0))),
                   beta1=float(payload.get('beta1', 0.5)),
                   beta2=float(payload.get('beta2', 0.5)))


class MarginSpace(str, Enum):
    PROBABILITY = "probability"
    LOGIT = "logit"


class Direction(str, Enum):
    UNTARGETED = "untargeted"
    TARGETED = "targeted"


@dataclass(frozen=True)
class MarginSpec:
    """
    Margin loss settings

    Untargeted attacks push the clip's own label below the runner-up by m;
    targeted attacks pull `target` above every other class by m. In logit
    space the margin is still tested on probabilities while the gradient
    flows through the logit difference.
    """

    m: float = 0.05
    space: MarginSpace = MarginSpace.PROBABILITY
    direction: Direction = Direction.UNTARGETED
    target: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'space', MarginSpace(self.space))
        object.__setattr__(self, 'direction', Direction(self.direction))
        if not np.isfinite(self.m) or self.m <= 0:
            raise ValidationError(f"Margin m must be > 0 (got {self.m})")
        if self.direction is Direction.TARGETED:
            if self.target is None or int(self.target) < 0:
                raise ValidationError("Targeted margin needs a non-negative target class")

    def reference_class(self, label: int) -> int:
        return int(self.target) if self.direction is Direction.TARGETED else int(label)

    def to_dict(self) -> Dict:
        return {'m': self.m, 'space': self.space.value, 'direction': self.direction.value,
                'target': self.target}

    @classmethod
    def from_dict(cls, payload: Dict) -> "MarginSpec":
        payload = payload or {}
        return cls(m=float(payload.get('m', 0.05)),
                   space=payload.get('space', MarginSpace.PROBABILITY),
                   direction=payload.get('direction', Direction.UNTARGETED),
                   target=payload.get('target'))


@dataclass(frozen=True)
class MetricsReport:
    """Perturbation size as percent of the intensity range"""

    thickness_pct: float
    roughness_pct: float
    linf_pct: float

    def to_dict(self) -> Dict[str, float]:
        return {'thickness_pct': self.thickness_pct, 'roughness_pct': self.roughness_pct,
                'linf_pct': self.linf_pct}


class TauMode(str, Enum):
    SYNCHRONIZED = "synchronized"
    RANDOM = "random"
    SWEEP_ALL = "sweep-all"


# ==================== TENSOR OPS ====================

def roll(x: np.ndarray, tau: int) -> np.ndarray:
    """Cyclic time shift: output[i] = x[(i + tau) mod T]"""
    x = np.asarray(x)
    return np.roll(x, -int(tau), axis=0)


def temporal_diff1(x: np.ndarray) -> np.ndarray:
    """First cyclic temporal difference roll(x, 1) - x"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValidationError(f"temporal_diff1 needs T >= 2 (got {x.shape[0]})")
    return roll(x, 1) - x


def temporal_diff2(x: np.ndarray) -> np.ndarray:
    """Second cyclic temporal difference roll(x, -1) - 2x + roll(x, 1)"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        raise ValidationError(f"temporal_diff2 needs T >= 3 (got {x.shape[0]})")
    return roll(x, -1) - 2.0 * x + roll(x, 1)


def p_norm(x: np.ndarray, p: float) -> float:
    """Entrywise p-norm (p = inf gives the max magnitude)"""
    x = np.abs(np.asarray(x, dtype=np.float64)).ravel()
    if p == np.inf:
        return float(x.max()) if x.size else 0.0
    if p <= 0:
        raise ValidationError(f"p must be > 0 (got {p})")
    return float(np.sum(x ** p) ** (1.0 / p))


def _trace(delta: Union[Perturbation, np.ndarray]) -> np.ndarray:
    return delta.trace if isinstance(delta, Perturbation) else np.asarray(delta, dtype=np.float64)


# ==================== REGULARIZERS ====================

def thickness_reg(delta: Union[Perturbation, np.ndarray]) -> float:
    """D1: mean squared amplitude"""
    trace = _trace(delta)
    return float(np.sum(trace * trace) / trace.size)


def thickness_reg_grad(delta: Union[Perturbation, np.ndarray]) -> np.ndarray:
    trace = _trace(delta)
    return 2.0 * trace / trace.size


def roughness_reg(delta: Union[Perturbation, np.ndarray]) -> float:
    """D2: energy of the first and second cyclic temporal differences"""
    trace = _trace(delta)
    d1 = temporal_diff1(trace)
    d2 = temporal_diff2(trace)
    return float((np.sum(d1 * d1) + np.sum(d2 * d2)) / trace.size)


def roughness_reg_grad(delta: Union[Perturbation, np.ndarray]) -> np.ndarray:
    trace = _trace(delta)
    d1 = temporal_diff1(trace)
    d2 = temporal_diff2(trace)
    # adjoint of diff1 is roll(g, -1) - g; diff2 is self-adjoint
    return 2.0 * ((roll(d1, -1) - d1) + temporal_diff2(d2)) / trace.size


def regularization(delta: Union[Perturbation, np.ndarray], weights: RegWeights) -> Tuple[float, np.ndarray]:
    """lambda * (beta1 * D1 + beta2 * D2) and its gradient"""
    trace = _trace(delta)
    value = 0.0
    grad = np.zeros_like(trace)
    if weights.lam == 0:
        return value, grad
    if weights.beta1 > 0:
        value += weights.beta1 * thickness_reg(trace)
        grad += weights.beta1 * thickness_reg_grad(trace)
    if weights.beta2 > 0:
        value += weights.beta2 * roughness_reg(trace)
        grad += weights.beta2 * roughness_reg_grad(trace)
    return weights.lam * value, weights.lam * grad


# ==================== MARGIN LOSS ====================

def _margin_terms(y: np.ndarray, reference: int, spec: MarginSpec) -> Tuple[float, int, float]:
    """(l_m, runner-up index, sign) with l_m = sign * (y_ref - y_runner) + m"""
    k = y.shape[0]
    if k < 2:
        raise ValidationError(f"Margin loss needs K >= 2 (got {k})")
    if not 0 <= reference < k:
        raise ValidationError(f"Class index {reference} out of range for K={k}")
    others = y.copy()
    others[reference] = -np.inf
    runner = int(np.argmax(others))
    sign = 1.0 if spec.direction is Direction.UNTARGETED else -1.0
    return sign * (y[reference] - y[runner]) + spec.m, runner, sign


def _branch(ell: float, m: float) -> Tuple[float, float]:
    """max(0, min(l^2/m, l)) and its derivative in l"""
    if ell <= 0:
        return 0.0, 0.0
    if ell >= m:
        return float(ell), 1.0
    return float(ell * ell / m), 2.0 * ell / m


def margin_loss(pred: Prediction, spec: MarginSpec, label: int) -> float:
    """
    Margin loss on the probability vector

    Args:
        pred: Classifier output
        spec: Margin settings
        label: The clip's true class (ignored when targeted)

    Returns:
        max(0, min(l_m^2 / m, l_m))
    """
    ell, _, _ = _margin_terms(pred.probabilities, spec.reference_class(label), spec)
    return _branch(ell, spec.m)[0]


def margin_loss_grad(pred: Prediction, spec: MarginSpec, label: int) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Margin loss with gradients

    Returns:
        (loss, dloss/dprobabilities, dloss/dlogits); in logit space the
        logit gradient is the surrogate through z_ref - z_runner
    """
    y = pred.probabilities
    ell, runner, sign = _margin_terms(y, spec.reference_class(label), spec)
    value, slope = _branch(ell, spec.m)
    direction = np.zeros_like(y)
    direction[spec.reference_class(label)] = sign
    direction[runner] = -sign
    dprob = slope * direction
    if spec.space is MarginSpace.LOGIT:
        dlogits = dprob.copy()
    else:
        dlogits = y * (dprob - float(dprob @ y))
    return value, dprob, dlogits


class MarginHead:
    """Loss head adapter so diffnet can backpropagate the margin loss"""

    def __init__(self, spec: MarginSpec, label: int):
        self.spec = spec
        self.label = int(label)

    def __call__(self, pred: Prediction) -> Tuple[float, np.ndarray]:
        value, _, dlogits = margin_loss_grad(pred, self.spec, self.label)
        return value, dlogits


# ==================== APPLICATION & OBJECTIVE ====================

def _check_trace(dims: Dims, trace: np.ndarray) -> None:
    if trace.shape != (dims.T, dims.C):
        raise ShapeError(f"Perturbation shape {trace.shape} does not match video T×C {(dims.T, dims.C)}")


def perturb_array(x: np.ndarray, trace: np.ndarray, dims: Dims) -> np.ndarray:
    """clamp(x + trace[t, c], v_min, v_max) broadcast over H and W"""
    return np.clip(x + trace[:, None, None, :], dims.v_min, dims.v_max)


def apply_perturbation(v: VideoTensor, delta: Perturbation) -> VideoTensor:
    """
    Add a flicker trace to every pixel of each frame and clip to range

    Args:
        v: Clean clip
        delta: Per-frame RGB offsets

    Returns:
        Perturbed clip
    """
    trace = _trace(delta)
    _check_trace(v.dims, trace)
    return VideoTensor(v.dims, perturb_array(v.data, trace, v.dims))


def _clip_objective(args) -> Tuple[float, np.ndarray]:
    params, x, label, trace, tau, spec = args
    dims = params.dims
    shifted = roll(trace, tau)
    raw = x + shifted[:, None, None, :]
    clipped = np.clip(raw, dims.v_min, dims.v_max)
    loss, _, dx = value_and_grad_input(params, clipped, MarginHead(spec, label))
    inside = (raw >= dims.v_min) & (raw <= dims.v_max)
    grad_shifted = np.sum(dx * inside, axis=(1, 2))
    # adjoint of roll(., tau) is roll(., -tau)
    return loss, roll(grad_shifted, -tau)


def objective(delta: Union[Perturbation, np.ndarray], batch: Sequence[LabeledVideo],
              params: ModelParams, weights: RegWeights, spec: MarginSpec,
              tau_per_clip: Optional[Sequence[int]] = None,
              n_jobs: int = 1) -> Tuple[float, np.ndarray]:
    """
    Regularized attack objective and its exact gradient w.r.t. delta

    Args:
        delta: Current perturbation
        batch: Clips with their true labels
        params: Attacked model
        weights: Regularization weights
        spec: Margin loss settings
        tau_per_clip: Cyclic shift applied to delta for each clip (0 if None)
        n_jobs: joblib workers for the per-clip terms

    Returns:
        (loss, T×C gradient)
    """
    batch = list(batch)
    if not batch:
        raise ValidationError("Objective needs a non-empty batch")
    trace = _trace(delta)
    _check_trace(params.dims, trace)
    for clip in batch:
        check_same_dims(params.dims, clip.dims, f"clip {clip.clip_id}")
    if tau_per_clip is None:
        tau_per_clip = [0] * len(batch)
    if len(tau_per_clip) != len(batch):
        raise ValidationError(f"Got {len(tau_per_clip)} shifts for {len(batch)} clips")

    taus = [int(t) % params.dims.T for t in tau_per_clip]
    keys = [content_key(clip.video.data, clip.label) + tau.to_bytes(4, 'little')
            for clip, tau in zip(batch, taus)]
    order = sorted(range(len(batch)), key=lambda i: keys[i])
    items = [(params, batch[i].video.data, batch[i].label, trace, taus[i], spec) for i in order]
    results = parallel_map(_clip_objective, items, n_jobs)

    data_loss = 0.0
    data_grad = np.zeros_like(trace)
    for loss, grad in results:
        data_loss += loss
        data_grad += grad
    n = float(len(batch))
    reg_value, reg_grad = regularization(trace, weights)
    return reg_value + data_loss / n, reg_grad + data_grad / n


def project_linf(delta: Perturbation, zeta: float) -> Perturbation:
    """Clamp every element of delta to [-zeta, zeta]"""
    if not np.isfinite(zeta) or zeta <= 0:
        raise ValidationError(f"l-inf budget must be > 0 (got {zeta})")
    return delta.with_trace(np.clip(delta.trace, -zeta, zeta))


# ==================== METRICS ====================

def metric_thickness(delta: Union[Perturbation, np.ndarray]) -> float:
    """Mean absolute per-pixel perturbation, in gray levels"""
    trace = _trace(delta)
    return float(np.sum(np.abs(trace)) / trace.size)


def metric_roughness(delta: Union[Perturbation, np.ndarray]) -> float:
    """Mean absolute temporal difference, in gray levels"""
    trace = _trace(delta)
    return float(np.sum(np.abs(temporal_diff1(trace))) / trace.size)


def to_percent(value: float, dims: Dims) -> float:
    return float(value) / dims.span * 100.0


def percent_to_linf(pct: float, dims: Dims) -> float:
    """Budget in percent of the intensity range -> absolute amplitude"""
    return float(pct) / 100.0 * dims.span


def linf_to_percent(zeta: float, dims: Dims) -> float:
    return to_percent(zeta, dims)


def metrics_report(delta: Perturbation) -> MetricsReport:
    dims = delta.dims
    return MetricsReport(
        thickness_pct=to_percent(metric_thickness(delta), dims),
        roughness_pct=to_percent(metric_roughness(delta), dims),
        linf_pct=to_percent(delta.linf, dims),
    )


# ==================== FOOLING RATIO ====================

def _is_fooled(args) -> bool:
    params, x, label, trace = args
    return forward(params, perturb_array(x, trace, params.dims)).top_class != label


def fooled_flags(params: ModelParams, eval_set: Sequence[LabeledVideo], trace: np.ndarray,
                  taus: Sequence[int], n_jobs: int) -> np.ndarray:
    items = [(params, clip.video.data, clip.label, roll(trace, tau)) for clip, tau in zip(eval_set, taus)]
    return np.asarray(parallel_map(_is_fooled, items, n_jobs), dtype=bool)


def _check_eval(params: ModelParams, eval_set: Sequence[LabeledVideo], trace: np.ndarray) -> None:
    if not eval_set:
        raise ValidationError("Evaluation set is empty")
    _check_trace(params.dims, trace)
    for clip in eval_set:
        check_same_dims(params.dims, clip.dims, f"clip {clip.clip_id}")


def fooling_ratio_per_shift(params: ModelParams, eval_set: Sequence[LabeledVideo],
                            delta: Perturbation, n_jobs: int = 1) -> np.ndarray:
    """Fooling ratio for every cyclic shift tau = 0..T-1"""
    eval_set = list(eval_set)
    trace = _trace(delta)
    _check_eval(params, eval_set, trace)
    T = params.dims.T
    return np.array([fooled_flags(params, eval_set, trace, [tau] * len(eval_set), n_jobs).mean()
                     for tau in range(T)])


def fooling_ratio(params: ModelParams, eval_set: Sequence[LabeledVideo], delta: Perturbation,
                  tau_mode: Union[str, TauMode] = TauMode.SYNCHRONIZED,
                  seed: Optional[int] = None, n_jobs: int = 1) -> float:
    """
    Fraction of clips misclassified once the perturbation is applied

    The caller is expected to pass only clips the model gets right when clean.

    Args:
        params: Attacked model
        eval_set: Clean-correct clips
        delta: Perturbation
        tau_mode: synchronized (tau = 0), random (one tau per clip from seed)
            or sweep-all (mean over every tau)
        seed: Seed for random mode
        n_jobs: joblib workers

    Returns:
        Fooling ratio in [0, 1]
    """
    eval_set = list(eval_set)
    trace = _trace(delta)
    _check_eval(params, eval_set, trace)
    tau_mode = TauMode(tau_mode)
    T = params.dims.T

    if tau_mode is TauMode.SWEEP_ALL:
        return float(np.mean(fooling_ratio_per_shift(params, eval_set, delta, n_jobs)))
    if tau_mode is TauMode.RANDOM:
        if seed is None:
            raise ValidationError("Random tau mode needs a seed")
        taus = [int(make_rng(seed, RNG_TAU, index).integers(T)) for index in range(len(eval_set))]
    else:
        taus = [0] * len(eval_set)
    return float(fooled_flags(params, eval_set, trace, taus, n_jobs).mean())
