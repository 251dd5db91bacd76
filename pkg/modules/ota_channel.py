"""
💡 Over-the-Air Channel
Simulates showing a flicker trace through an RGB bulb and recording it with a
camera: chromatic crosstalk, bulb rise time, frame desynchronization, ambient
offset and sensor noise. Includes pulse calibration and precompensation.

Per frame t the camera sees the offset
    u_t = M @ delta_t + b
    s_t = EMA_alpha(u)_t          (cyclic steady state)
    e_t = s_{(t + phase) mod T}
and the recorded clip is clamp(v + e_t + noise).
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from modules.attack_core import roll
from modules.attack_driver import AttackConfig, AttackMode, AttackResult, FlickeringAttack
from modules.diffnet import ModelParams, forward
from modules.exceptions import CalibrationError, ShapeError, ValidationError
from modules.utils import make_rng, read_json, write_json, RNG_CHANNEL_NOISE
from modules.video_data import CHANNELS, Dims, LabeledVideo, Perturbation, VideoTensor, check_same_dims

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAX_CONDITION = 1e6


@dataclass(frozen=True)
class ChannelModel:
    """Bulb -> scene -> camera path"""

    crosstalk: np.ndarray = field(default_factory=lambda: np.eye(CHANNELS))
    rise_alpha: float = 1.0
    phase: int = 0
    ambient: np.ndarray = field(default_factory=lambda: np.zeros(CHANNELS))
    noise_sigma: float = 0.0

    def __post_init__(self):
        crosstalk = np.asarray(self.crosstalk, dtype=np.float64)
        ambient = np.asarray(self.ambient, dtype=np.float64)
        if crosstalk.shape != (CHANNELS, CHANNELS):
            raise ShapeError(f"Crosstalk must be 3x3 (got {crosstalk.shape})")
        if ambient.shape != (CHANNELS,):
            raise ShapeError(f"Ambient offset must have 3 entries (got {ambient.shape})")
        if not (np.all(np.isfinite(crosstalk)) and np.all(np.isfinite(ambient))):
            raise ValidationError("Channel crosstalk and ambient must be finite")
        if not 0.0 < self.rise_alpha <= 1.0:
            raise ValidationError(f"rise_alpha must be in (0, 1] (got {self.rise_alpha})")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0 (got {self.noise_sigma})")
        object.__setattr__(self, 'crosstalk', crosstalk)
        object.__setattr__(self, 'ambient', ambient)
        object.__setattr__(self, 'phase', int(self.phase))

    @classmethod
    def identity(cls) -> "ChannelModel":
        return cls()

    def to_dict(self) -> Dict[str, Any]:
        return {'schema_version': 1, 'crosstalk': self.crosstalk.tolist(),
                'rise_alpha': float(self.rise_alpha), 'phase': self.phase,
                'ambient': self.ambient.tolist(), 'noise_sigma': float(self.noise_sigma)}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ChannelModel":
        payload = payload or {}
        return cls(crosstalk=np.asarray(payload.get('crosstalk', np.eye(CHANNELS)), dtype=np.float64),
                   rise_alpha=float(payload.get('rise_alpha', 1.0)),
                   phase=int(payload.get('phase', 0)),
                   ambient=np.asarray(payload.get('ambient', np.zeros(CHANNELS)), dtype=np.float64),
                   noise_sigma=float(payload.get('noise_sigma', 0.0)))

    def save(self, path: PathLike) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: PathLike) -> "ChannelModel":
        return cls.from_dict(read_json(path))


@dataclass
class CalibrationRecord:
    """A probe trace sent to the bulb and the per-channel camera response"""

    sent: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.sent = np.asarray(self.sent, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=np.float64)
        if self.sent.shape != self.observed.shape or self.sent.ndim != 2 or self.sent.shape[1] != CHANNELS:
            raise ShapeError(f"Calibration traces must be matching T×3 arrays "
                             f"(got {self.sent.shape} and {self.observed.shape})")


@dataclass
class CalibrationResult:
    """Estimated channel with fit diagnostics"""

    channel: ChannelModel
    residual_rms: float
    rank: int


# ==================== CHANNEL ====================

def command_headroom(dims: Dims) -> float:
    """Largest command around the half-maximum bulb baseline"""
    return dims.span / 2.0


def chromatic_stage(trace: np.ndarray, ch: ChannelModel) -> np.ndarray:
    """M @ delta_t + b for every frame"""
    trace = np.asarray(trace, dtype=np.float64)
    if np.array_equal(ch.crosstalk, np.eye(CHANNELS)):
        mixed = trace
    else:
        mixed = trace @ ch.crosstalk.T
    if np.any(ch.ambient):
        mixed = mixed + ch.ambient
    return mixed


def cyclic_ema(u: np.ndarray, alpha: float) -> np.ndarray:
    """
    Steady state of s_t = alpha * u_t + (1 - alpha) * s_{t-1} on a cycle

    s_t = alpha / (1 - (1 - alpha)^T) * sum_k (1 - alpha)^k u_{t-k}
    """
    u = np.asarray(u, dtype=np.float64)
    if alpha == 1.0:
        return u
    T = u.shape[0]
    decay = 1.0 - alpha
    out = np.zeros_like(u)
    for k in range(T):
        out += decay ** k * roll(u, -k)
    return alpha / (1.0 - decay ** T) * out


def effective_offset(delta: Union[Perturbation, np.ndarray], ch: ChannelModel) -> np.ndarray:
    """Noise-free per-frame offset the camera records"""
    trace = delta.trace if isinstance(delta, Perturbation) else np.asarray(delta, dtype=np.float64)
    smoothed = cyclic_ema(chromatic_stage(trace, ch), ch.rise_alpha)
    return roll(smoothed, ch.phase) if ch.phase % trace.shape[0] else smoothed


def transmit(v: VideoTensor, delta: Perturbation, ch: ChannelModel, seed: int = 0) -> VideoTensor:
    """
    Record a clip lit by the flicker trace

    Args:
        v: Scene as the camera would see it without flicker
        delta: Commanded trace
        ch: Channel
        seed: Seed for sensor noise

    Returns:
        Recorded clip, clipped to range
    """
    check_same_dims(v.dims, delta.dims, "perturbation")
    dims = v.dims
    frames = v.data + effective_offset(delta, ch)[:, None, None, :]
    if ch.noise_sigma > 0:
        frames = frames + make_rng(seed, RNG_CHANNEL_NOISE).normal(0.0, ch.noise_sigma, size=frames.shape)
    return VideoTensor(dims, np.clip(frames, dims.v_min, dims.v_max))


# ==================== CALIBRATION ====================

def pulse_probes(T: int, amplitude: float) -> List[np.ndarray]:
    """One rectangular pulse per channel, the other channels held at zero"""
    if T < 2:
        raise ValidationError(f"Probes need T >= 2 (got {T})")
    width = max(1, T // 4)
    probes = []
    for channel in range(CHANNELS):
        probe = np.zeros((T, CHANNELS))
        probe[:width, channel] = amplitude
        probes.append(probe)
    return probes


def simulate_calibration(ch: ChannelModel, probes: Sequence[np.ndarray], seed: int = 0) -> List[CalibrationRecord]:
    """Observe probe traces through a channel; sensor noise averages down to the frame mean"""
    records = []
    for index, probe in enumerate(probes):
        observed = effective_offset(probe, ch)
        if ch.noise_sigma > 0:
            observed = observed + make_rng(seed, RNG_CHANNEL_NOISE, 1, index).normal(
                0.0, ch.noise_sigma, size=observed.shape)
        records.append(CalibrationRecord(np.asarray(probe, dtype=np.float64), observed))
    return records


def _design(records: Sequence[CalibrationRecord], phase: int):
    rows, targets = [], []
    for record in records:
        y = roll(record.observed, -phase)
        previous = roll(y, -1)
        T = y.shape[0]
        for t in range(T):
            for c in range(CHANNELS):
                row = np.zeros(13)
                row[0] = previous[t, c]
                row[1 + 3 * c:4 + 3 * c] = record.sent[t]
                row[10 + c] = 1.0
                rows.append(row)
                targets.append(y[t, c])
    return np.array(rows), np.array(targets)


def calibrate(records: Sequence[CalibrationRecord]) -> CalibrationResult:
    """
    Least-squares channel estimate from probe responses

    The steady-state recurrence y_t = a * y_{t-1} + P @ sent_t + q is linear
    in (a, P, q); alpha = 1 - a, M = P / alpha, b = q / alpha. Every integer
    phase is tried and the best-fitting one kept. A fit with a < 0 (a bulb
    faster than instantaneous) is redone on the boundary a = 0.

    Args:
        records: Probe/response pairs, all of one length

    Returns:
        CalibrationResult with the estimated channel and residual
    """
    records = list(records)
    if not records:
        raise CalibrationError("No calibration records")
    T = records[0].sent.shape[0]
    if any(record.sent.shape[0] != T for record in records):
        raise CalibrationError("Calibration records differ in length")

    best = None
    for phase in range(T):
        A, y = _design(records, phase)
        solution, rank = _fit(A, y)
        residual = float(np.sqrt(np.mean((A @ solution - y) ** 2)))
        if best is None or residual < best[0]:
            best = (residual, phase, solution, rank)

    residual, phase, solution, rank = best
    alpha = 1.0 - solution[0]
    if not 0.0 < alpha <= 1.0:
        raise CalibrationError(f"Estimated rise_alpha {alpha:.6f} outside (0, 1]")
    crosstalk = solution[1:10].reshape(CHANNELS, CHANNELS) / alpha
    ambient = solution[10:13] / alpha
    channel = ChannelModel(crosstalk=crosstalk, rise_alpha=alpha, phase=phase,
                           ambient=ambient, noise_sigma=residual)
    logger.info(f"Calibrated channel: alpha={alpha:.4f}, phase={phase}, residual={residual:.3e}")
    return CalibrationResult(channel=channel, residual_rms=residual, rank=int(rank))


def _fit(A: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, int]:
    """Least squares with the memory coefficient (column 0) held to a >= 0"""
    solution, _, rank, _ = linalg.lstsq(A, y)
    if rank < A.shape[1]:
        raise CalibrationError(f"Probe set is rank deficient (rank {rank} < {A.shape[1]}); "
                               f"pulse every channel")
    if solution[0] < 0.0:
        # convex objective: the constrained optimum lies on a = 0
        bounded, _, _, _ = linalg.lstsq(A[:, 1:], y)
        solution = np.concatenate([[0.0], bounded])
    return solution, int(rank)


def precompensate(delta: Perturbation, ch_estimate: ChannelModel, clip: bool = True) -> Perturbation:
    """
    Command trace whose chromatic stage reproduces delta

    command_t = M^-1 (delta_t - b): the ambient offset b is removed before
    the crosstalk is inverted. Temporal dynamics are not inverted. Commands
    are clipped to the bulb headroom unless clip is False.

    Args:
        delta: Desired camera-side offsets
        ch_estimate: Calibrated channel
        clip: Clip to +/- command_headroom

    Returns:
        Bulb command trace
    """
    crosstalk = ch_estimate.crosstalk
    condition = np.linalg.cond(crosstalk)
    if not np.isfinite(condition) or condition >= MAX_CONDITION:
        raise CalibrationError(f"Crosstalk matrix is ill-conditioned (cond {condition:.3e})")
    command = (delta.trace - ch_estimate.ambient) @ np.linalg.inv(crosstalk).T
    if clip:
        headroom = command_headroom(delta.dims)
        command = np.clip(command, -headroom, headroom)
    return delta.with_trace(command)


# ==================== OTA TRIALS ====================

@dataclass
class OTATrialResult:
    fooled: int
    total: int
    skipped: int
    items: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def fooling_ratio(self) -> float:
        return self.fooled / self.total if self.total else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {'fooled': self.fooled, 'total': self.total, 'skipped': self.skipped,
                'fooling_ratio': self.fooling_ratio, 'items': self.items}


def develop_scene_attack(params: ModelParams, renders: Sequence[LabeledVideo],
                         cfg: AttackConfig) -> AttackResult:
    """
    Develop a flicker over several renderings of one scene

    Runs as a single-class attack with random cyclic shifts, so the result
    tolerates an unknown bulb/camera phase and the nuisance jitter between
    recordings of the same scene.

    Args:
        params: Model under attack
        renders: Recordings of the scene, all of one class
        cfg: Attack settings (mode, class and shifts are forced)

    Returns:
        AttackResult of the development run
    """
    renders = list(renders)
    if not renders:
        raise ValidationError("Scene attack needs at least one rendering")
    cfg = replace(cfg, mode=AttackMode.SINGLE_CLASS, target_class=int(renders[0].label),
                  time_invariant=True, batch_size=min(cfg.batch_size, len(renders)))
    return FlickeringAttack(params).attack(renders, cfg)


def scene_based_trial(params: ModelParams, variants: Sequence[LabeledVideo], delta: Perturbation,
                      ch: ChannelModel, ch_estimate: Optional[ChannelModel] = None,
                      seed: int = 0) -> OTATrialResult:
    """
    Transmit a perturbation developed on one recording into similar scenes

    Variants the model already gets wrong without flicker are skipped.

    Args:
        params: Model under attack
        variants: Re-rendered scenes of the attacked clip's class
        delta: Perturbation developed on recordings of the scene
        ch: True channel
        ch_estimate: Calibrated channel to precompensate with (None sends delta as is)
        seed: Seed for sensor noise

    Returns:
        OTATrialResult over the usable variants
    """
    command = precompensate(delta, ch_estimate) if ch_estimate is not None else delta
    fooled, total, skipped, items = 0, 0, 0, []
    for index, variant in enumerate(variants):
        # the scene as recorded with the bulb at its baseline
        baseline = transmit(variant.video, Perturbation.zeros(variant.dims), ch, seed=int(
            make_rng(seed, RNG_CHANNEL_NOISE, 2, index).integers(2 ** 62)))
        if forward(params, baseline).top_class != variant.label:
            skipped += 1
            continue
        recorded = transmit(variant.video, command, ch, seed=int(
            make_rng(seed, RNG_CHANNEL_NOISE, 3, index).integers(2 ** 62)))
        top = forward(params, recorded).top_class
        total += 1
        fooled += int(top != variant.label)
        items.append({'clip_id': variant.clip_id, 'label': variant.label, 'predicted': top})
    logger.info(f"Scene-based OTA: {fooled}/{total} fooled ({skipped} skipped)")
    return OTATrialResult(fooled=fooled, total=total, skipped=skipped, items=items)


def universal_ota_trial(params: ModelParams, eval_set: Sequence[LabeledVideo], delta: Perturbation,
                        ch: ChannelModel, ch_estimate: Optional[ChannelModel] = None,
                        seed: int = 0) -> OTATrialResult:
    """Universal perturbation shown over the air to every clip of an evaluation set"""
    return scene_based_trial(params, eval_set, delta, ch, ch_estimate, seed)


# ==================== FILES ====================

RECORD_COLUMNS = ['record', 'frame', 'sent_r', 'sent_g', 'sent_b', 'obs_r', 'obs_g', 'obs_b']


def save_calibration_records(path: PathLike, records: Sequence[CalibrationRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for index, record in enumerate(records):
        for frame in range(record.sent.shape[0]):
            rows.append([index, frame, *record.sent[frame], *record.observed[frame]])
    pd.DataFrame(rows, columns=RECORD_COLUMNS).to_csv(path, index=False, float_format='%.17g')
    return path


def load_calibration_records(path: PathLike) -> List[CalibrationRecord]:
    frame = pd.read_csv(path)
    missing = set(RECORD_COLUMNS[1:]) - set(frame.columns)
    if missing:
        raise ValidationError(f"Calibration CSV missing columns {sorted(missing)}")
    if 'record' not in frame.columns:
        frame['record'] = 0
    records = []
    for _, group in frame.groupby('record', sort=True):
        group = group.sort_values('frame')
        records.append(CalibrationRecord(group[['sent_r', 'sent_g', 'sent_b']].to_numpy(),
                                         group[['obs_r', 'obs_g', 'obs_b']].to_numpy()))
    return records
