"""
🎯 Flickering Attack Driver
Adam optimization of flicker perturbations for single clips, single classes
and universal (optionally time-invariant) attacks, plus evaluation,
transfer and campaign helpers.
"""

import base64
import logging
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from modules.attack_core import (MarginSpec, RegWeights, TauMode, fooled_flags, margin_loss,
                                 metrics_report, objective, percent_to_linf, perturb_array,
                                 project_linf, regularization, roll)
from modules.checkpoint_io import checkpoint_fingerprint
from modules.diffnet import ModelParams, forward
from modules.exceptions import OptimizationError, ValidationError
from modules.optimizers import Adam
from modules.utils import (make_rng, parallel_map, read_json, write_json,
                           RNG_ATTACK, RNG_TAU)
from modules.video_data import Dims, LabeledVideo, Perturbation, check_same_dims

PathLike = Union[str, Path]


class AttackMode(str, Enum):
    SINGLE_VIDEO = "single_video"
    SINGLE_CLASS = "single_class"
    UNIVERSAL = "universal"


@dataclass
class AttackConfig:
    """
    Settings of one attack run

    batch_size defaults to 1 for single-video attacks and 8 otherwise.
    zeta is an absolute l-inf budget (None = unconstrained). patience stops
    after that many consecutive evaluations at fooling ratio 1.0.
    select_on_margin ranks checkpoints by the share of clips whose margin
    loss is zero instead of the share merely misclassified.
    """

    mode: AttackMode = AttackMode.UNIVERSAL
    target_class: Optional[int] = None
    time_invariant: bool = False
    margin: MarginSpec = field(default_factory=MarginSpec)
    weights: RegWeights = field(default_factory=RegWeights)
    zeta: Optional[float] = None
    iterations: int = 1000
    batch_size: Optional[int] = None
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 10
    patience: Optional[int] = None
    select_on_margin: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        self.mode = AttackMode(self.mode)
        if isinstance(self.margin, dict):
            self.margin = MarginSpec.from_dict(self.margin)
        if isinstance(self.weights, dict):
            self.weights = RegWeights.from_dict(self.weights)
        if self.batch_size is None:
            self.batch_size = 1 if self.mode is AttackMode.SINGLE_VIDEO else 8
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1 (got {self.iterations})")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1 (got {self.batch_size})")
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0 (got {self.learning_rate})")
        if self.zeta is not None and (not np.isfinite(self.zeta) or self.zeta <= 0):
            raise ValidationError(f"zeta must be > 0 when set (got {self.zeta})")
        if self.eval_every < 1:
            raise ValidationError(f"eval_every must be >= 1 (got {self.eval_every})")
        if self.patience is not None and self.patience < 1:
            raise ValidationError(f"patience must be >= 1 when set (got {self.patience})")

    def to_dict(self) -> Dict[str, Any]:
        payload = {f.name: getattr(self, f.name) for f in fields(self) if f.name != 'n_jobs'}
        payload['mode'] = self.mode.value
        payload['margin'] = self.margin.to_dict()
        payload['weights'] = self.weights.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (payload or {}).items() if k in known})


@dataclass
class AttackResult:
    """Best perturbation found plus the evaluation trace of the run"""

    delta: Perturbation
    history: List[Dict[str, float]]
    config: Dict[str, Any]
    model_fingerprint: str
    best_iteration: int = 0
    stopped_iteration: int = 0

    @property
    def best(self) -> Dict[str, float]:
        for record in self.history:
            if record['iteration'] == self.best_iteration:
                return record
        return self.history[-1]

    def to_dict(self, delta_file: Optional[str] = None) -> Dict[str, Any]:
        encoded = base64.b64encode(np.ascontiguousarray(self.delta.trace, dtype='<f8').tobytes())
        return {
            'schema_version': 1,
            'dims': self.delta.dims.to_dict(),
            'delta_b64': encoded.decode('ascii'),
            'delta_file': delta_file,
            'history': self.history,
            'config': self.config,
            'model_fingerprint': self.model_fingerprint,
            'best_iteration': self.best_iteration,
            'stopped_iteration': self.stopped_iteration,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "AttackResult":
        dims = Dims.from_dict(payload['dims'])
        raw = base64.b64decode(payload['delta_b64'])
        trace = np.frombuffer(raw, dtype='<f8').astype(np.float64).reshape(dims.T, dims.C)
        return cls(delta=Perturbation(dims, trace), history=list(payload['history']),
                   config=dict(payload['config']), model_fingerprint=payload['model_fingerprint'],
                   best_iteration=int(payload.get('best_iteration', 0)),
                   stopped_iteration=int(payload.get('stopped_iteration', 0)))

    def to_json(self, path: PathLike, delta_file: Optional[str] = None) -> Path:
        return write_json(path, self.to_dict(delta_file))

    @classmethod
    def from_json(cls, path: PathLike) -> "AttackResult":
        return cls.from_dict(read_json(path))


@dataclass
class EvalReport:
    """Fooling ratio and perturbation size over an evaluation set"""

    fooling_ratio: float
    thickness_pct: float
    roughness_pct: float
    linf_pct: float
    tau_mode: str
    size: int
    per_class: Dict[int, float] = field(default_factory=dict)
    shift_std: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.fooling_ratio <= 1.0:
            raise ValidationError(f"fooling_ratio out of range: {self.fooling_ratio}")
        if self.size < 1:
            raise ValidationError("EvalReport needs at least one clip")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'fooling_ratio': self.fooling_ratio,
            'thickness_pct': self.thickness_pct,
            'roughness_pct': self.roughness_pct,
            'linf_pct': self.linf_pct,
            'tau_mode': self.tau_mode,
            'size': self.size,
            'per_class': {str(k): v for k, v in sorted(self.per_class.items())},
            'shift_std': self.shift_std,
        }


@dataclass
class CampaignSummary:
    """Mean and spread over independent attacks (per clip or per class)"""

    fooling_ratio: float
    fooling_std: float
    thickness_mean: float
    thickness_std: float
    roughness_mean: float
    roughness_std: float
    count: int
    items: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in ('fooling_ratio', 'fooling_std', 'thickness_mean',
                                              'thickness_std', 'roughness_mean', 'roughness_std',
                                              'count', 'items')}


# ==================== EVALUATION ====================

def _probe(args) -> Tuple[int, float, float, float]:
    params, x, label, trace, spec = args
    pred = forward(params, perturb_array(x, trace, params.dims))
    return (pred.top_class, float(pred.probabilities[pred.top_class]),
            float(pred.probabilities[label]), margin_loss(pred, spec, label))


def _eval_taus(data: Sequence[LabeledVideo], cfg: AttackConfig) -> List[int]:
    """Fixed shifts used at every checkpoint so checkpoints compare like for like"""
    if not cfg.time_invariant:
        return [0] * len(data)
    T = data[0].dims.T
    return [int(make_rng(cfg.seed, RNG_TAU, 0, index).integers(T)) for index in range(len(data))]


def evaluate(params: ModelParams, eval_set: Sequence[LabeledVideo], delta: Perturbation,
             tau_mode: Union[str, TauMode] = TauMode.SYNCHRONIZED,
             seed: Optional[int] = None, n_jobs: int = 1) -> EvalReport:
    """
    Fooling ratio with per-class breakdown and perturbation metrics

    Args:
        params: Model under attack
        eval_set: Clean-correct clips
        delta: Perturbation
        tau_mode: synchronized, random or sweep-all
        seed: Seed for random mode
        n_jobs: joblib workers

    Returns:
        EvalReport
    """
    eval_set = list(eval_set)
    if not eval_set:
        raise ValidationError("Evaluation set is empty")
    check_same_dims(params.dims, delta.dims, "perturbation")
    tau_mode = TauMode(tau_mode)
    T = params.dims.T
    labels = np.array([clip.label for clip in eval_set])

    shift_std = None
    if tau_mode is TauMode.SWEEP_ALL:
        flags = np.stack([fooled_flags(params, eval_set, delta.trace, [tau] * len(eval_set), n_jobs)
                          for tau in range(T)])
        per_shift = flags.mean(axis=1)
        shift_std = float(per_shift.std())
        per_clip = flags.mean(axis=0)
    else:
        if tau_mode is TauMode.RANDOM:
            if seed is None:
                raise ValidationError("Random tau mode needs a seed")
            taus = [int(make_rng(seed, RNG_TAU, index).integers(T)) for index in range(len(eval_set))]
        else:
            taus = [0] * len(eval_set)
        per_clip = fooled_flags(params, eval_set, delta.trace, taus, n_jobs).astype(np.float64)

    per_class = {int(k): float(per_clip[labels == k].mean()) for k in np.unique(labels)}
    metrics = metrics_report(delta)
    return EvalReport(fooling_ratio=float(per_clip.mean()), thickness_pct=metrics.thickness_pct,
                      roughness_pct=metrics.roughness_pct, linf_pct=metrics.linf_pct,
                      tau_mode=tau_mode.value, size=len(eval_set), per_class=per_class,
                      shift_std=shift_std)


def transfer_eval(delta: Perturbation, model_b: ModelParams, eval_set: Sequence[LabeledVideo],
                  tau_mode: Union[str, TauMode] = TauMode.SYNCHRONIZED,
                  seed: Optional[int] = None, n_jobs: int = 1) -> EvalReport:
    """Evaluate a perturbation developed on one model against another"""
    if not model_b.dims.same_input(delta.dims):
        raise ValidationError(f"Perturbation dims {delta.dims.to_dict()} are not compatible "
                              f"with model input {model_b.dims.to_dict()}")
    return evaluate(model_b, eval_set, delta, tau_mode, seed, n_jobs)


# ==================== OPTIMIZATION ====================

class FlickeringAttack:
    """
    Runs the flicker optimization loop

    Each call owns a fresh Adam state; the instance itself only holds
    configuration and the attacked model.
    """

    def __init__(self, params: ModelParams, config: Dict[str, Any] = None):
        """
        Initialize attack

        Args:
            params: Model to attack
            config: Full configuration dictionary (reads 'attack')
        """
        self.params = params
        self.config = config.get('attack', {}) if config else {}
        self.logger = logging.getLogger(__name__)
        self.fingerprint = checkpoint_fingerprint(params)

    def default_config(self) -> AttackConfig:
        """AttackConfig from the 'attack' section; linf_pct becomes an absolute zeta"""
        section = dict(self.config)
        pct = section.pop('linf_pct', None)
        if pct is not None and section.get('zeta') is None:
            section['zeta'] = percent_to_linf(pct, self.params.dims)
        return AttackConfig.from_dict(section)

    def _prepare(self, data: Sequence[LabeledVideo], cfg: AttackConfig) -> List[LabeledVideo]:
        data = list(data)
        for clip in data:
            check_same_dims(self.params.dims, clip.dims, f"clip {clip.clip_id}")
            clip.check_label(self.params.num_classes)
        if cfg.mode is AttackMode.SINGLE_CLASS and cfg.target_class is not None:
            data = [clip for clip in data if clip.label == cfg.target_class]
            if not data:
                raise ValidationError(f"No clips of class {cfg.target_class} to attack")
        if not data:
            raise ValidationError("Attack needs at least one clip")
        if cfg.mode is AttackMode.SINGLE_VIDEO and len(data) != 1:
            raise ValidationError(f"single_video mode takes exactly one clip (got {len(data)})")
        if cfg.mode is AttackMode.SINGLE_CLASS and len({clip.label for clip in data}) != 1:
            raise ValidationError("single_class mode needs clips of a single label")
        if cfg.margin.target is not None and int(cfg.margin.target) >= self.params.num_classes:
            raise ValidationError(f"Target class {cfg.margin.target} outside [0, {self.params.num_classes})")
        return data

    def _checkpoint(self, iteration: int, batch_loss: Optional[float], trace: np.ndarray, data: List[LabeledVideo],
                    taus: List[int], cfg: AttackConfig) -> Dict[str, float]:
        items = [(self.params, clip.video.data, clip.label, roll(trace, tau), cfg.margin)
                 for clip, tau in zip(data, taus)]
        probes = parallel_map(_probe, items, cfg.n_jobs)
        fooled = np.array([top != clip.label for (top, _, _, _), clip in zip(probes, data)])
        margin_met = np.array([loss <= 0.0 for (_, _, _, loss) in probes])
        metrics = metrics_report(Perturbation(self.params.dims, trace))
        data_loss = float(np.mean([p[3] for p in probes]))
        reg_value, _ = regularization(trace, cfg.weights)
        return {
            'iteration': iteration,
            'loss': reg_value + data_loss,
            'batch_loss': reg_value + data_loss if batch_loss is None else float(batch_loss),
            'data_loss': data_loss,
            'top_probability': float(np.mean([p[1] for p in probes])),
            'original_probability': float(np.mean([p[2] for p in probes])),
            'thickness_pct': metrics.thickness_pct,
            'roughness_pct': metrics.roughness_pct,
            'linf_pct': metrics.linf_pct,
            'fooling_ratio': float(fooled.mean()),
            'margin_ratio': float(margin_met.mean()),
        }

    def _batches(self, n: int, cfg: AttackConfig):
        """Endless epoch-shuffled index batches"""
        epoch = 0
        while True:
            order = make_rng(cfg.seed, RNG_ATTACK, epoch).permutation(n) if n > 1 else np.zeros(1, dtype=int)
            for start in range(0, n, cfg.batch_size):
                yield order[start:start + cfg.batch_size]
            epoch += 1

    def attack(self, data: Sequence[LabeledVideo], cfg: Optional[AttackConfig] = None) -> AttackResult:
        """
        Optimize a flicker perturbation

        Args:
            data: Clips to attack (one clip for single_video)
            cfg: Attack settings (defaults to the 'attack' config section)

        Returns:
            AttackResult holding the best checkpoint
        """
        if cfg is None:
            cfg = self.default_config()
        data = self._prepare(data, cfg)
        dims = self.params.dims
        T = dims.T
        trace = np.zeros((T, dims.C))
        optimizer = Adam({'delta': trace.shape}, lr=cfg.learning_rate,
                         beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        eval_taus = _eval_taus(data, cfg)

        self.logger.info(f"Attack {cfg.mode.value} on {len(data)} clips "
                         f"(iterations={cfg.iterations}, lr={cfg.learning_rate}, "
                         f"time_invariant={cfg.time_invariant}, zeta={cfg.zeta})")

        key = 'margin_ratio' if cfg.select_on_margin else 'fooling_ratio'
        history = [self._checkpoint(0, None, trace, data, eval_taus, cfg)]
        best_trace, best = trace.copy(), history[0]
        streak = 1 if best[key] == 1.0 else 0
        batches = self._batches(len(data), cfg)
        iteration = 0

        for iteration in range(1, cfg.iterations + 1):
            indices = next(batches)
            batch = [data[i] for i in indices]
            taus = None
            if cfg.time_invariant:
                taus = make_rng(cfg.seed, RNG_TAU, 1, iteration).integers(1, T + 1, size=len(batch)).tolist()
            loss, grad = objective(trace, batch, self.params, cfg.weights, cfg.margin, taus, cfg.n_jobs)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                self.logger.error(f"Non-finite attack loss at iteration {iteration}")
                raise OptimizationError("Attack objective became non-finite", iteration)
            trace = optimizer.step({'delta': trace}, {'delta': grad})['delta']
            if cfg.zeta is not None:
                trace = np.clip(trace, -cfg.zeta, cfg.zeta)

            if iteration % cfg.eval_every == 0 or iteration == cfg.iterations:
                record = self._checkpoint(iteration, loss, trace, data, eval_taus, cfg)
                history.append(record)
                self.logger.debug(f"iter {iteration}: loss {loss:.5f}, fooling {record['fooling_ratio']:.3f}, "
                                  f"thickness {record['thickness_pct']:.3f}%")
                if (record[key] > best[key]
                        or (record[key] == best[key] and record['thickness_pct'] < best['thickness_pct'])):
                    best_trace, best = trace.copy(), record
                streak = streak + 1 if record[key] == 1.0 else 0
                if cfg.patience is not None and streak >= cfg.patience:
                    self.logger.info(f"Early stop at iteration {iteration} ({key} 1.0 held)")
                    break

        delta = Perturbation(dims, best_trace)
        if cfg.zeta is not None:
            delta = project_linf(delta, cfg.zeta)
        self.logger.info(f"Best checkpoint at iteration {best['iteration']}: "
                         f"fooling {best['fooling_ratio']:.3f}, thickness {best['thickness_pct']:.3f}%, "
                         f"roughness {best['roughness_pct']:.3f}%")
        return AttackResult(delta=delta, history=history, config=cfg.to_dict(),
                            model_fingerprint=self.fingerprint,
                            best_iteration=int(best['iteration']), stopped_iteration=iteration)


def attack(params: ModelParams, data: Sequence[LabeledVideo], cfg: AttackConfig) -> AttackResult:
    return FlickeringAttack(params).attack(data, cfg)


# ==================== CAMPAIGNS ====================

def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std())


def _single_clip_task(args) -> AttackResult:
    params, clip, cfg = args
    return FlickeringAttack(params).attack([clip], cfg)


def single_video_attacks(params: ModelParams, clips: Sequence[LabeledVideo],
                         cfg: AttackConfig, n_jobs: int = 1) -> List[AttackResult]:
    """
    Independent single-video attacks, one per clip

    Each clip gets its own seed derived from (cfg.seed, clip index), so the
    results do not depend on n_jobs.

    Args:
        params: Model under attack
        clips: Clean-correct clips
        cfg: Attack settings (mode forced to single_video)
        n_jobs: Parallel attacks

    Returns:
        One AttackResult per clip, in clip order
    """
    clips = list(clips)
    if not clips:
        raise ValidationError("Campaign needs at least one clip")
    tasks = []
    for index, clip in enumerate(clips):
        seed = int(make_rng(cfg.seed, RNG_ATTACK, 1, index).integers(2 ** 62))
        tasks.append((params, clip, replace(cfg, mode=AttackMode.SINGLE_VIDEO, batch_size=1,
                                            seed=seed, n_jobs=1)))
    return parallel_map(_single_clip_task, tasks, n_jobs)


def summarize_single_video(clips: Sequence[LabeledVideo], results: Sequence[AttackResult]) -> CampaignSummary:
    """Aggregate per-clip attack results into the single-video table row"""
    items = []
    for clip, result in zip(clips, results):
        best = result.best
        items.append({'clip_id': clip.clip_id, 'label': clip.label, 'fooled': best['fooling_ratio'] == 1.0,
                      'thickness_pct': best['thickness_pct'], 'roughness_pct': best['roughness_pct'],
                      'linf_pct': best['linf_pct'], 'best_iteration': result.best_iteration})
    if not items:
        raise ValidationError("Campaign needs at least one clip")
    fooled = [1.0 if item['fooled'] else 0.0 for item in items]
    thickness = _mean_std([item['thickness_pct'] for item in items])
    roughness = _mean_std([item['roughness_pct'] for item in items])
    logging.getLogger(__name__).info(f"Single-video campaign: {int(sum(fooled))}/{len(items)} fooled")
    return CampaignSummary(fooling_ratio=float(np.mean(fooled)), fooling_std=0.0,
                           thickness_mean=thickness[0], thickness_std=thickness[1],
                           roughness_mean=roughness[0], roughness_std=roughness[1],
                           count=len(items), items=items)


def single_video_campaign(params: ModelParams, clips: Sequence[LabeledVideo],
                          cfg: AttackConfig, n_jobs: int = 1) -> CampaignSummary:
    """Per-clip attacks summarized as mean thickness/roughness and the fooled fraction"""
    clips = list(clips)
    return summarize_single_video(clips, single_video_attacks(params, clips, cfg, n_jobs))


def class_campaign(params: ModelParams, train_set: Sequence[LabeledVideo],
                   eval_set: Sequence[LabeledVideo], cfg: AttackConfig) -> CampaignSummary:
    """
    One single-class attack per class, scored on that class's held-out clips

    Classes with no training or no evaluation clips are skipped.
    """
    logger = logging.getLogger(__name__)
    items = []
    classes = sorted({clip.label for clip in train_set})
    for label in classes:
        held_out = [clip for clip in eval_set if clip.label == label]
        if not held_out:
            logger.warning(f"Class {label} has no evaluation clips; skipped")
            continue
        class_cfg = replace(cfg, mode=AttackMode.SINGLE_CLASS, target_class=label,
                            seed=int(make_rng(cfg.seed, RNG_ATTACK, 2, label).integers(2 ** 62)))
        result = FlickeringAttack(params).attack(train_set, class_cfg)
        report = evaluate(params, held_out, result.delta, n_jobs=cfg.n_jobs)
        items.append({'label': label, 'fooling_ratio': report.fooling_ratio,
                      'thickness_pct': report.thickness_pct, 'roughness_pct': report.roughness_pct,
                      'linf_pct': report.linf_pct, 'eval_size': report.size})
    if not items:
        raise ValidationError("No class had both training and evaluation clips")
    fooling = _mean_std([item['fooling_ratio'] for item in items])
    thickness = _mean_std([item['thickness_pct'] for item in items])
    roughness = _mean_std([item['roughness_pct'] for item in items])
    return CampaignSummary(fooling_ratio=fooling[0], fooling_std=fooling[1],
                           thickness_mean=thickness[0], thickness_std=thickness[1],
                           roughness_mean=roughness[0], roughness_std=roughness[1],
                           count=len(items), items=items)


def beta_sweep(params: ModelParams, clip: LabeledVideo, cfg: AttackConfig,
               beta1_values: Optional[Sequence[float]] = None) -> List[Dict[str, Any]]:
    """
    Thickness/roughness trade-off: single-video attacks with beta2 = 1 - beta1

    Args:
        params: Model under attack
        clip: Clip to attack
        cfg: Base attack settings
        beta1_values: beta1 grid (1 -> 0 in steps of 0.1 by default)

    Returns:
        One row per beta1 with the resulting thickness and roughness
    """
    if beta1_values is None:
        beta1_values = np.round(np.linspace(1.0, 0.0, 11), 10)
    rows = []
    for beta1 in beta1_values:
        beta1 = float(beta1)
        weights = RegWeights(lam=cfg.weights.lam, beta1=beta1, beta2=1.0 - beta1)
        result = FlickeringAttack(params).attack(
            [clip], replace(cfg, mode=AttackMode.SINGLE_VIDEO, batch_size=1, weights=weights))
        best = result.best
        rows.append({'beta1': beta1, 'beta2': 1.0 - beta1,
                     'thickness_pct': best['thickness_pct'], 'roughness_pct': best['roughness_pct'],
                     'fooled': best['fooling_ratio'] == 1.0})
    return rows
