"""
🎬 Synthetic Motion Videos
Deterministic motion-defined clip generator used in place of a real action dataset.

Every class is defined by *how* something moves, never by its colour or
brightness, so a perturbation that only acts along time is a meaningful attack.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, List, Tuple

import numpy as np

from modules.exceptions import ValidationError
from modules.utils import make_rng, RNG_DATASET, RNG_EVAL_SPLIT, RNG_REJITTER
from modules.video_data import Dims, LabeledVideo, VideoTensor

logger = logging.getLogger(__name__)


class MotionClass(IntEnum):
    """Motion catalogue, in label order"""
    SQUARE_RIGHT = 0
    SQUARE_LEFT = 1
    HAND_CLOCKWISE = 2
    HAND_COUNTER_CLOCKWISE = 3
    DISC_EXPANDING = 4
    DISC_CONTRACTING = 5
    RAMP_UP = 6
    RAMP_DOWN = 7


MAX_CLASSES = len(MotionClass)


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Everything that determines a generated dataset"""

    dims: Dims = field(default_factory=Dims)
    num_classes: int = 6
    clips_per_class: int = 20
    noise_sigma: float = 0.05
    seed: int = 7

    def __post_init__(self):
        if not 2 <= int(self.num_classes) <= MAX_CLASSES:
            raise ValidationError(f"num_classes must be in [2, {MAX_CLASSES}] (got {self.num_classes})")
        if int(self.clips_per_class) < 1:
            raise ValidationError(f"clips_per_class must be >= 1 (got {self.clips_per_class})")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0 (got {self.noise_sigma})")

    def to_dict(self) -> Dict[str, Any]:
        return {'dims': self.dims.to_dict(), 'num_classes': self.num_classes,
                'clips_per_class': self.clips_per_class,
                'noise_sigma': float(self.noise_sigma), 'seed': int(self.seed)}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SyntheticDatasetSpec":
        return cls(dims=Dims.from_dict(payload['dims']),
                   num_classes=int(payload['num_classes']),
                   clips_per_class=int(payload['clips_per_class']),
                   noise_sigma=float(payload['noise_sigma']),
                   seed=int(payload['seed']))


class MotionRenderer:
    """Samples per-clip motion parameters and renders clips from them"""

    def __init__(self, dims: Dims):
        self.dims = dims
        self.scale = min(dims.H, dims.W) / 32.0
        yy, xx = np.mgrid[0:dims.H, 0:dims.W]
        self._xx = xx + 0.5
        self._yy = yy + 0.5
        self._t = np.arange(dims.T, dtype=np.float64)

    # ------------------------------------------------------------------
    # Parameter sampling
    # ------------------------------------------------------------------
    def sample_params(self, motion: int, rng: np.random.Generator) -> Dict[str, Any]:
        """
        Draw the randomised nuisance parameters of one clip

        Args:
            motion: Class index in the motion catalogue
            rng: Clip generator

        Returns:
            JSON-friendly parameter dictionary understood by render()
        """
        d, s = self.dims, self.scale
        span = d.span
        background = d.v_min + span * rng.uniform(0.15, 0.35)
        tint = span * rng.uniform(-0.03, 0.03, size=3)
        foreground = d.v_min + span * rng.uniform(0.7, 0.9, size=3)
        params: Dict[str, Any] = {
            'motion': int(motion),
            'background': [float(background + t) for t in tint],
            'foreground': [float(v) for v in foreground],
        }

        motion = MotionClass(motion)
        if motion in (MotionClass.SQUARE_RIGHT, MotionClass.SQUARE_LEFT):
            side = 8.0 * s
            params.update({
                'side': side,
                'x0': float(rng.uniform(0.0, d.W)),
                'yc': float(rng.uniform(min(side / 2, d.H / 2), max(d.H - side / 2, d.H / 2))),
                'speed': float(rng.uniform(0.75, 1.5) * s),
                'direction': 1.0 if motion == MotionClass.SQUARE_RIGHT else -1.0,
            })
        elif motion in (MotionClass.HAND_CLOCKWISE, MotionClass.HAND_COUNTER_CLOCKWISE):
            params.update({
                'cx': float(d.W / 2 + rng.uniform(-2.0, 2.0) * s),
                'cy': float(d.H / 2 + rng.uniform(-2.0, 2.0) * s),
                'length': 11.0 * s,
                'width': 2.0 * s,
                'tip_radius': 2.0 * s,
                'theta0': float(rng.uniform(0.0, 2 * np.pi)),
                'omega': float(rng.uniform(0.10, 0.16)),
                'direction': 1.0 if motion == MotionClass.HAND_CLOCKWISE else -1.0,
            })
        elif motion in (MotionClass.DISC_EXPANDING, MotionClass.DISC_CONTRACTING):
            params.update({
                'cx': float(d.W / 2 + rng.uniform(-3.0, 3.0) * s),
                'cy': float(d.H / 2 + rng.uniform(-3.0, 3.0) * s),
                'r0': float(rng.uniform(2.5, 4.5) * s),
                'rate': float(rng.uniform(0.35, 0.55) * s),
                'direction': 1.0 if motion == MotionClass.DISC_EXPANDING else -1.0,
            })
        else:
            side = 10.0 * s
            params.update({
                'side': side,
                'xc': float(rng.uniform(side / 2, max(d.W - side / 2, side / 2))),
                'yc': float(rng.uniform(side / 2, max(d.H - side / 2, side / 2))),
                'slope': float(rng.uniform(0.02, 0.035) * span),
                'direction': 1.0 if motion == MotionClass.RAMP_UP else -1.0,
            })
        return params

    # ------------------------------------------------------------------
    # Rendering
    # ------------------------------------------------------------------
    def render(self, params: Dict[str, Any]) -> np.ndarray:
        """
        Render a noiseless clip (before float32 rounding)

        Args:
            params: Output of sample_params()

        Returns:
            T×H×W×3 float64 array inside [v_min, v_max]
        """
        motion = MotionClass(params['motion'])
        coverage, gain = self._coverage(motion, params)
        bg = np.asarray(params['background'])
        fg = np.asarray(params['foreground'])
        frames = bg + coverage[..., None] * (fg - bg)
        if gain is not None:
            frames = frames + gain[:, None, None, None]
        return np.clip(frames, self.dims.v_min, self.dims.v_max)

    def _coverage(self, motion: MotionClass, p: Dict[str, Any]) -> Tuple[np.ndarray, Any]:
        d = self.dims
        xx, yy, t = self._xx, self._yy, self._t
        if motion in (MotionClass.SQUARE_RIGHT, MotionClass.SQUARE_LEFT):
            half = p['side'] / 2
            xc = p['x0'] + p['direction'] * p['speed'] * t
            # horizontal distance on a torus so the square wraps around
            dx = np.mod(xx[None] - xc[:, None, None] + d.W / 2, d.W) - d.W / 2
            dy = yy - p['yc']
            cov = (_edge(half - np.abs(dx))
                   * _edge(half - np.abs(dy))[None])
            return cov, None

        if motion in (MotionClass.HAND_CLOCKWISE, MotionClass.HAND_COUNTER_CLOCKWISE):
            theta = p['theta0'] + p['direction'] * p['omega'] * t
            ux, uy = np.sin(theta), -np.cos(theta)
            px = xx[None] - p['cx']
            py = yy[None] - p['cy']
            along = px * ux[:, None, None] + py * uy[:, None, None]
            s = np.clip(along / p['length'], 0.0, 1.0)
            ex = px - s * p['length'] * ux[:, None, None]
            ey = py - s * p['length'] * uy[:, None, None]
            shaft = _edge(p['width'] / 2 - np.hypot(ex, ey)) * (0.45 + 0.55 * s)
            tx = xx[None] - (p['cx'] + p['length'] * ux)[:, None, None]
            ty = yy[None] - (p['cy'] + p['length'] * uy)[:, None, None]
            tip = _edge(p['tip_radius'] - np.hypot(tx, ty))
            return np.maximum(shaft, tip), None

        if motion in (MotionClass.DISC_EXPANDING, MotionClass.DISC_CONTRACTING):
            steps = t if p['direction'] > 0 else (d.T - 1 - t)
            radius = p['r0'] + p['rate'] * steps
            dist = np.hypot(xx - p['cx'], yy - p['cy'])
            return _edge(radius[:, None, None] - dist[None]), None

        half = p['side'] / 2
        cov = _edge(half - np.abs(xx - p['xc'])) * _edge(half - np.abs(yy - p['yc']))
        centred = t - (d.T - 1) / 2
        gain = p['direction'] * p['slope'] * centred
        return np.broadcast_to(cov, (d.T,) + cov.shape), gain


def _edge(signed_distance: np.ndarray) -> np.ndarray:
    """One-pixel linear ramp: 1 inside, 0 outside"""
    return np.clip(signed_distance + 0.5, 0.0, 1.0)


class SyntheticVideoGenerator:
    """Builds datasets of motion clips from a SyntheticDatasetSpec"""

    def __init__(self, spec: SyntheticDatasetSpec):
        self.spec = spec
        self.renderer = MotionRenderer(spec.dims)
        self.logger = logging.getLogger(__name__)

    def make_clip(self, label: int, index: int, tag: int = RNG_DATASET,
                  prefix: str = "train") -> LabeledVideo:
        """Render clip `index` of class `label`; the pair is folded into the seed"""
        rng = make_rng(self.spec.seed, tag, label, index)
        params = self.renderer.sample_params(label, rng)
        clean = self.renderer.render(params)
        return self._finish(clean, params, label, rng, f"{prefix}_k{label}_c{index:04d}")

    def rejitter(self, clip: LabeledVideo, seed: int, index: int = 0) -> LabeledVideo:
        """
        Re-render a clip of the same class with fresh nuisance parameters

        Args:
            clip: Source clip (only its label is used)
            seed: Seed for the new rendering
            index: Variant index

        Returns:
            A "similar scene" of the same motion class
        """
        rng = make_rng(seed, RNG_REJITTER, clip.label, index)
        params = self.renderer.sample_params(clip.label, rng)
        clean = self.renderer.render(params)
        return self._finish(clean, params, clip.label, rng, f"{clip.clip_id}_jitter{index}")

    def _finish(self, clean: np.ndarray, params: Dict[str, Any], label: int,
                rng: np.random.Generator, clip_id: str) -> LabeledVideo:
        dims = self.spec.dims
        frames = clean
        if self.spec.noise_sigma > 0:
            frames = clean + rng.normal(0.0, self.spec.noise_sigma, size=clean.shape)
        frames = quantize(frames, dims)
        return LabeledVideo(VideoTensor(dims, frames), int(label), clip_id, params)

    def generate(self, tag: int = RNG_DATASET, clips_per_class: int = None,
                 prefix: str = "train") -> List[LabeledVideo]:
        count = self.spec.clips_per_class if clips_per_class is None else int(clips_per_class)
        clips = [self.make_clip(k, i, tag, prefix)
                 for k in range(self.spec.num_classes)
                 for i in range(count)]
        self.logger.info(f"Generated {len(clips)} {prefix} clips "
                         f"({self.spec.num_classes} classes x {count})")
        return clips


def generate_dataset(spec: SyntheticDatasetSpec) -> List[LabeledVideo]:
    """
    Generate the clip set described by a spec

    Args:
        spec: Dataset specification

    Returns:
        K·clips_per_class clips ordered by class, then clip index
    """
    return SyntheticVideoGenerator(spec).generate()


def generate_splits(spec: SyntheticDatasetSpec,
                    eval_clips_per_class: int = 10) -> Tuple[List[LabeledVideo], List[LabeledVideo]]:
    """
    Generate a training split and a disjoint evaluation split

    Args:
        spec: Dataset specification (its clips_per_class sizes the training split)
        eval_clips_per_class: Clips per class in the evaluation split

    Returns:
        (train, eval) clip lists
    """
    if int(eval_clips_per_class) < 1:
        raise ValidationError(f"eval_clips_per_class must be >= 1 (got {eval_clips_per_class})")
    generator = SyntheticVideoGenerator(spec)
    train = generator.generate()
    held_out = generator.generate(RNG_EVAL_SPLIT, eval_clips_per_class, prefix="eval")
    return train, held_out


def quantize(frames: np.ndarray, dims: Dims) -> np.ndarray:
    """Clip into range and round to the float32 grid FLKV files store losslessly"""
    frames = np.clip(frames, dims.v_min, dims.v_max)
    return np.clip(frames.astype(np.float32).astype(np.float64), dims.v_min, dims.v_max)
