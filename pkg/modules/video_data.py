"""
🎞️ Video Containers
Clip, label and flicker perturbation value types
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from modules.exceptions import ShapeError, ValidationError

CHANNELS = 3


@dataclass(frozen=True)
class Dims:
    """Clip geometry and intensity range"""

    T: int = 16
    H: int = 32
    W: int = 32
    C: int = CHANNELS
    v_min: float = -1.0
    v_max: float = 1.0

    def __post_init__(self):
        if int(self.T) < 2:
            raise ValidationError(f"T must be >= 2 (got {self.T})")
        if int(self.H) < 1 or int(self.W) < 1:
            raise ValidationError(f"H and W must be >= 1 (got {self.H}x{self.W})")
        if int(self.C) != CHANNELS:
            raise ValidationError(f"C must be {CHANNELS} (got {self.C})")
        if not (np.isfinite(self.v_min) and np.isfinite(self.v_max)) or not self.v_min < self.v_max:
            raise ValidationError(f"Need v_min < v_max (got {self.v_min}, {self.v_max})")

    @property
    def shape(self):
        return (self.T, self.H, self.W, self.C)

    @property
    def span(self) -> float:
        return float(self.v_max - self.v_min)

    def same_input(self, other: "Dims") -> bool:
        """True when clips of both geometries are interchangeable model inputs"""
        return self.shape == other.shape and self.v_min == other.v_min and self.v_max == other.v_max

    def to_dict(self) -> Dict[str, Any]:
        return {'T': self.T, 'H': self.H, 'W': self.W, 'C': self.C,
                'v_min': float(self.v_min), 'v_max': float(self.v_max)}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Dims":
        return cls(T=int(payload['T']), H=int(payload['H']), W=int(payload['W']),
                   C=int(payload.get('C', CHANNELS)),
                   v_min=float(payload['v_min']), v_max=float(payload['v_max']))


@dataclass(frozen=True)
class VideoTensor:
    """T×H×W×C clip whose every element lies in [v_min, v_max]"""

    dims: Dims
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != self.dims.shape:
            raise ShapeError(f"Video data shape {data.shape} does not match dims {self.dims.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("Video data contains non-finite values")
        if data.min() < self.dims.v_min or data.max() > self.dims.v_max:
            raise ValidationError(
                f"Video data outside [{self.dims.v_min}, {self.dims.v_max}] "
                f"(min {data.min()}, max {data.max()})"
            )
        object.__setattr__(self, 'data', data)

    def __eq__(self, other):
        if not isinstance(other, VideoTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class LabeledVideo:
    """Clip with its ground-truth class and optional render provenance"""

    video: VideoTensor
    label: int
    clip_id: str = ""
    render_params: Optional[Dict[str, Any]] = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.label) < 0:
            raise ValidationError(f"Label must be non-negative (got {self.label})")

    @property
    def dims(self) -> Dims:
        return self.video.dims

    def check_label(self, num_classes: int) -> None:
        if not 0 <= self.label < num_classes:
            raise ValidationError(f"Label {self.label} outside [0, {num_classes})")


@dataclass(frozen=True)
class Perturbation:
    """Spatially uniform per-frame RGB offsets, a T×3 trace"""

    dims: Dims
    trace: np.ndarray

    def __post_init__(self):
        trace = np.asarray(self.trace, dtype=np.float64)
        if trace.shape != (self.dims.T, self.dims.C):
            raise ShapeError(f"Trace shape {trace.shape} does not match ({self.dims.T}, {self.dims.C})")
        if not np.all(np.isfinite(trace)):
            raise ValidationError("Perturbation trace contains non-finite values")
        object.__setattr__(self, 'trace', trace)

    @classmethod
    def zeros(cls, dims: Dims) -> "Perturbation":
        return cls(dims, np.zeros((dims.T, dims.C)))

    def with_trace(self, trace: np.ndarray) -> "Perturbation":
        return Perturbation(self.dims, trace)

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.trace)))

    def __eq__(self, other):
        if not isinstance(other, Perturbation):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.trace, other.trace)

    __hash__ = None


def check_same_dims(expected: Dims, actual: Dims, what: str = "input") -> None:
    """Raise ShapeError if two geometries differ"""
    if not expected.same_input(actual):
        raise ShapeError(f"{what} dims {actual.to_dict()} do not match {expected.to_dict()}")
