"""
🧠 Differentiable Video Classifier
Small 3D-convolutional classifier with exact reverse-mode gradients.

Reverse mode runs over a recorded tape whose vocabulary is fixed:
conv3d, ReLU, global mean pool and affine. Loss heads (cross-entropy,
logit sum, the attack margin loss) turn a Prediction into a scalar and its
gradient w.r.t. the logits, which seeds the tape.

Parameter layout (also the checkpoint record order):
    conv1.weight (Cout, Cin, kt, kh, kw), conv1.bias (Cout,)
    conv2.weight (Cout, Cin, kt, kh, kw), conv2.bias (Cout,)
    fc.weight (K, F), fc.bias (K,)

ReLU's derivative at exactly 0 is 0 and argmax ties resolve to the lowest
index. This is an RGB-only toy model: there is no optical-flow stream.
"""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from modules.exceptions import ShapeError, ValidationError
from modules.utils import make_rng, parallel_map, RNG_MODEL_INIT
from modules.video_data import Dims, LabeledVideo, VideoTensor

logger = logging.getLogger(__name__)


class Architecture(str, Enum):
    """Available classifier variants"""
    A = "A"
    B = "B"

    @property
    def code(self) -> int:
        return 1 if self is Architecture.A else 2

    @classmethod
    def from_code(cls, code: int) -> "Architecture":
        for arch in cls:
            if arch.code == code:
                return arch
        raise ValidationError(f"Unknown architecture id {code}")


@dataclass(frozen=True)
class ConvSpec:
    cin: int
    cout: int
    kernel: Tuple[int, int, int]
    stride: Tuple[int, int, int]
    padding: Tuple[int, int, int]

    def output_shape(self, t: int, h: int, w: int) -> Tuple[int, int, int]:
        sizes = []
        for n, k, s, p in zip((t, h, w), self.kernel, self.stride, self.padding):
            sizes.append((n + 2 * p - k) // s + 1)
        return tuple(sizes)


# Variant B differs in kernel footprint, width and temporal stride so the two
# models disagree on inputs (needed for transfer experiments).
LAYOUTS: Dict[Architecture, Tuple[ConvSpec, ConvSpec]] = {
    Architecture.A: (
        ConvSpec(3, 8, (3, 3, 3), (1, 1, 1), (1, 1, 1)),
        ConvSpec(8, 16, (3, 3, 3), (1, 2, 2), (1, 1, 1)),
    ),
    Architecture.B: (
        ConvSpec(3, 12, (3, 5, 5), (1, 1, 1), (1, 2, 2)),
        ConvSpec(12, 12, (3, 3, 3), (2, 2, 2), (1, 1, 1)),
    ),
}

PARAM_ORDER = ('conv1.weight', 'conv1.bias', 'conv2.weight', 'conv2.bias', 'fc.weight', 'fc.bias')


def expected_shapes(variant: Architecture, num_classes: int) -> Dict[str, Tuple[int, ...]]:
    conv1, conv2 = LAYOUTS[variant]
    return {
        'conv1.weight': (conv1.cout, conv1.cin) + conv1.kernel,
        'conv1.bias': (conv1.cout,),
        'conv2.weight': (conv2.cout, conv2.cin) + conv2.kernel,
        'conv2.bias': (conv2.cout,),
        'fc.weight': (num_classes, conv2.cout),
        'fc.bias': (num_classes,),
    }


@dataclass(frozen=True)
class ModelParams:
    """Weights θ of the classifier F_θ"""

    variant: Architecture
    dims: Dims
    num_classes: int
    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        variant = Architecture(self.variant)
        object.__setattr__(self, 'variant', variant)
        if int(self.num_classes) < 2:
            raise ValidationError(f"num_classes must be >= 2 (got {self.num_classes})")
        shapes = expected_shapes(variant, self.num_classes)
        if set(self.tensors) != set(shapes):
            raise ValidationError(f"Parameter names {sorted(self.tensors)} do not match {sorted(shapes)}")
        clean = {}
        for name in PARAM_ORDER:
            array = np.asarray(self.tensors[name], dtype=np.float64)
            if array.shape != shapes[name]:
                raise ShapeError(f"{name} has shape {array.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(array)):
                raise ValidationError(f"{name} contains non-finite values")
            clean[name] = array
        conv1, conv2 = LAYOUTS[variant]
        shape = conv2.output_shape(*conv1.output_shape(self.dims.T, self.dims.H, self.dims.W))
        if min(shape) < 1:
            raise ShapeError(f"Input {self.dims.shape} too small for variant {variant.value}")
        object.__setattr__(self, 'tensors', clean)

    def replace(self, tensors: Dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.variant, self.dims, self.num_classes, tensors)

    def copy(self) -> "ModelParams":
        return self.replace({k: v.copy() for k, v in self.tensors.items()})

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.variant == other.variant and self.dims == other.dims
                and self.num_classes == other.num_classes
                and all(np.array_equal(self.tensors[k], other.tensors[k]) for k in PARAM_ORDER))

    __hash__ = None


@dataclass(frozen=True)
class Prediction:
    """Classifier output for one clip"""

    logits: np.ndarray
    probabilities: np.ndarray
    top_class: int

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "Prediction":
        logits = np.asarray(logits, dtype=np.float64)
        probabilities = softmax(logits)
        return cls(logits, probabilities, int(np.argmax(probabilities)))


# ==================== LAYERS ====================

class Conv3D:
    """3D convolution over (T, H, W, C) via im2col"""

    def __init__(self, name: str, spec: ConvSpec):
        self.name = name
        self.spec = spec

    def forward(self, x: np.ndarray, params: ModelParams):
        spec = self.spec
        weight = params.tensors[f'{self.name}.weight']
        bias = params.tensors[f'{self.name}.bias']
        pt, ph, pw = spec.padding
        xp = np.pad(x, ((pt, pt), (ph, ph), (pw, pw), (0, 0)))
        st, sh, sw = spec.stride
        windows = sliding_window_view(xp, spec.kernel, axis=(0, 1, 2))[::st, ::sh, ::sw]
        out_shape = windows.shape[:3]
        cols = windows.reshape(int(np.prod(out_shape)), -1)
        y = cols @ weight.reshape(spec.cout, -1).T + bias
        return y.reshape(out_shape + (spec.cout,)), (x.shape, xp.shape, cols, out_shape)

    def backward(self, dy: np.ndarray, cache, params: ModelParams, need_params: bool = True):
        spec = self.spec
        x_shape, xp_shape, cols, out_shape = cache
        weight = params.tensors[f'{self.name}.weight']
        dy_flat = dy.reshape(-1, spec.cout)
        grads = {}
        if need_params:
            grads[f'{self.name}.weight'] = (dy_flat.T @ cols).reshape(weight.shape)
            grads[f'{self.name}.bias'] = dy_flat.sum(axis=0)

        dcols = (dy_flat @ weight.reshape(spec.cout, -1)).reshape(out_shape + (spec.cin,) + spec.kernel)
        dxp = np.zeros(xp_shape)
        st, sh, sw = spec.stride
        to, ho, wo = out_shape
        kt, kh, kw = spec.kernel
        for i in range(kt):
            for j in range(kh):
                for k in range(kw):
                    dxp[i:i + st * (to - 1) + 1:st,
                        j:j + sh * (ho - 1) + 1:sh,
                        k:k + sw * (wo - 1) + 1:sw, :] += dcols[..., i, j, k]
        pt, ph, pw = spec.padding
        t, h, w, _ = x_shape
        return dxp[pt:pt + t, ph:ph + h, pw:pw + w, :], grads


class ReLU:
    name = 'relu'

    def forward(self, x: np.ndarray, params: ModelParams):
        return np.maximum(x, 0.0), x

    def backward(self, dy: np.ndarray, cache, params: ModelParams, need_params: bool = True):
        return dy * (cache > 0), {}


class GlobalMeanPool:
    name = 'pool'

    def forward(self, x: np.ndarray, params: ModelParams):
        return x.mean(axis=(0, 1, 2)), x.shape

    def backward(self, dy: np.ndarray, cache, params: ModelParams, need_params: bool = True):
        count = cache[0] * cache[1] * cache[2]
        return np.broadcast_to(dy / count, cache).copy(), {}


class Affine:
    def __init__(self, name: str):
        self.name = name

    def forward(self, x: np.ndarray, params: ModelParams):
        weight = params.tensors[f'{self.name}.weight']
        bias = params.tensors[f'{self.name}.bias']
        return weight @ x + bias, x

    def backward(self, dy: np.ndarray, cache, params: ModelParams, need_params: bool = True):
        weight = params.tensors[f'{self.name}.weight']
        grads = {}
        if need_params:
            grads[f'{self.name}.weight'] = np.outer(dy, cache)
            grads[f'{self.name}.bias'] = dy.copy()
        return weight.T @ dy, grads


def build_layers(variant: Architecture) -> List:
    conv1, conv2 = LAYOUTS[Architecture(variant)]
    return [Conv3D('conv1', conv1), ReLU(), Conv3D('conv2', conv2), ReLU(),
            GlobalMeanPool(), Affine('fc')]


class Tape:
    """Records (layer, cache) pairs during forward and replays them backwards"""

    def __init__(self):
        self.records: List[Tuple[object, object]] = []

    def record(self, layer, cache) -> None:
        self.records.append((layer, cache))

    def backward(self, seed: np.ndarray, params: ModelParams,
                 need_params: bool = True) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        grad = seed
        grads: Dict[str, np.ndarray] = {}
        for layer, cache in reversed(self.records):
            grad, layer_grads = layer.backward(grad, cache, params, need_params)
            grads.update(layer_grads)
        return grad, grads

    def preactivations(self) -> List[np.ndarray]:
        """Inputs seen by every ReLU (used to steer finite differences off kinks)"""
        return [cache for layer, cache in self.records if isinstance(layer, ReLU)]


_LAYER_CACHE: Dict[Architecture, List] = {}


def _layers(variant: Architecture) -> List:
    if variant not in _LAYER_CACHE:
        _LAYER_CACHE[variant] = build_layers(variant)
    return _LAYER_CACHE[variant]


def _as_array(params: ModelParams, v: Union[VideoTensor, np.ndarray]) -> np.ndarray:
    if isinstance(v, VideoTensor):
        if not params.dims.same_input(v.dims):
            raise ShapeError(f"Video dims {v.dims.to_dict()} do not match model dims {params.dims.to_dict()}")
        return v.data
    array = np.asarray(v, dtype=np.float64)
    if array.shape != params.dims.shape:
        raise ShapeError(f"Input shape {array.shape} does not match model input {params.dims.shape}")
    return array


def run_forward(params: ModelParams, x: np.ndarray, tape: Optional[Tape] = None) -> np.ndarray:
    """Forward pass to logits, optionally recording onto a tape"""
    activation = x
    for layer in _layers(params.variant):
        activation, cache = layer.forward(activation, params)
        if tape is not None:
            tape.record(layer, cache)
    return activation


def forward(params: ModelParams, v: Union[VideoTensor, np.ndarray]) -> Prediction:
    """
    Classify one clip

    Args:
        params: Model weights
        v: Clip matching params.dims

    Returns:
        Prediction with logits, softmax probabilities and top class
    """
    return Prediction.from_logits(run_forward(params, _as_array(params, v)))


# ==================== LOSS HEADS ====================

LossHead = Callable[[Prediction], Tuple[float, np.ndarray]]


class CrossEntropyHead:
    """-log p_label"""

    def __init__(self, label: int):
        self.label = int(label)

    def __call__(self, pred: Prediction) -> Tuple[float, np.ndarray]:
        loss = -float(log_softmax(pred.logits)[self.label])
        dlogits = pred.probabilities.copy()
        dlogits[self.label] -= 1.0
        return loss, dlogits


class LogitSumHead:
    """Weighted sum of logits (all ones by default)"""

    def __init__(self, weights: Optional[Sequence[float]] = None):
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)

    def __call__(self, pred: Prediction) -> Tuple[float, np.ndarray]:
        weights = np.ones_like(pred.logits) if self.weights is None else self.weights
        return float(weights @ pred.logits), weights.copy()


def value_and_grad_input(params: ModelParams, v: Union[VideoTensor, np.ndarray],
                         head: LossHead) -> Tuple[float, Prediction, np.ndarray]:
    """
    Loss, prediction and input gradient in one pass

    Returns:
        (loss, prediction, dloss/dinput with shape T×H×W×C)
    """
    x = _as_array(params, v)
    tape = Tape()
    pred = Prediction.from_logits(run_forward(params, x, tape))
    loss, dlogits = head(pred)
    dx, _ = tape.backward(np.asarray(dlogits, dtype=np.float64), params, need_params=False)
    return loss, pred, dx


def grad_input(params: ModelParams, v: Union[VideoTensor, np.ndarray], head: LossHead) -> np.ndarray:
    """
    Exact gradient of head(forward(v)) w.r.t. every input element

    Args:
        params: Model weights
        v: Clip
        head: Loss head mapping a Prediction to (loss, dloss/dlogits)

    Returns:
        T×H×W×C gradient
    """
    return value_and_grad_input(params, v, head)[2]


def _clip_grads(args) -> Tuple[float, Dict[str, np.ndarray]]:
    params, x, head = args
    tape = Tape()
    pred = Prediction.from_logits(run_forward(params, x, tape))
    loss, dlogits = head(pred)
    _, grads = tape.backward(np.asarray(dlogits, dtype=np.float64), params, need_params=True)
    return loss, grads


def content_key(x: np.ndarray, label: int) -> bytes:
    """Order-independent key used to fix the reduction order of a batch"""
    return hashlib.sha1(np.ascontiguousarray(x).tobytes()).digest() + int(label).to_bytes(4, 'little')


def grad_params(params: ModelParams, batch: Sequence[LabeledVideo],
                loss_spec: Callable[[LabeledVideo], LossHead] = None,
                n_jobs: int = 1) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean loss and mean parameter gradient over a batch

    Per-clip terms are summed in an order fixed by clip content, so batch
    order and worker count never change a bit of the result.

    Args:
        params: Model weights
        batch: Labelled clips
        loss_spec: Clip -> loss head (cross-entropy on the clip label by default)
        n_jobs: joblib workers for the per-clip fan-out

    Returns:
        (mean loss, {name: gradient})
    """
    if not batch:
        raise ValidationError("Batch must not be empty")
    loss_spec = loss_spec or (lambda clip: CrossEntropyHead(clip.label))
    items = [(params, _as_array(params, clip.video), loss_spec(clip)) for clip in batch]
    order = sorted(range(len(batch)), key=lambda i: content_key(items[i][1], batch[i].label))
    results = parallel_map(_clip_grads, [items[i] for i in order], n_jobs)

    total_loss = 0.0
    totals = {name: np.zeros_like(params.tensors[name]) for name in PARAM_ORDER}
    for loss, grads in results:
        total_loss += loss
        for name in PARAM_ORDER:
            totals[name] += grads[name]
    n = float(len(batch))
    return total_loss / n, {name: totals[name] / n for name in PARAM_ORDER}


def _top_class(args) -> int:
    params, video = args
    return forward(params, video).top_class


def predict_batch(params: ModelParams, clips: Sequence[LabeledVideo], n_jobs: int = 1) -> np.ndarray:
    """Top class of every clip"""
    preds = parallel_map(_top_class, [(params, clip.video) for clip in clips], n_jobs)
    return np.asarray(preds, dtype=np.int64)


# ==================== CONSTRUCTION ====================

def init_params(variant: Union[str, Architecture], dims: Dims, num_classes: int, seed: int) -> ModelParams:
    """
    He-initialised weights, zero biases

    Args:
        variant: Architecture A or B
        dims: Input geometry
        num_classes: K
        seed: Global seed

    Returns:
        Fresh ModelParams
    """
    variant = Architecture(variant)
    rng = make_rng(seed, RNG_MODEL_INIT, variant.code)
    tensors = {}
    for name, shape in expected_shapes(variant, num_classes).items():
        if name.endswith('.bias'):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            gain = 2.0 if name.startswith('conv') else 1.0
            tensors[name] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
    return ModelParams(variant, dims, num_classes, tensors)


def zero_params(variant: Union[str, Architecture], dims: Dims, num_classes: int) -> ModelParams:
    """All-zero weights: uniform probabilities, argmax class 0"""
    variant = Architecture(variant)
    tensors = {name: np.zeros(shape) for name, shape in expected_shapes(variant, num_classes).items()}
    return ModelParams(variant, dims, num_classes, tensors)
