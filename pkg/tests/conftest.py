"""
pytest configuration and shared fixtures
"""
import pytest
import numpy as np
import sys
from pathlib import Path

# Add project root to path
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from modules.utils import load_config
from modules.video_data import Dims, LabeledVideo, VideoTensor
from modules.synthetic_videos import SyntheticDatasetSpec, generate_dataset
from modules.diffnet import Tape, init_params, run_forward


@pytest.fixture(scope="session")
def config():
    """Load the project configuration for tests"""
    return load_config(str(PROJECT_ROOT / "config.yaml"))


@pytest.fixture(scope="session")
def small_dims():
    """Geometry small enough for exhaustive gradient checks"""
    return Dims(T=6, H=8, W=8)


@pytest.fixture(scope="session")
def tiny_spec(small_dims):
    return SyntheticDatasetSpec(dims=small_dims, num_classes=3, clips_per_class=2,
                                noise_sigma=0.0, seed=3)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    """Six noiseless clips, two per class"""
    return generate_dataset(tiny_spec)


@pytest.fixture(scope="session")
def model_a(small_dims):
    """Untrained variant A model for three classes"""
    return init_params("A", small_dims, 3, seed=0)


@pytest.fixture(scope="function")
def rng():
    return np.random.default_rng(1234)


def random_clip(dims, rng, label=0, low=-0.5, high=0.5, clip_id="rand"):
    """Clip with values well inside the range so small offsets never clamp"""
    data = rng.uniform(low, high, size=dims.shape)
    return LabeledVideo(VideoTensor(dims, data), label, clip_id)


def central_difference(func, x, eps=1e-6, indices=None):
    """
    Central finite differences of a scalar function

    Args:
        func: array -> float
        x: Point
        eps: Step
        indices: Flat indices to probe (all when None)

    Returns:
        Array shaped like x with the probed partials (zeros elsewhere)
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    probe = range(x.size) if indices is None else indices
    for index in probe:
        step = np.zeros(x.size)
        step[index] = eps
        step = step.reshape(x.shape)
        flat[index] = (func(x + step) - func(x - step)) / (2.0 * eps)
    return grad


def kink_margin(params, x):
    """Smallest |pre-activation| seen by any ReLU for input x"""
    tape = Tape()
    run_forward(params, x, tape)
    return min(float(np.min(np.abs(pre))) for pre in tape.preactivations())
