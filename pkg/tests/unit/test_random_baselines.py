"""
Unit tests for random flicker baselines
"""
import pytest
import numpy as np

from modules.random_baselines import BaselineKind, make_baseline
from modules.video_data import Dims, Perturbation


class TestBaselines:

    @pytest.fixture(autouse=True)
    def setup(self, rng):
        self.ref = Perturbation(Dims(T=8), rng.uniform(-0.2, 0.3, size=(8, 3)))
        self.low = self.ref.trace.min()
        self.high = self.ref.trace.max()

    def test_uniform_stays_in_range(self):
        out = make_baseline("uniform", self.ref, seed=1)
        assert out.trace.min() >= self.low
        assert out.trace.max() <= self.high

    def test_minmax_takes_extremes(self):
        out = make_baseline("minmax", self.ref, seed=1)
        assert set(np.unique(out.trace)) <= {self.low, self.high}

    def test_shuffle_is_permutation(self):
        out = make_baseline("shuffle", self.ref, seed=1)
        np.testing.assert_array_equal(np.sort(out.trace.ravel()), np.sort(self.ref.trace.ravel()))

    @pytest.mark.parametrize("kind", [k.value for k in BaselineKind])
    def test_seeded(self, kind):
        assert make_baseline(kind, self.ref, seed=3) == make_baseline(kind, self.ref, seed=3)
        assert make_baseline(kind, self.ref, seed=3) != make_baseline(kind, self.ref, seed=4)

    def test_constant_reference(self):
        ref = Perturbation(Dims(T=4), np.full((4, 3), 0.1))
        for kind in BaselineKind:
            np.testing.assert_allclose(make_baseline(kind.value, ref, seed=0).trace, 0.1)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_baseline("gaussian", self.ref, seed=0)
