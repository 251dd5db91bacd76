"""
Unit tests for the Adam optimizer
"""
import pytest
import numpy as np

from modules.exceptions import ValidationError
from modules.optimizers import Adam


class TestAdam:

    @pytest.fixture(autouse=True)
    def setup(self):
        self.adam = Adam({'w': (2,)}, lr=0.1)

    def test_first_step_is_lr_times_sign(self):
        values = {'w': np.array([1.0, -1.0])}
        out = self.adam.step(values, {'w': np.array([3.0, -0.5])})
        np.testing.assert_allclose(out['w'], [0.9, -0.9], rtol=1e-6)
        np.testing.assert_array_equal(values['w'], [1.0, -1.0])

    def test_minimizes_quadratic(self):
        values = {'w': np.array([2.0, -3.0])}
        for _ in range(500):
            values = self.adam.step(values, {'w': 2.0 * values['w']})
        np.testing.assert_allclose(values['w'], 0.0, atol=1e-2)

    def test_zero_lr_keeps_values(self):
        adam = Adam({'w': (2,)}, lr=0.0)
        out = adam.step({'w': np.ones(2)}, {'w': np.ones(2)})
        np.testing.assert_array_equal(out['w'], np.ones(2))

    @pytest.mark.parametrize("kwargs", [{'lr': -1.0}, {'beta1': 1.0}, {'beta2': -0.1}, {'eps': 0.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            Adam({'w': (1,)}, **kwargs)
