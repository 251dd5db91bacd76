"""
Unit tests for the differentiable video classifier
"""
import pytest
import numpy as np

from conftest import central_difference, kink_margin, random_clip
from modules.diffnet import (Architecture, CrossEntropyHead, LAYOUTS, LogitSumHead, ModelParams,
                             PARAM_ORDER, Prediction, expected_shapes, forward, grad_input,
                             grad_params, init_params, predict_batch, run_forward,
                             value_and_grad_input, zero_params)
from modules.exceptions import ShapeError, ValidationError


def conv_oracle(x, weight, bias, spec):
    """Straight loop-nest 3D convolution"""
    pt, ph, pw = spec.padding
    xp = np.pad(x, ((pt, pt), (ph, ph), (pw, pw), (0, 0)))
    kt, kh, kw = spec.kernel
    st, sh, sw = spec.stride
    to, ho, wo = spec.output_shape(*x.shape[:3])
    kernel = weight.transpose(0, 2, 3, 4, 1)  # (Cout, kt, kh, kw, Cin)
    out = np.zeros((to, ho, wo, spec.cout))
    for t in range(to):
        for h in range(ho):
            for w in range(wo):
                window = xp[t * st:t * st + kt, h * sh:h * sh + kh, w * sw:w * sw + kw, :]
                for co in range(spec.cout):
                    out[t, h, w, co] = bias[co] + np.sum(window * kernel[co])
    return out


def forward_oracle(params, x):
    conv1, conv2 = LAYOUTS[params.variant]
    t = params.tensors
    a = np.maximum(conv_oracle(x, t['conv1.weight'], t['conv1.bias'], conv1), 0.0)
    a = np.maximum(conv_oracle(a, t['conv2.weight'], t['conv2.bias'], conv2), 0.0)
    return t['fc.weight'] @ a.mean(axis=(0, 1, 2)) + t['fc.bias']


def smooth_instance(params, dims, seed, label=0):
    """A random clip whose ReLU inputs all stay clear of the kink"""
    for attempt in range(20):
        clip = random_clip(dims, np.random.default_rng(seed + attempt), label)
        if kink_margin(params, clip.video.data) > 1e-4:
            return clip
    pytest.skip("no kink-free instance found")


class TestForward:
    """Forward pass against a loop-nest oracle"""

    @pytest.fixture(autouse=True)
    def setup(self, small_dims):
        self.dims = small_dims

    @pytest.mark.parametrize("variant", ["A", "B"])
    def test_matches_loop_oracle(self, variant, rng):
        params = init_params(variant, self.dims, 4, seed=11)
        params = params.replace({name: value + (0.05 if name.endswith('.bias') else 0.0)
                                 for name, value in params.tensors.items()})
        x = rng.uniform(-1.0, 1.0, size=self.dims.shape)
        np.testing.assert_allclose(run_forward(params, x), forward_oracle(params, x),
                                   rtol=1e-10, atol=1e-12)

    def test_zero_params_uniform_output(self, tiny_dataset):
        params = zero_params("A", self.dims, 3)
        pred = forward(params, tiny_dataset[0].video)
        np.testing.assert_allclose(pred.probabilities, np.full(3, 1.0 / 3.0))
        assert pred.top_class == 0

    def test_argmax_tie_lowest_index(self):
        pred = Prediction.from_logits(np.array([1.0, 1.0, 0.0]))
        assert pred.top_class == 0

    def test_wrong_input_shape(self, model_a):
        with pytest.raises(ShapeError):
            forward(model_a, np.zeros((6, 8, 9, 3)))

    def test_params_shape_checked(self):
        shapes = expected_shapes(Architecture.A, 3)
        tensors = {name: np.zeros(shape) for name, shape in shapes.items()}
        tensors['fc.bias'] = np.zeros(4)
        with pytest.raises(ShapeError):
            ModelParams(Architecture.A, self.dims, 3, tensors)

    def test_params_need_two_classes(self):
        with pytest.raises(ValidationError):
            zero_params("A", self.dims, 1)

    def test_init_is_seeded(self):
        assert init_params("B", self.dims, 3, seed=5) == init_params("B", self.dims, 3, seed=5)
        assert init_params("B", self.dims, 3, seed=5) != init_params("B", self.dims, 3, seed=6)

    def test_predict_batch_independent_of_workers(self, model_a, tiny_dataset):
        serial = predict_batch(model_a, tiny_dataset, n_jobs=1)
        parallel = predict_batch(model_a, tiny_dataset, n_jobs=2)
        np.testing.assert_array_equal(serial, parallel)


class TestInputGradient:
    """Reverse mode w.r.t. the input against central differences"""

    @pytest.fixture(autouse=True)
    def setup(self, small_dims):
        self.dims = small_dims

    @pytest.mark.parametrize("variant", ["A", "B"])
    def test_logit_sum_head(self, variant):
        params = init_params(variant, self.dims, 3, seed=2)
        clip = smooth_instance(params, self.dims, seed=100)
        head = LogitSumHead([0.3, -1.2, 0.7])
        analytic = grad_input(params, clip.video, head)
        indices = np.random.default_rng(7).choice(analytic.size, size=40, replace=False)
        numeric = central_difference(lambda x: head(forward(params, x))[0], clip.video.data,
                                     indices=indices)
        np.testing.assert_allclose(analytic.reshape(-1)[indices], numeric.reshape(-1)[indices],
                                   rtol=1e-5, atol=1e-9)

    def test_cross_entropy_head(self, model_a):
        clip = smooth_instance(model_a, self.dims, seed=200, label=2)
        head = CrossEntropyHead(2)
        loss, pred, analytic = value_and_grad_input(model_a, clip.video, head)
        assert loss == pytest.approx(-np.log(pred.probabilities[2]), rel=1e-12)
        indices = np.random.default_rng(8).choice(analytic.size, size=40, replace=False)
        numeric = central_difference(lambda x: head(forward(model_a, x))[0], clip.video.data,
                                     indices=indices)
        np.testing.assert_allclose(analytic.reshape(-1)[indices], numeric.reshape(-1)[indices],
                                   rtol=1e-5, atol=1e-9)


class TestParameterGradient:
    """Reverse mode w.r.t. the weights"""

    @pytest.fixture(autouse=True)
    def setup(self, small_dims, model_a):
        self.dims = small_dims
        self.params = model_a

    def test_matches_finite_differences(self):
        clips = [smooth_instance(self.params, self.dims, seed=300, label=1),
                 smooth_instance(self.params, self.dims, seed=400, label=2)]
        _, grads = grad_params(self.params, clips)
        for name in PARAM_ORDER:
            base = self.params.tensors[name]
            index = np.random.default_rng(len(name)).integers(base.size)

            def loss_at(value, name=name):
                tensors = dict(self.params.tensors)
                tensors[name] = value
                return grad_params(self.params.replace(tensors), clips)[0]

            numeric = central_difference(loss_at, base, indices=[index])
            assert grads[name].reshape(-1)[index] == pytest.approx(numeric.reshape(-1)[index],
                                                                   rel=1e-5, abs=1e-9)

    def test_random_weights_match_finite_differences(self):
        clips = [smooth_instance(self.params, self.dims, seed=700, label=0),
                 smooth_instance(self.params, self.dims, seed=800, label=2)]
        _, grads = grad_params(self.params, clips)
        sizes = np.array([self.params.tensors[name].size for name in PARAM_ORDER], dtype=np.float64)
        rng = np.random.default_rng(25)
        for name in rng.choice(PARAM_ORDER, size=25, p=sizes / sizes.sum()):
            base = self.params.tensors[name]
            index = int(rng.integers(base.size))

            def loss_at(value, name=name):
                tensors = dict(self.params.tensors)
                tensors[name] = value
                return grad_params(self.params.replace(tensors), clips)[0]

            numeric = central_difference(loss_at, base, indices=[index])
            assert grads[name].reshape(-1)[index] == pytest.approx(numeric.reshape(-1)[index],
                                                                   rel=1e-5, abs=1e-9)

    def test_duplicated_clip_is_a_plain_mean(self, tiny_dataset):
        clip = tiny_dataset[0]
        loss_one, grads_one = grad_params(self.params, [clip])
        loss_two, grads_two = grad_params(self.params, [clip, clip])
        assert loss_two == pytest.approx(loss_one, rel=1e-12)
        for name in PARAM_ORDER:
            np.testing.assert_allclose(grads_two[name], grads_one[name], rtol=1e-12, atol=1e-15)

    def test_batch_order_does_not_change_bits(self, tiny_dataset):
        loss_a, grads_a = grad_params(self.params, tiny_dataset)
        loss_b, grads_b = grad_params(self.params, list(reversed(tiny_dataset)), n_jobs=2)
        assert loss_a == loss_b
        for name in PARAM_ORDER:
            np.testing.assert_array_equal(grads_a[name], grads_b[name])

    def test_empty_batch(self):
        with pytest.raises(ValidationError):
            grad_params(self.params, [])
