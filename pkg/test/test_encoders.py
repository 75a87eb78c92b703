import numpy as np
import pytest

from marginal_correspondence.config import ExperimentConfig
from marginal_correspondence.encoders import (
    AdamState,
    EncoderParams,
    ModelParams,
    adam_step,
    encode,
    init_params,
)
from marginal_correspondence.errors import DimensionError, DivergenceError
from marginal_correspondence.feature_core import Tape, mul, sum_all

SMALL = ExperimentConfig(image_size=16, encoder_channels=(4, 4, 4), scm_dim=3)


class TestInit:
    def test_same_seed_same_params(self):
        a = init_params(SMALL, 3).named_tensors()
        b = init_params(SMALL, 3).named_tensors()
        assert list(a) == list(b)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_different_seed_differs(self):
        a = init_params(SMALL, 3).named_tensors()
        b = init_params(SMALL, 4).named_tensors()
        assert not np.array_equal(a["ex.0.kernel"], b["ex.0.kernel"])

    def test_tensor_names_and_shapes(self):
        params = init_params(SMALL.with_overrides(scm=True), 1)
        named = params.named_tensors()
        assert named["ex.0.kernel"].shape == (3, 3, 3, 4)
        assert named["ez.2.bias"].shape == (4,)
        assert named["scm_x.weight"].shape == (16, 3)
        assert named["scm_z.bias"].shape == (3,)
        assert not init_params(SMALL, 1).uses_scm

    def test_kaiming_bounds(self):
        kernel = init_params(SMALL, 1).condition.kernels[0]
        assert np.all(np.abs(kernel) <= np.sqrt(6.0 / (3 * 3 * 3)))

    def test_from_named_round_trip_infers_scm(self):
        params = init_params(SMALL.with_overrides(scm=True), 2)
        copy = ModelParams.from_named(params.named_tensors(), SMALL.encoder_strides, SMALL.leaky_slope)
        assert copy.uses_scm
        np.testing.assert_array_equal(copy.scm_image.weight, params.scm_image.weight)

    def test_missing_tensor(self):
        named = init_params(SMALL, 1).named_tensors()
        del named["ez.1.bias"]
        with pytest.raises(DimensionError):
            ModelParams.from_named(named, SMALL.encoder_strides, SMALL.leaky_slope)


class TestEncode:
    def test_output_grid_and_unit_rows(self):
        params = init_params(SMALL, 1)
        image = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
        grid = encode(params.condition, image, Tape())
        assert (grid.height, grid.width, grid.channels) == (4, 4, 4)
        np.testing.assert_allclose(np.linalg.norm(grid.values, axis=1), 1.0, atol=1e-12)

    def test_gradients_reach_every_layer(self):
        params = init_params(SMALL, 1)
        image = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
        tape = Tape()
        grid = encode(params.image, image, tape)
        weights = np.random.default_rng(2).standard_normal(grid.values.shape)
        grads = tape.backward(sum_all(mul(grid.tensor, tape.constant(weights))))
        for name in params.image.named_tensors():
            assert np.any(grads[name] != 0), name

    def test_wrong_channels(self):
        params = init_params(SMALL, 1)
        with pytest.raises(DimensionError):
            encode(params.condition, np.zeros((16, 16, 1)), Tape())

    def test_indivisible_size(self):
        params = init_params(SMALL, 1)
        with pytest.raises(DimensionError):
            encode(params.condition, np.zeros((10, 10, 3)), Tape())

    def test_inconsistent_layers_rejected(self):
        with pytest.raises(DimensionError):
            EncoderParams("ex", [np.zeros((3, 3, 3, 4)), np.zeros((3, 3, 5, 4))], [np.zeros(4), np.zeros(4)], [1, 1])


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        # with bias correction the first update is lr * g / (|g| + eps)
        params = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.array([0.5, -4.0, 0.0])}
        state = AdamState(learning_rate=0.1)
        adam_step(state, params, grads)
        np.testing.assert_allclose(params["w"], [0.9, -1.9, 3.0], atol=1e-7)
        assert state.step == 1

    def test_matches_reference_recursion(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal(4)
        params = {"w": w.copy()}
        state = AdamState(learning_rate=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8)
        m = np.zeros(4)
        v = np.zeros(4)
        for t in range(1, 6):
            g = rng.standard_normal(4)
            adam_step(state, params, {"w": g})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(params["w"], w, atol=1e-12)

    def test_zero_learning_rate_leaves_params(self):
        params = {"w": np.array([1.0, 2.0])}
        adam_step(AdamState(learning_rate=0.0), params, {"w": np.array([3.0, -1.0])})
        np.testing.assert_array_equal(params["w"], [1.0, 2.0])

    def test_nan_gradient_aborts_before_update(self):
        params = {"a": np.array([1.0]), "b": np.array([2.0])}
        state = AdamState()
        with pytest.raises(DivergenceError):
            adam_step(state, params, {"a": np.array([0.1]), "b": np.array([np.nan])})
        np.testing.assert_array_equal(params["a"], [1.0])
        assert state.step == 0
        assert state.m == {}

    def test_missing_gradient(self):
        with pytest.raises(DimensionError):
            adam_step(AdamState(), {"w": np.ones(2)}, {})
