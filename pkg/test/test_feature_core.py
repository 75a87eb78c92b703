"""Tape mechanics and the primitive ops."""

import numpy as np
import pytest

from marginal_correspondence.errors import ConfigError, DimensionError, UsageError
from marginal_correspondence.feature_core import (
    ARCCOS_DELTA,
    FeatureGrid,
    Tape,
    arccos,
    backward,
    conv2d,
    cosine_similarity_matrix,
    gram,
    l1_distance,
    l2_normalize_rows,
    make_rng,
    mul,
    normalize_rows,
    softmax_rows,
    stable_arccos,
    sum_all,
    take_rows,
)


def _conv_reference(image, kernel, stride):
    k = kernel.shape[0]
    pad = k // 2
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    out_h = -(-image.shape[0] // stride)
    out_w = -(-image.shape[1] // stride)
    out = np.zeros((out_h, out_w, kernel.shape[3]))
    for i in range(out_h):
        for j in range(out_w):
            for o in range(kernel.shape[3]):
                total = 0.0
                for di in range(k):
                    for dj in range(k):
                        for c in range(kernel.shape[2]):
                            total += padded[i * stride + di, j * stride + dj, c] * kernel[di, dj, c, o]
                out[i, j, o] = total
    return out


class TestTape:
    def test_square_gradient(self):
        tape = Tape()
        x = tape.parameter("x", np.array([1.0, 2.0, 3.0]))
        grads = tape.backward(sum_all(mul(x, x)))
        np.testing.assert_allclose(grads["x"], [2.0, 4.0, 6.0])

    def test_module_level_backward(self):
        tape = Tape()
        x = tape.parameter("x", np.array([1.0, -1.0]))
        np.testing.assert_allclose(backward(tape, sum_all(x))["x"], [1.0, 1.0])

    def test_repeated_parameter_registration_shares_node(self):
        tape = Tape()
        value = np.array([1.0, 2.0])
        a = tape.parameter("w", value)
        b = tape.parameter("w", value)
        assert a is b
        grads = tape.backward(sum_all(mul(a, b)))
        np.testing.assert_allclose(grads["w"], 2 * value)

    def test_backward_accumulates_until_zero_grad(self):
        tape = Tape()
        x = tape.parameter("x", np.array([3.0]))
        loss = sum_all(x)
        tape.backward(loss)
        np.testing.assert_allclose(tape.backward(loss)["x"], [2.0])
        tape.zero_grad()
        np.testing.assert_allclose(tape.grads["x"], [0.0])
        np.testing.assert_allclose(tape.backward(loss)["x"], [1.0])

    def test_unused_parameter_gets_zero_gradient(self):
        tape = Tape()
        x = tape.parameter("x", np.array([1.0]))
        tape.parameter("unused", np.ones((2, 2)))
        grads = tape.backward(sum_all(x))
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))

    def test_non_scalar_seed_rejected(self):
        tape = Tape()
        x = tape.parameter("x", np.ones(3))
        with pytest.raises(UsageError):
            tape.backward(mul(x, x))

    def test_foreign_loss_rejected(self):
        first, second = Tape(), Tape()
        loss = sum_all(first.parameter("x", np.ones(2)))
        with pytest.raises(UsageError):
            second.backward(loss)

    def test_mixing_tapes_rejected(self):
        first, second = Tape(), Tape()
        with pytest.raises(UsageError):
            mul(first.parameter("a", np.ones(2)), second.parameter("b", np.ones(2)))

    def test_inference_tape_records_nothing(self):
        tape = Tape(record=False)
        x = tape.parameter("x", np.ones(3))
        loss = sum_all(mul(x, x))
        assert len(tape) == 0
        assert loss.item() == 3.0
        with pytest.raises(UsageError):
            tape.backward(loss)


class TestNormalizeRows:
    def test_rows_have_unit_norm(self):
        rng = np.random.default_rng(0)
        tape = Tape()
        out = normalize_rows(tape.constant(rng.standard_normal((7, 5))))
        np.testing.assert_allclose(np.linalg.norm(out.value, axis=1), 1.0, atol=1e-12)

    def test_zero_row_stays_zero_with_finite_gradient(self):
        tape = Tape()
        x = tape.parameter("x", np.array([[0.0, 0.0], [3.0, 4.0]]))
        out = normalize_rows(x)
        np.testing.assert_array_equal(out.value[0], [0.0, 0.0])
        grads = tape.backward(sum_all(out))
        assert np.all(np.isfinite(grads["x"]))

    def test_non_positive_epsilon_rejected(self):
        tape = Tape()
        with pytest.raises(ConfigError):
            normalize_rows(tape.constant(np.ones((2, 2))), epsilon=0.0)


class TestSoftmaxRows:
    def test_rows_are_distributions(self):
        rng = np.random.default_rng(1)
        tape = Tape()
        out = softmax_rows(tape.constant(rng.standard_normal((6, 6))), sharpness=100.0)
        np.testing.assert_allclose(out.value.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out.value >= 0)

    def test_large_logits_do_not_overflow(self):
        tape = Tape()
        out = softmax_rows(tape.constant(np.array([[1000.0, 0.0], [0.0, 1000.0]])), sharpness=100.0)
        np.testing.assert_allclose(out.value, np.eye(2), atol=1e-12)

    def test_non_positive_sharpness_rejected(self):
        tape = Tape()
        with pytest.raises(ConfigError):
            softmax_rows(tape.constant(np.ones((2, 2))), sharpness=0.0)


class TestArccos:
    def test_clamped_at_one(self):
        assert stable_arccos(1.0) == pytest.approx(np.arccos(1.0 - ARCCOS_DELTA))
        assert stable_arccos(-1.0) == pytest.approx(np.arccos(-1.0 + ARCCOS_DELTA))

    def test_gradient_bounded_at_boundary(self):
        tape = Tape()
        c = tape.parameter("c", np.array([1.0, -1.0, 1.5]))
        grads = tape.backward(sum_all(arccos(c)))
        assert np.all(np.isfinite(grads["c"]))
        assert np.max(np.abs(grads["c"])) < 2.3e3


class TestGram:
    def test_exactly_symmetric(self):
        rng = np.random.default_rng(2)
        tape = Tape()
        out = gram(tape.constant(rng.standard_normal((9, 4))))
        np.testing.assert_array_equal(out.value, out.value.T)

    def test_matches_matmul(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 3))
        np.testing.assert_allclose(gram(Tape().constant(x)).value, x @ x.T, atol=1e-14)


class TestConv2d:
    @pytest.mark.parametrize("stride", [1, 2])
    def test_matches_loop_reference(self, stride):
        rng = np.random.default_rng(4)
        image = rng.standard_normal((6, 6, 2))
        kernel = rng.standard_normal((3, 3, 2, 3))
        tape = Tape()
        out = conv2d(tape.constant(image), tape.constant(kernel), stride)
        np.testing.assert_allclose(out.value, _conv_reference(image, kernel, stride), atol=1e-12)

    def test_same_padding_output_shape(self):
        tape = Tape()
        out = conv2d(tape.constant(np.ones((8, 8, 3))), tape.constant(np.ones((3, 3, 3, 5))), 2)
        assert out.shape == (4, 4, 5)

    def test_channel_mismatch_rejected(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            conv2d(tape.constant(np.ones((4, 4, 2))), tape.constant(np.ones((3, 3, 3, 1))), 1)


class TestFeatureGrid:
    def test_from_hwc_array_flattens_row_major(self):
        array = np.arange(12, dtype=float).reshape(2, 3, 2)
        grid = FeatureGrid.from_array(Tape(), array)
        assert (grid.height, grid.width, grid.channels, grid.n) == (2, 3, 2, 6)
        np.testing.assert_array_equal(grid.values[4], array[1, 1])

    def test_cosine_matrix_channel_mismatch(self):
        tape = Tape()
        a = FeatureGrid.from_array(tape, np.ones((2, 2, 3)))
        b = FeatureGrid.from_array(tape, np.ones((2, 2, 4)))
        with pytest.raises(DimensionError):
            cosine_similarity_matrix(a, b)

    def test_cosine_of_normalized_grid_has_unit_diagonal(self):
        rng = np.random.default_rng(5)
        tape = Tape()
        grid = l2_normalize_rows(FeatureGrid.from_array(tape, rng.standard_normal((3, 3, 4))))
        sim = cosine_similarity_matrix(grid, grid).value
        np.testing.assert_allclose(np.diagonal(sim), 1.0, atol=1e-12)
        assert np.all(np.abs(sim) <= 1.0 + 1e-12)

    def test_l1_shape_mismatch(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            l1_distance(tape.constant(np.ones((2, 2))), tape.constant(np.ones((2, 3))))


def test_make_rng_streams_are_reproducible_and_independent():
    a = make_rng(7, 1).standard_normal(4)
    b = make_rng(7, 1).standard_normal(4)
    c = make_rng(7, 2).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


class TestInvariants:
    def test_cosine_matrix_transposes_when_arguments_swap(self):
        rng = np.random.default_rng(30)
        tape = Tape()
        a = l2_normalize_rows(FeatureGrid.from_array(tape, rng.standard_normal((3, 4, 5))))
        b = l2_normalize_rows(FeatureGrid.from_array(tape, rng.standard_normal((3, 4, 5))))
        np.testing.assert_allclose(
            cosine_similarity_matrix(a, b).value, cosine_similarity_matrix(b, a).value.T, atol=1e-12
        )

    def test_normalize_is_idempotent(self):
        rng = np.random.default_rng(31)
        grid = l2_normalize_rows(FeatureGrid.from_array(Tape(), 5.0 * rng.standard_normal((7, 6))))
        np.testing.assert_allclose(l2_normalize_rows(grid).values, grid.values, atol=1e-12)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(32)
        tape = Tape()
        m = rng.standard_normal((4, 6))
        shifted = m + rng.uniform(-50.0, 50.0, (4, 1))
        np.testing.assert_allclose(
            softmax_rows(tape.constant(shifted), 3.0).value, softmax_rows(tape.constant(m), 3.0).value, atol=1e-12
        )

    def test_two_element_softmax_closed_form(self):
        out = softmax_rows(Tape().constant(np.array([[1.0, 2.0]])), 1.0).value
        e = np.e
        np.testing.assert_allclose(out, [[1.0 / (1.0 + e), e / (1.0 + e)]], atol=1e-15)


class TestTakeRows:
    def test_selects_rows(self):
        x = np.arange(12.0).reshape(4, 3)
        out = take_rows(Tape().constant(x), np.array([2, 0, 3, 1]))
        np.testing.assert_array_equal(out.value, x[[2, 0, 3, 1]])

    def test_repeated_rows_accumulate_gradient(self):
        tape = Tape()
        x = tape.parameter("x", np.ones((3, 2)))
        grads = tape.backward(sum_all(take_rows(x, np.array([1, 1, 2]))))
        np.testing.assert_array_equal(grads["x"], [[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])

    def test_out_of_range_rejected(self):
        with pytest.raises(DimensionError):
            take_rows(Tape().constant(np.ones((3, 2))), np.array([0, 3]))
