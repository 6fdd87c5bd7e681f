import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hicom.errors import NumericError, ShapeError
from hicom.gradcheck import grad_check
from hicom.ops import (
    MLP,
    Linear,
    gelu,
    layer_norm,
    layer_norm_backward,
    layer_norm_forward,
    matmul,
    mlp2,
    mlp_backward,
    mlp_forward,
    named_parameters,
    softmax_rows,
)
from oracles import gelu_scalar, layer_norm_loops, matmul_loops, mlp_loops


class TestMatmul:
    def test_identity(self, rng):
        b = rng.normal(size=(2, 5))
        assert np.array_equal(matmul(np.eye(2), b), b)

    def test_hand_arithmetic(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
        assert out.tolist() == [[3.0], [7.0]]

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        np.testing.assert_allclose(matmul(a, b), matmul_loops(a, b), rtol=0, atol=1e-12)

    def test_identity_both_sides_bit_exact(self, rng):
        a = rng.normal(size=(4, 4))
        assert np.array_equal(matmul(np.eye(4), a), a)
        assert np.array_equal(matmul(a, np.eye(4)), a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestSoftmax:
    def test_constant_row_is_uniform(self):
        out = softmax_rows(np.full((2, 4), 3.7))
        np.testing.assert_allclose(out, 0.25, atol=1e-15)

    def test_large_logit_no_overflow(self):
        out = softmax_rows(np.array([[1000.0, 0.0, 0.0]]))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[1.0, 0.0, 0.0]], atol=1e-300)

    def test_matches_extended_precision(self, rng):
        m = rng.normal(size=(3, 4)) * 3
        out = softmax_rows(m)
        mpmath.mp.dps = 40
        for r in range(3):
            e = [mpmath.exp(mpmath.mpf(float(x))) for x in m[r]]
            z = mpmath.fsum(e)
            np.testing.assert_allclose(out[r], [float(x / z) for x in e], rtol=0, atol=1e-15)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_temperature_divides_logits(self, rng):
        m = rng.normal(size=(2, 5))
        np.testing.assert_allclose(softmax_rows(m, 2.0), softmax_rows(m / 2.0), atol=1e-15)

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            softmax_rows(np.array([[0.0, np.nan]]))

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=8),
                      elements=st.floats(-1e6, 1e6)))
    def test_rows_sum_to_one(self, m):
        out = softmax_rows(m)
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


class TestLayerNorm:
    def test_constant_row_gives_zeros(self):
        out = layer_norm(np.full((1, 5), 2.5), np.ones(5), np.zeros(5))
        np.testing.assert_array_equal(out, np.zeros((1, 5)))

    def test_already_normalized(self):
        out = layer_norm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2), eps=0.0)
        np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-15)

    def test_statistics(self, rng):
        # eps shrinks the output variance to var / (var + eps); a spread of 10 keeps that under 1e-6
        x = rng.normal(3.0, 10.0, size=(1, 32))
        out = layer_norm(x, np.ones(32), np.zeros(32))
        assert abs(out.mean()) < 1e-10
        assert abs(out.var() - 1) < 1e-6
        np.testing.assert_allclose(out.var(), x.var() / (x.var() + 1e-5), rtol=1e-12)

    def test_matches_loops(self, rng):
        x, g, b = rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)
        np.testing.assert_allclose(layer_norm(x, g, b), layer_norm_loops(x, g, b), atol=1e-12)

    def test_gradients(self, rng):
        x, g, b = rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)
        w = rng.normal(size=(3, 6))
        out, cache = layer_norm_forward(x, g, b)
        dx, dg, db = layer_norm_backward(w, cache)
        params = {"x": x, "gamma": g, "beta": b}
        rep = grad_check(lambda: float((layer_norm(x, g, b) * w).sum()), params, {"x": dx, "gamma": dg, "beta": db})
        assert rep.passed, rep.to_dict()


class TestMLP:
    def test_zero_weights(self, rng):
        p = MLP(Linear.zeros(4, 4), Linear.zeros(4, 4))
        assert np.array_equal(mlp2(rng.normal(size=(3, 4)), p.fc1, p.fc2), np.zeros((3, 4)))

    def test_identity_layers_give_gelu(self, rng):
        x = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(mlp2(x, Linear.identity(4), Linear.identity(4)), gelu(x))

    def test_gelu_exact_erf(self):
        xs = np.linspace(-4, 4, 17)
        np.testing.assert_allclose(gelu(xs), [gelu_scalar(float(x)) for x in xs], atol=1e-15)

    def test_matches_straight_line(self, rng):
        p = MLP.init(rng, 5, 7, 3)
        p.fc1.bias[:] = rng.normal(size=7)
        x = rng.normal(size=(4, 5))
        np.testing.assert_allclose(mlp2(x, p.fc1, p.fc2), mlp_loops(x, p), rtol=0, atol=1e-12)

    def test_chain_mismatch(self):
        with pytest.raises(ShapeError):
            MLP(Linear.zeros(3, 4), Linear.zeros(5, 2))

    def test_gradients(self, rng):
        p = MLP.init(rng, 4, 6, 3)
        for a in named_parameters(p).values():
            a += rng.normal(0, 0.5, a.shape)
        x, w = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
        out, cache = mlp_forward(x, p)
        dx, g = mlp_backward(w, cache, p)
        params = {"x": x, **named_parameters(p)}
        analytic = {"x": dx, **named_parameters(g)}
        rep = grad_check(lambda: float((mlp_forward(x, p)[0] * w).sum()), params, analytic)
        assert rep.passed, rep.to_dict()


class TestGradCheck:
    def test_square(self):
        x = np.array([3.0])
        rep = grad_check(lambda: float(x[0] ** 2), {"x": x}, {"x": np.array([6.0])}, h=1e-5)
        assert rep.passed
        assert abs(rep.params["x"].numeric - 6.0) < 1e-8
        assert x[0] == 3.0  # restored

    def test_constant(self):
        x = np.array([1.0, 2.0])
        rep = grad_check(lambda: 4.2, {"x": x}, {"x": np.zeros(2)})
        assert rep.passed and rep.max_rel_error == 0.0

    def test_wrong_gradient_fails(self):
        x = np.array([3.0])
        rep = grad_check(lambda: float(x[0] ** 2), {"x": x}, {"x": np.array([5.0])})
        assert not rep.passed

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_probe(self):
        x = np.array([1e-6])
        with pytest.raises(NumericError):
            grad_check(lambda: float(np.log(x[0])), {"x": x}, {"x": np.array([1e6])}, h=1e-5)
