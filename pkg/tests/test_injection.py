import numpy as np
import pytest

from hicom.errors import ConfigError, ShapeError
from hicom.gradcheck import grad_check
from hicom.injection import (
    ConditionEmbedding,
    InjectionParams,
    check_level,
    inject_coarse,
    inject_direct,
    inject_fine,
    injection_backward,
    injection_forward,
)
from hicom.ops import Linear, MLP, layer_norm, named_parameters
from oracles import attention_loops, layer_norm_loops, linear_loops, mlp_loops

from conftest import jitter

D = 8


@pytest.fixture
def cond(rng):
    return ConditionEmbedding.random(rng, D, length=3)


class TestDirect:
    def test_zero_mlp(self, cond):
        p = InjectionParams("direct", mlp=MLP(Linear.zeros(D, D), Linear.zeros(D, D)))
        assert np.array_equal(inject_direct(cond, p), np.zeros((1, D)))

    def test_matches_mlp_oracle(self, rng, cond):
        p = jitter(InjectionParams.init("direct", rng, D), rng)
        np.testing.assert_allclose(inject_direct(cond, p), mlp_loops(cond.pooled, p.mlp), atol=1e-12)

    def test_ignores_visual_input(self, rng, cond):
        p = InjectionParams.init("direct", rng, D)
        a, _ = injection_forward(rng.normal(size=(1, D)), cond, p)
        b, _ = injection_forward(rng.normal(size=(1, D)), cond, p)
        assert np.array_equal(a, b)


class TestCoarse:
    def test_init_is_plain_layer_norm(self, rng, cond):
        p = InjectionParams.init("coarse", rng, D)
        a = rng.normal(size=(3, D))
        np.testing.assert_allclose(inject_coarse(a, cond, p), layer_norm(a, p.ln_gamma, p.ln_beta), rtol=0, atol=1e-12)

    def test_zero_scale_gives_shift_rows(self, rng, cond):
        p = jitter(InjectionParams.init("coarse", rng, D), rng)
        p.mlp.fc2.weight[:, :D] = 0.0
        p.mlp.fc2.bias[:D] = 0.0
        out1 = inject_coarse(rng.normal(size=(2, D)), cond, p)
        out2 = inject_coarse(rng.normal(size=(2, D)), cond, p)
        np.testing.assert_array_equal(out1, out2)
        np.testing.assert_array_equal(out1[0], out1[1])

    def test_matches_hand_composition(self, rng, cond):
        p = jitter(InjectionParams.init("coarse", rng, D), rng)
        a = rng.normal(size=(3, D))
        mod = np.array(mlp_loops(cond.pooled, p.mlp))[0]
        ln = np.array(layer_norm_loops(a, p.ln_gamma, p.ln_beta))
        np.testing.assert_allclose(inject_coarse(a, cond, p), ln * mod[:D] + mod[D:], rtol=0, atol=1e-12)


class TestFine:
    def test_single_condition_token(self, rng):
        p = jitter(InjectionParams.init("fine", rng, D, heads=2), rng)
        cond = ConditionEmbedding(rng.normal(size=(1, D)), rng.normal(size=(1, D)))
        out = inject_fine(rng.normal(size=(4, D)), cond, p)
        single = linear_loops(linear_loops(cond.fine, p.attn.value), p.attn.output)[0]
        for row in out:
            np.testing.assert_allclose(row, single, rtol=0, atol=1e-12)

    def test_duplicated_rows_do_not_matter(self, rng):
        p = jitter(InjectionParams.init("fine", rng, D, heads=2), rng)
        c = rng.normal(size=(1, D))
        a = rng.normal(size=(3, D))
        pooled = rng.normal(size=(1, D))
        out1 = inject_fine(a, ConditionEmbedding(pooled, np.repeat(c, 2, axis=0)), p)
        out2 = inject_fine(a, ConditionEmbedding(pooled, np.repeat(c, 5, axis=0)), p)
        np.testing.assert_allclose(out1, out2, rtol=0, atol=1e-12)

    def test_matches_brute_force(self, rng):
        p = jitter(InjectionParams.init("fine", rng, D, heads=2), rng)
        cond = ConditionEmbedding(rng.normal(size=(1, D)), rng.normal(size=(3, D)))
        a = rng.normal(size=(2, D))
        ref, _ = attention_loops(layer_norm_loops(a, p.ln_gamma, p.ln_beta), cond.fine, cond.fine, p.attn)
        np.testing.assert_allclose(inject_fine(a, cond, p), ref, rtol=0, atol=1e-12)

    def test_pre_projection_rows_in_value_hull(self, rng):
        p = jitter(InjectionParams.init("fine", rng, D, heads=2), rng)
        cond = ConditionEmbedding(rng.normal(size=(1, D)), rng.normal(size=(4, D)))
        _, cache = injection_forward(rng.normal(size=(3, D)), cond, p)
        ctx = cache[1][3]  # input of the output projection
        values = np.asarray(linear_loops(cond.fine, p.attn.value))
        assert np.all(ctx >= values.min(axis=0) - 1e-12)
        assert np.all(ctx <= values.max(axis=0) + 1e-12)

    def test_requires_fine_tokens(self, rng):
        p = InjectionParams.init("fine", rng, D)
        with pytest.raises(ShapeError):
            inject_fine(rng.normal(size=(2, D)), ConditionEmbedding(rng.normal(size=(1, D))), p)


def test_kind_mismatch(rng, cond):
    p = InjectionParams.init("coarse", rng, D)
    with pytest.raises(ConfigError):
        inject_direct(cond, p)
    with pytest.raises(ConfigError):
        inject_fine(rng.normal(size=(1, D)), cond, p)


def test_parameter_set_must_match_kind(rng):
    with pytest.raises(ConfigError):
        InjectionParams("direct", ln_gamma=np.ones(D), ln_beta=np.zeros(D))
    with pytest.raises(ConfigError):
        InjectionParams("sideways")


def test_direct_is_local_only():
    check_level("direct", "local")
    with pytest.raises(ConfigError):
        check_level("direct", "global")


@pytest.mark.parametrize("kind", ["direct", "coarse", "fine"])
def test_gradients(rng, cond, kind):
    p = jitter(InjectionParams.init(kind, rng, D, heads=2), rng)
    a = rng.normal(size=(3, D))
    out, cache = injection_forward(a, cond, p)
    w = rng.normal(size=out.shape)
    da, g = injection_backward(w, cache, p)
    params = dict(named_parameters(p))
    analytic = dict(named_parameters(g))
    if da is not None:
        params["A"], analytic["A"] = a, da

    def f():
        return float((injection_forward(a, cond, p)[0] * w).sum())

    rep = grad_check(f, params, analytic, h=1e-5, tol=1e-4)
    assert rep.passed, rep.to_dict()
