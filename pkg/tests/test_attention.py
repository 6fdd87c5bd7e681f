import numpy as np
import pytest

from hicom.attention import AttnParams, attention_backward, attention_forward, multi_head_attention
from hicom.errors import ConfigError
from hicom.gradcheck import grad_check
from hicom.ops import named_parameters
from oracles import attention_loops

from conftest import jitter


@pytest.mark.parametrize("heads,nq,nk", [(1, 1, 8), (2, 2, 3), (4, 3, 5)])
def test_matches_scalar_loops(rng, heads, nq, nk):
    p = jitter(AttnParams.init(rng, 8, heads), rng)
    xq, xk, xv = rng.normal(size=(nq, 8)), rng.normal(size=(nk, 8)), rng.normal(size=(nk, 8))
    out, w = multi_head_attention(xq, xk, xv, p)
    ref_out, ref_w = attention_loops(xq, xk, xv, p)
    np.testing.assert_allclose(out, ref_out, rtol=0, atol=1e-12)
    np.testing.assert_allclose(w, ref_w, rtol=0, atol=1e-12)


def test_weights_sum_to_one(rng):
    p = jitter(AttnParams.init(rng, 8, 2), rng, 1.0)
    _, w = multi_head_attention(rng.normal(size=(3, 8)), rng.normal(size=(6, 8)), rng.normal(size=(6, 8)), p)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)


def test_heads_must_divide_dim(rng):
    with pytest.raises(ConfigError):
        AttnParams.init(rng, 10, 3)


def test_gradients(rng):
    p = jitter(AttnParams.init(rng, 8, 2), rng)
    xq, xk, xv = rng.normal(size=(2, 8)), rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    w = rng.normal(size=(2, 8))
    _, _, cache = attention_forward(xq, xk, xv, p)
    dq, dk, dv, g = attention_backward(w, cache, p)
    params = {"xq": xq, "xk": xk, "xv": xv, **named_parameters(p)}
    analytic = {"xq": dq, "xk": dk, "xv": dv, **named_parameters(g)}
    rep = grad_check(lambda: float((multi_head_attention(xq, xk, xv, p)[0] * w).sum()), params, analytic)
    assert rep.passed, rep.to_dict()
