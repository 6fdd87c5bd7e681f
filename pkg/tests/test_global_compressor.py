import numpy as np
import pytest

from hicom.errors import ConfigError
from hicom.global_compressor import GlobalParams, compress_global, global_backward, global_forward
from hicom.gradcheck import grad_check
from hicom.injection import ConditionEmbedding
from hicom.ops import named_parameters
from hicom.posembed import pos_embed_3d
from oracles import attention_loops, linear_loops

from conftest import jitter


def _setup(rng, kind="coarse", heads=2, dim=16, n=4):
    p = jitter(GlobalParams.init(rng, dim, heads, n, kind), rng)
    return p, ConditionEmbedding.random(rng, dim, 3)


def test_default_token_count(rng):
    p = GlobalParams.init(rng, 16, 2)
    assert p.num_tokens == 32
    out = compress_global(rng.normal(size=(2, 3, 3, 16)), ConditionEmbedding.random(rng, 16), p)
    assert out.z.shape == (32, 16)
    assert out.attn.shape == (2, 32, 18)


def test_direct_rejected(rng):
    with pytest.raises(ConfigError):
        GlobalParams.init(rng, 16, 2, 4, "direct")


def test_identical_tokens_give_projected_value(rng):
    p, cond = _setup(rng)
    v = np.broadcast_to(rng.normal(size=16), (2, 2, 2, 16)).copy()
    out = compress_global(v, cond, p, pos=False)
    ref = linear_loops(linear_loops(v[:1, 0, 0], p.attn.value), p.attn.output)[0]
    for row in out.z:
        np.testing.assert_allclose(row, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("pos", [False, True])
def test_matches_brute_force(rng, pos):
    p, cond = _setup(rng, None, heads=1, dim=8 if not pos else 16, n=2)
    d = p.attn.dim
    v = rng.normal(size=(2, 2, 2, d))
    out = compress_global(v, cond, p, pos=pos)
    flat = v.reshape(-1, d)
    keys = flat + (pos_embed_3d(2, 2, 2, d).reshape(-1, d) if pos else 0.0)
    ref, w = attention_loops(p.tokens, keys, flat, p.attn)
    np.testing.assert_allclose(out.z, ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.attn, w, rtol=0, atol=1e-12)


def test_attention_rows_sum_to_one(rng):
    p, cond = _setup(rng, "fine")
    out = compress_global(rng.normal(size=(3, 3, 3, 16)), cond, p)
    np.testing.assert_allclose(out.attn.sum(axis=-1), 1.0, atol=1e-9)


def test_permutation_invariant_without_pos(rng):
    p, cond = _setup(rng)
    v = rng.normal(size=(2, 3, 3, 16))
    perm = rng.permutation(18)
    shuffled = v.reshape(18, 16)[perm].reshape(v.shape)
    a = compress_global(v, cond, p, pos=False)
    b = compress_global(shuffled, cond, p, pos=False)
    np.testing.assert_allclose(a.z, b.z, rtol=0, atol=1e-9)


def test_position_breaks_permutation_invariance(rng):
    p, cond = _setup(rng)
    v = rng.normal(size=(2, 3, 3, 16))
    shuffled = v.reshape(18, 16)[rng.permutation(18)].reshape(v.shape)
    a = compress_global(v, cond, p, pos=True)
    b = compress_global(shuffled, cond, p, pos=True)
    assert np.max(np.abs(a.z - b.z)) > 1e-6


def test_zero_position_table_equals_off(rng):
    p, cond = _setup(rng)
    v = rng.normal(size=(2, 3, 3, 16))
    a = compress_global(v, cond, p, pos=np.zeros_like(v))
    b = compress_global(v, cond, p, pos=False)
    assert a.z.tobytes() == b.z.tobytes()


def test_queries_carry_no_position(rng):
    # changing the position table must leave the injected queries untouched
    p, cond = _setup(rng)
    v = rng.normal(size=(2, 2, 2, 16))
    _, c1 = global_forward(v, cond, p, pos=True)
    _, c2 = global_forward(v, cond, p, pos=False)
    assert np.array_equal(c1[1][0], c2[1][0])  # query projection inputs


@pytest.mark.parametrize("kind", [None, "coarse", "fine"])
@pytest.mark.parametrize("pos", [False, True])
def test_gradients(rng, kind, pos):
    p, cond = _setup(rng, kind)
    v = rng.normal(size=(2, 2, 3, 16))
    out, cache = global_forward(v, cond, p, pos)
    w = rng.normal(size=out.z.shape)
    g = global_backward(w, cache, p)
    rep = grad_check(
        lambda: float((global_forward(v, cond, p, pos)[0].z * w).sum()),
        named_parameters(p),
        named_parameters(g),
    )
    assert rep.passed, rep.to_dict()
