"""Bare multi-head attention: Q/K/V/output projections, no residual, no FFN."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import Linear, _softmax_last, linear_backward, linear_forward


@dataclass
class AttnParams:
    query: Linear
    key: Linear
    value: Linear
    output: Linear
    heads: int = 1

    def __post_init__(self):
        d = self.query.d_out
        for lin in (self.key, self.value):
            if lin.d_out != d:
                raise ShapeError("query/key/value projections must share an output dim")
        if self.output.d_in != d:
            raise ShapeError("output projection must consume the attention dim")
        if self.heads < 1 or d % self.heads:
            raise ConfigError(f"dim {d} is not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.query.d_out

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)

    @classmethod
    def init(cls, rng, dim: int, heads: int, dtype=np.float64) -> AttnParams:
        return cls(*(Linear.init(rng, dim, dim, dtype) for _ in range(4)), heads=heads)


def _split(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def attention_forward(xq: np.ndarray, xk: np.ndarray, xv: np.ndarray, p: AttnParams):
    """Returns ``(out[nq, D], weights[heads, nq, nk], cache)``."""
    if xk.shape[0] != xv.shape[0]:
        raise ShapeError(f"keys ({xk.shape[0]}) and values ({xv.shape[0]}) differ in length")
    if xk.shape[0] < 1:
        raise ShapeError("attention needs at least one key")
    q, cq = linear_forward(xq, p.query)
    k, ck = linear_forward(xk, p.key)
    v, cv = linear_forward(xv, p.value)
    qh, kh, vh = _split(q, p.heads), _split(k, p.heads), _split(v, p.heads)
    scores = (qh @ kh.transpose(0, 2, 1)) * p.scale
    weights = _softmax_last(scores)
    ctx = _merge(weights @ vh)
    out, co = linear_forward(ctx, p.output)
    return out, weights, (cq, ck, cv, co, qh, kh, vh, weights)


def attention_backward(dout: np.ndarray, cache, p: AttnParams):
    """Returns ``(dxq, dxk, dxv, grads)``."""
    cq, ck, cv, co, qh, kh, vh, weights = cache
    dctx, g_out = linear_backward(dout, co, p.output)
    dctx_h = _split(dctx, p.heads)
    dweights = dctx_h @ vh.transpose(0, 2, 1)
    dvh = weights.transpose(0, 2, 1) @ dctx_h
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dscores *= p.scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 2, 1) @ qh
    dxq, g_q = linear_backward(_merge(dqh), cq, p.query)
    dxk, g_k = linear_backward(_merge(dkh), ck, p.key)
    dxv, g_v = linear_backward(_merge(dvh), cv, p.value)
    return dxq, dxk, dxv, AttnParams(g_q, g_k, g_v, g_out, heads=p.heads)


def multi_head_attention(xq, xk, xv, p: AttnParams):
    out, weights, _ = attention_forward(xq, xk, xv, p)
    return out, weights
