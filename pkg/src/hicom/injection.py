"""Instruction-condition injection: direct, coarse (adaptive LN), fine (cross-attention)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import AttnParams, attention_backward, attention_forward
from .errors import ConfigError, ShapeError
from .ops import (
    MLP,
    layer_norm_backward,
    layer_norm_forward,
    mlp_backward,
    mlp_forward,
)

KINDS = ("direct", "coarse", "fine")
# direct injection emits a single token, so it only fits the local branch
ALLOWED = {"local": ("direct", "coarse", "fine"), "global": ("coarse", "fine")}


@dataclass
class ConditionEmbedding:
    pooled: np.ndarray  # (1, D)
    fine: Optional[np.ndarray] = None  # (L, D)

    def __post_init__(self):
        self.pooled = np.atleast_2d(self.pooled)
        if self.pooled.shape[0] != 1:
            raise ShapeError(f"pooled condition must be 1 x D, got {self.pooled.shape}")
        if self.fine is not None:
            if self.fine.ndim != 2 or self.fine.shape[1] != self.dim:
                raise ShapeError(f"fine condition {self.fine.shape} does not match dim {self.dim}")
            if not np.all(np.isfinite(self.fine)):
                raise ValueError("fine condition has non-finite values")
        if not np.all(np.isfinite(self.pooled)):
            raise ValueError("pooled condition has non-finite values")

    @property
    def dim(self) -> int:
        return self.pooled.shape[1]

    @classmethod
    def random(cls, rng: np.random.Generator, dim: int, length: int = 4, dtype=np.float64):
        return cls(rng.normal(size=(1, dim)).astype(dtype), rng.normal(size=(length, dim)).astype(dtype))

    def astype(self, dtype) -> ConditionEmbedding:
        fine = None if self.fine is None else self.fine.astype(dtype)
        return ConditionEmbedding(self.pooled.astype(dtype), fine)


@dataclass
class InjectionParams:
    kind: str
    mlp: Optional[MLP] = None
    ln_gamma: Optional[np.ndarray] = None
    ln_beta: Optional[np.ndarray] = None
    attn: Optional[AttnParams] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown injection kind {self.kind!r}")
        has = (self.mlp is not None, self.ln_gamma is not None, self.attn is not None)
        want = {"direct": (True, False, False), "coarse": (True, True, False), "fine": (False, True, True)}
        if has != want[self.kind] or (self.ln_gamma is None) != (self.ln_beta is None):
            raise ConfigError(f"parameter set does not match injection kind {self.kind!r}")
        if self.kind == "coarse" and self.mlp.fc2.d_out != 2 * self.mlp.fc1.d_in:
            raise ShapeError("coarse regressor must output 2 * D (scale, shift)")

    @classmethod
    def init(cls, kind: str, rng: np.random.Generator, dim: int, heads: int = 1, dtype=np.float64):
        if kind == "direct":
            return cls(kind, mlp=MLP.init(rng, dim, dim, dim, dtype))
        if kind == "coarse":
            reg = MLP.init(rng, dim, dim, 2 * dim, dtype)
            # start as plain LN: zero last layer, scale bias 1, shift bias 0
            reg.fc2.weight[:] = 0.0
            reg.fc2.bias[:dim] = 1.0
            reg.fc2.bias[dim:] = 0.0
            return cls(kind, mlp=reg, ln_gamma=np.ones(dim, dtype), ln_beta=np.zeros(dim, dtype))
        if kind == "fine":
            return cls(
                kind,
                ln_gamma=np.ones(dim, dtype),
                ln_beta=np.zeros(dim, dtype),
                attn=AttnParams.init(rng, dim, heads, dtype),
            )
        raise ConfigError(f"unknown injection kind {kind!r}")


def check_level(kind: str | None, level: str) -> None:
    if kind is not None and kind not in ALLOWED[level]:
        raise ConfigError(f"{kind!r} injection is not valid at the {level} level; allowed: {ALLOWED[level]}")


def _expect(p: InjectionParams, kind: str) -> None:
    if p.kind != kind:
        raise ConfigError(f"expected {kind!r} injection parameters, got {p.kind!r}")


def injection_forward(a: Optional[np.ndarray], cond: ConditionEmbedding, p: InjectionParams):
    if p.kind == "direct":
        out, c = mlp_forward(cond.pooled, p.mlp)
        return out, c
    if a is None or a.ndim != 2 or a.shape[1] != cond.dim:
        raise ShapeError(f"injection input must be n x {cond.dim}")
    if p.kind == "coarse":
        mod, c_mlp = mlp_forward(cond.pooled, p.mlp)
        d = cond.dim
        scale, shift = mod[:, :d], mod[:, d:]
        normed, c_ln = layer_norm_forward(a, p.ln_gamma, p.ln_beta)
        return normed * scale + shift, (c_mlp, c_ln, normed, scale)
    if cond.fine is None or cond.fine.shape[0] < 1:
        raise ShapeError("fine injection needs at least one fine-grained condition token")
    normed, c_ln = layer_norm_forward(a, p.ln_gamma, p.ln_beta)
    out, weights, c_attn = attention_forward(normed, cond.fine, cond.fine, p.attn)
    return out, (c_ln, c_attn, weights)


def injection_backward(dout: np.ndarray, cache, p: InjectionParams):
    """Returns ``(dA, grads)``; ``dA`` is None for direct injection."""
    if p.kind == "direct":
        _, g = mlp_backward(dout, cache, p.mlp)
        return None, InjectionParams("direct", mlp=g)
    if p.kind == "coarse":
        c_mlp, c_ln, normed, scale = cache
        dnormed = dout * scale
        dmod = np.concatenate([(dout * normed).sum(axis=0, keepdims=True), dout.sum(axis=0, keepdims=True)], axis=1)
        _, g_mlp = mlp_backward(dmod, c_mlp, p.mlp)
        da, dgamma, dbeta = layer_norm_backward(dnormed, c_ln)
        return da, InjectionParams("coarse", mlp=g_mlp, ln_gamma=dgamma, ln_beta=dbeta)
    c_ln, c_attn, _ = cache
    dnormed, _, _, g_attn = attention_backward(dout, c_attn, p.attn)
    da, dgamma, dbeta = layer_norm_backward(dnormed, c_ln)
    return da, InjectionParams("fine", ln_gamma=dgamma, ln_beta=dbeta, attn=g_attn)


def inject_direct(cond: ConditionEmbedding, p: InjectionParams) -> np.ndarray:
    _expect(p, "direct")
    return injection_forward(None, cond, p)[0]


def inject_coarse(a: np.ndarray, cond: ConditionEmbedding, p: InjectionParams) -> np.ndarray:
    _expect(p, "coarse")
    return injection_forward(a, cond, p)[0]


def inject_fine(a: np.ndarray, cond: ConditionEmbedding, p: InjectionParams) -> np.ndarray:
    _expect(p, "fine")
    return injection_forward(a, cond, p)[0]
