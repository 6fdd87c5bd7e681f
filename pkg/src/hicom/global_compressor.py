"""Global-level compression: learnable query tokens over every video token."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import AttnParams, attention_backward, attention_forward
from .errors import ShapeError
from .injection import (
    ConditionEmbedding,
    InjectionParams,
    check_level,
    injection_backward,
    injection_forward,
)
from .ops import INIT_STD, add_into, zeros_like_tree
from .posembed import pos_embed_3d


@dataclass
class GlobalParams:
    tokens: np.ndarray  # learnable queries, (N_L, D)
    attn: AttnParams
    injection: Optional[InjectionParams] = None  # None: tokens are the raw queries

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ShapeError(f"learnable tokens must be N_L x D with N_L >= 1, got {self.tokens.shape}")
        if self.tokens.shape[1] != self.attn.dim:
            raise ShapeError("learnable token dim does not match attention dim")
        if self.injection is not None:
            check_level(self.injection.kind, "global")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @classmethod
    def init(cls, rng, dim: int, heads: int, num_tokens: int = 32, injection: str | None = "coarse", dtype=np.float64):
        check_level(injection, "global")
        tokens = rng.normal(0.0, INIT_STD, size=(num_tokens, dim)).astype(dtype)
        attn = AttnParams.init(rng, dim, heads, dtype)
        inj = None if injection is None else InjectionParams.init(injection, rng, dim, heads, dtype)
        return cls(tokens, attn, inj)


@dataclass
class GlobalOutput:
    z: np.ndarray  # (N_L, D)
    attn: np.ndarray  # (heads, N_L, T*H*W)

    def weight_map(self) -> np.ndarray:
        """Head-averaged attention, shape (N_L, T*H*W)."""
        return self.attn.mean(axis=0)


def flatten_video(v: np.ndarray) -> np.ndarray:
    return v.reshape(-1, v.shape[-1])


def global_forward(v: np.ndarray, cond: ConditionEmbedding, p: GlobalParams, pos: bool | np.ndarray = True):
    """``pos`` is True (sinusoidal 3D table), False (off), or an explicit (T,H,W,D) table."""
    if v.ndim != 4:
        raise ShapeError(f"video features must be T x H x W x D, got {v.shape}")
    if v.shape[-1] != p.attn.dim:
        raise ShapeError(f"feature dim {v.shape[-1]} does not match attention dim {p.attn.dim}")
    values = flatten_video(v)
    if pos is True:
        keys = values + flatten_video(pos_embed_3d(*v.shape)).astype(v.dtype)
    elif pos is False or pos is None:
        keys = values
    else:
        if pos.shape != v.shape:
            raise ShapeError(f"position table {pos.shape} does not match features {v.shape}")
        keys = values + flatten_video(pos).astype(v.dtype)
    if p.injection is None:
        queries, c_inj = p.tokens, None
    else:
        queries, c_inj = injection_forward(p.tokens, cond, p.injection)
    z, weights, c_attn = attention_forward(queries, keys, values, p.attn)
    return GlobalOutput(z, weights), (c_inj, c_attn)


def global_backward(dz: np.ndarray, cache, p: GlobalParams) -> GlobalParams:
    c_inj, c_attn = cache
    grads = zeros_like_tree(p)
    dq, _, _, g_attn = attention_backward(dz, c_attn, p.attn)
    add_into(grads.attn, g_attn)
    if p.injection is None:
        grads.tokens += dq
    else:
        dtok, g_inj = injection_backward(dq, c_inj, p.injection)
        grads.tokens += dtok
        add_into(grads.injection, g_inj)
    return grads


def compress_global(v, cond, p: GlobalParams, pos: bool | np.ndarray = True) -> GlobalOutput:
    return global_forward(v, cond, p, pos)[0]
