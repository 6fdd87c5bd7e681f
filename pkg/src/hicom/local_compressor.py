"""Grouped local-level compression: one output token per T x H x W sub-region."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .attention import AttnParams, attention_backward, attention_forward
from .errors import ConfigError, ShapeError
from .injection import (
    ConditionEmbedding,
    InjectionParams,
    check_level,
    injection_backward,
    injection_forward,
)
from .ops import add_into, zeros_like_tree


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class GroupGrid:
    shape: tuple[int, int, int]
    ratio: tuple[int, int, int]

    def __post_init__(self):
        if len(self.ratio) != 3 or any(int(r) < 1 for r in self.ratio):
            raise ConfigError(f"downsampling ratio components must be >= 1, got {self.ratio}")
        if len(self.shape) != 3 or any(int(n) < 1 for n in self.shape):
            raise ShapeError(f"grid extents must be >= 1, got {self.shape}")

    @property
    def counts(self) -> tuple[int, int, int]:
        return tuple(ceil_div(n, r) for n, r in zip(self.shape, self.ratio))

    @property
    def num_groups(self) -> int:
        nt, nh, nw = self.counts
        return nt * nh * nw

    def bounds(self, index: tuple[int, int, int]) -> tuple[slice, slice, slice]:
        return tuple(
            slice(i * r, min((i + 1) * r, n)) for i, r, n in zip(index, self.ratio, self.shape)
        )

    def indices(self) -> Iterator[tuple[int, int, int]]:
        """Group index triples, t-major then h then w."""
        return itertools.product(*(range(c) for c in self.counts))

    def group_size(self, index) -> int:
        return int(np.prod([s.stop - s.start for s in self.bounds(index)]))

    def members(self, index) -> list[tuple[int, int, int]]:
        st, sh, sw = self.bounds(index)
        return list(itertools.product(range(st.start, st.stop), range(sh.start, sh.stop), range(sw.start, sw.stop)))


def group_partition(v_or_shape, ratio: Sequence[int]) -> GroupGrid:
    shape = v_or_shape.shape[:3] if isinstance(v_or_shape, np.ndarray) else v_or_shape
    return GroupGrid(tuple(int(n) for n in shape), tuple(int(r) for r in ratio))


def group_pool(tokens: np.ndarray) -> np.ndarray:
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ShapeError(f"group_pool expects g x D with g >= 1, got {tokens.shape}")
    return tokens.mean(axis=0, keepdims=True)


@dataclass
class LocalAttnParams:
    attn: AttnParams
    injection: Optional[InjectionParams] = None  # None: unconditional, pooled token as query

    def __post_init__(self):
        if self.injection is not None:
            check_level(self.injection.kind, "local")

    @classmethod
    def init(cls, rng, dim: int, heads: int, injection: str | None = "direct", dtype=np.float64):
        check_level(injection, "local")
        attn = AttnParams.init(rng, dim, heads, dtype)
        inj = None if injection is None else InjectionParams.init(injection, rng, dim, heads, dtype)
        return cls(attn, inj)


@dataclass
class LocalOutput:
    z: np.ndarray  # (N_T, N_H, N_W, D)
    grid: GroupGrid
    attn: list[np.ndarray] = field(repr=False)  # per group: (heads, g)
    queries: np.ndarray = field(repr=False)  # (num_groups, D), post-injection

    def tokens(self) -> np.ndarray:
        """Z_l flattened t-major to ``(N_T*N_H*N_W, D)``."""
        return self.z.reshape(-1, self.z.shape[-1])

    def weight_map(self) -> np.ndarray:
        """Head-averaged attention weight of every input token within its group, shape (T, H, W)."""
        out = np.zeros(self.grid.shape)
        for idx, w in zip(self.grid.indices(), self.attn):
            st, sh, sw = self.grid.bounds(idx)
            out[st, sh, sw] = w.mean(axis=0).reshape(st.stop - st.start, sh.stop - sh.start, sw.stop - sw.start)
        return out


def local_forward(
    v: np.ndarray,
    cond: ConditionEmbedding,
    p: LocalAttnParams,
    grid: GroupGrid | None = None,
    workers: int = 1,
):
    if v.ndim != 4:
        raise ShapeError(f"video features must be T x H x W x D, got {v.shape}")
    d = v.shape[-1]
    if d != p.attn.dim:
        raise ShapeError(f"feature dim {d} does not match attention dim {p.attn.dim}")
    if grid is None:
        raise ConfigError("a GroupGrid is required")
    if grid.shape != v.shape[:3]:
        raise ShapeError(f"grid {grid.shape} does not match features {v.shape[:3]}")
    inj = p.injection
    shared = None
    if inj is not None and inj.kind == "direct":
        shared = injection_forward(None, cond, inj)

    def run(index):
        st, sh, sw = grid.bounds(index)
        members = v[st, sh, sw].reshape(-1, d)
        pooled = group_pool(members)
        if inj is None:
            query, c_inj = pooled, None
        elif shared is not None:
            query, c_inj = shared
        else:
            query, c_inj = injection_forward(pooled, cond, inj)
        out, weights, c_attn = attention_forward(query, members, members, p.attn)
        return out[0], weights[:, 0, :], query[0], c_inj, c_attn

    indices = list(grid.indices())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, indices))
    else:
        results = [run(i) for i in indices]
    z = np.stack([r[0] for r in results]).reshape(*grid.counts, d)
    out = LocalOutput(z, grid, [r[1] for r in results], np.stack([r[2] for r in results]))
    cache = ([r[3] for r in results], [r[4] for r in results], shared)
    return out, cache


def local_backward(dz: np.ndarray, cache, p: LocalAttnParams) -> LocalAttnParams:
    """Parameter gradients for an upstream gradient on Z_l (any shape with D last)."""
    inj_caches, attn_caches, shared = cache
    d = p.attn.dim
    dz = dz.reshape(-1, d)
    grads = zeros_like_tree(p)
    dshared = np.zeros((1, d), dtype=dz.dtype)
    for g, (c_inj, c_attn) in enumerate(zip(inj_caches, attn_caches)):
        dq, _, _, g_attn = attention_backward(dz[g : g + 1], c_attn, p.attn)
        add_into(grads.attn, g_attn)
        if p.injection is None:
            continue
        if shared is not None:
            dshared += dq
        else:
            _, g_inj = injection_backward(dq, c_inj, p.injection)
            add_into(grads.injection, g_inj)
    if shared is not None:
        _, g_inj = injection_backward(dshared, shared[1], p.injection)
        add_into(grads.injection, g_inj)
    return grads


def compress_local(
    v: np.ndarray,
    cond: ConditionEmbedding,
    p: LocalAttnParams,
    grid: GroupGrid | None = None,
    ratio: Sequence[int] | None = None,
    workers: int = 1,
) -> LocalOutput:
    if grid is None:
        if ratio is None:
            raise ConfigError("pass either grid or ratio")
        grid = group_partition(v, ratio)
    return local_forward(v, cond, p, grid, workers)[0]
