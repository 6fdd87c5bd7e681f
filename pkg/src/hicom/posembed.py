"""Absolute 3D sinusoidal position embedding for video token grids.

The channel dimension is split 3/8 (time), 3/8 (height), 2/8 (width). Each
block is an ordinary 1D sinusoidal table over that axis's coordinate, laid
out as ``[sin(p*f0), cos(p*f0), sin(p*f1), cos(p*f1), ...]`` with
``f_i = base ** (-2i / block)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError

DEFAULT_BASE = 10000.0


@dataclass(frozen=True)
class PosEmbed3D:
    grid: tuple[int, int, int]
    dim: int
    base: float = DEFAULT_BASE

    def __post_init__(self):
        split_channels(self.dim)

    @property
    def split(self) -> tuple[int, int, int]:
        return split_channels(self.dim)

    def table(self) -> np.ndarray:
        return pos_embed_3d(*self.grid, self.dim, self.base)


def split_channels(dim: int) -> tuple[int, int, int]:
    if dim < 8 or dim % 8:
        raise ConfigError(f"position embedding dim must be a positive multiple of 8, got {dim}")
    c_t, c_h, c_w = 3 * dim // 8, 3 * dim // 8, 2 * dim // 8
    if c_t % 2 or c_w % 2:
        raise ConfigError(f"dim {dim} gives odd channel blocks {(c_t, c_h, c_w)}; use a multiple of 16")
    return c_t, c_h, c_w


def sincos_1d(length: int, channels: int, base: float = DEFAULT_BASE) -> np.ndarray:
    """Interleaved sin/cos table of shape ``(length, channels)``."""
    if channels % 2:
        raise ConfigError(f"sinusoidal block needs an even channel count, got {channels}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freqs = base ** (-np.arange(0, channels, 2, dtype=np.float64) / channels)
    angles = pos * freqs[None, :]
    out = np.empty((length, channels))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


@lru_cache(maxsize=32)
def _cached(t: int, h: int, w: int, dim: int, base: float) -> np.ndarray:
    c_t, c_h, c_w = split_channels(dim)
    out = np.empty((t, h, w, dim))
    out[..., :c_t] = sincos_1d(t, c_t, base)[:, None, None, :]
    out[..., c_t : c_t + c_h] = sincos_1d(h, c_h, base)[None, :, None, :]
    out[..., c_t + c_h :] = sincos_1d(w, c_w, base)[None, None, :, :]
    out.setflags(write=False)
    return out


def pos_embed_3d(t: int, h: int, w: int, dim: int, base: float = DEFAULT_BASE) -> np.ndarray:
    """Embedding table of shape ``(t, h, w, dim)`` in float64 (read-only, cached)."""
    if min(t, h, w) < 1:
        raise ConfigError(f"grid extents must be >= 1, got {(t, h, w)}")
    return _cached(int(t), int(h), int(w), int(dim), float(base))
