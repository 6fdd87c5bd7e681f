"""Dense numerical primitives with hand-written backward passes.

Each differentiable op comes as a ``*_forward`` returning ``(out, cache)`` and
a ``*_backward`` consuming the upstream gradient and that cache. Parameter
gradients are returned in the same dataclass type as the parameters, so
``named_parameters`` flattens both to matching keys.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

LN_EPS = 1e-5
INIT_STD = 0.02
# python floats so float32 arrays are not promoted
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class Linear:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"linear weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, dtype=np.float64) -> Linear:
        w = rng.normal(0.0, INIT_STD, size=(d_in, d_out)).astype(dtype)
        return cls(w, np.zeros(d_out, dtype=dtype))

    @classmethod
    def identity(cls, d: int, dtype=np.float64) -> Linear:
        return cls(np.eye(d, dtype=dtype), np.zeros(d, dtype=dtype))

    @classmethod
    def zeros(cls, d_in: int, d_out: int, dtype=np.float64) -> Linear:
        return cls(np.zeros((d_in, d_out), dtype=dtype), np.zeros(d_out, dtype=dtype))


@dataclass
class MLP:
    """Two linear layers with an exact-erf GELU between them."""

    fc1: Linear
    fc2: Linear

    def __post_init__(self):
        if self.fc1.d_out != self.fc2.d_in:
            raise ShapeError(f"mlp hidden dims disagree: {self.fc1.d_out} vs {self.fc2.d_in}")

    @classmethod
    def init(cls, rng, d_in: int, d_hidden: int, d_out: int, dtype=np.float64) -> MLP:
        return cls(Linear.init(rng, d_in, d_hidden, dtype), Linear.init(rng, d_hidden, d_out, dtype))


# ---------------------------------------------------------------------------
# parameter trees


def named_parameters(tree: Any, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten nested parameter dataclasses into ``{dotted.name: array}``.

    The arrays are returned by reference, so in-place edits reach the tree.
    Non-array leaves (kind tags, head counts) and ``None`` are skipped.
    """
    out: dict[str, np.ndarray] = {}
    for name, value in _children(tree):
        key = f"{prefix}{name}"
        if isinstance(value, np.ndarray):
            out[key] = value
        elif dataclasses.is_dataclass(value):
            out.update(named_parameters(value, key + "."))
    return out


def _children(tree: Any) -> Iterator[tuple[str, Any]]:
    for f in dataclasses.fields(tree):
        yield f.name, getattr(tree, f.name)


def zeros_like_tree(tree: Any) -> Any:
    changes = {}
    for name, value in _children(tree):
        if isinstance(value, np.ndarray):
            changes[name] = np.zeros_like(value)
        elif dataclasses.is_dataclass(value):
            changes[name] = zeros_like_tree(value)
    return dataclasses.replace(tree, **changes)


def add_into(acc: Any, g: Any) -> None:
    """``acc += g`` leafwise, in place."""
    for name, value in _children(acc):
        other = getattr(g, name)
        if isinstance(value, np.ndarray):
            value += other
        elif dataclasses.is_dataclass(value):
            add_into(value, other)


def copy_tree(tree: Any) -> Any:
    changes = {}
    for name, value in _children(tree):
        if isinstance(value, np.ndarray):
            changes[name] = value.copy()
        elif dataclasses.is_dataclass(value):
            changes[name] = copy_tree(value)
    return dataclasses.replace(tree, **changes)


def cast_tree(tree: Any, dtype) -> Any:
    changes = {}
    for name, value in _children(tree):
        if isinstance(value, np.ndarray):
            changes[name] = value.astype(dtype)
        elif dataclasses.is_dataclass(value):
            changes[name] = cast_tree(value, dtype)
    return dataclasses.replace(tree, **changes)


# ---------------------------------------------------------------------------
# forward-only primitives


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims disagree: {a.shape} @ {b.shape}")
    return a @ b


def _softmax_last(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(m: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row softmax of ``m / temperature`` with max subtraction."""
    if m.ndim != 2 or m.shape[1] < 1:
        raise ShapeError(f"softmax_rows expects an r x c matrix with c >= 1, got {m.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(m)):
        raise NumericError("softmax input contains non-finite values")
    return _softmax_last(m / temperature)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def layer_norm(x, gamma, beta, eps: float = LN_EPS):
    return layer_norm_forward(x, gamma, beta, eps)[0]


def mlp2(x: np.ndarray, p1: Linear, p2: Linear) -> np.ndarray:
    return mlp_forward(x, MLP(p1, p2))[0]


# ---------------------------------------------------------------------------
# differentiable ops


def linear_forward(x: np.ndarray, p: Linear):
    if x.shape[-1] != p.d_in:
        raise ShapeError(f"linear expects last dim {p.d_in}, got {x.shape}")
    return x @ p.weight + p.bias, x


def linear_backward(dy: np.ndarray, x: np.ndarray, p: Linear):
    dx = dy @ p.weight.T
    return dx, Linear(x.T @ dy, dy.sum(axis=0))


def gelu_forward(x):
    return gelu(x), x


def gelu_backward(dy, x):
    return dy * _gelu_grad(x)


def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine must have shape ({d},)")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def layer_norm_backward(dy: np.ndarray, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, rstd, gamma = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    g = dy * gamma
    dx = rstd * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def mlp_forward(x: np.ndarray, p: MLP):
    h, c1 = linear_forward(x, p.fc1)
    a, c2 = gelu_forward(h)
    y, c3 = linear_forward(a, p.fc2)
    return y, (c1, c2, c3)


def mlp_backward(dy: np.ndarray, cache, p: MLP):
    c1, c2, c3 = cache
    da, g2 = linear_backward(dy, c3, p.fc2)
    dh = gelu_backward(da, c2)
    dx, g1 = linear_backward(dh, c1, p.fc1)
    return dx, MLP(g1, g2)
