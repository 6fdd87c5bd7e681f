"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NumericError

# Relative error is |a - n| / max(|a|, |n|, floor) with floor = REL_FLOOR * max(1, |f|).
# The floor keeps round-off on structurally zero gradients (e.g. key biases,
# which shift every score of a softmax row equally) from reading as failure.
REL_FLOOR = 1e-5


@dataclass
class ParamCheck:
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    coords_checked: int


@dataclass
class GradReport:
    tol: float
    h: float
    params: dict[str, ParamCheck] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.params.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "h": self.h,
            "max_rel_error": self.max_rel_error,
            "params": {k: asdict(v) for k, v in self.params.items()},
        }


def rel_error(a: float, n: float, floor: float = REL_FLOOR) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradReport:
    """Compare ``analytic`` against central differences of ``f``.

    ``f`` takes no arguments and reads ``params`` by reference; each array is
    perturbed in place and restored. ``max_coords`` optionally subsamples
    coordinates per parameter (all are checked by default).
    """
    report = GradReport(tol=tol, h=h)
    base = f()
    if not np.isfinite(base):
        raise NumericError("objective is not finite at the probe point")
    floor = REL_FLOOR * max(1.0, abs(base))
    for name, arr in params.items():
        g = np.asarray(analytic[name])
        if g.shape != arr.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {arr.shape}")
        if not arr.flags.c_contiguous:
            raise ValueError(f"parameter {name} is not contiguous; cannot perturb in place")
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False))
        worst = ParamCheck(0.0, (), 0.0, 0.0, len(idx))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            if not np.isfinite(num):
                raise NumericError(f"non-finite difference quotient at {name}[{i}]")
            ana = float(g.reshape(-1)[i])
            err = rel_error(ana, num, floor)
            if err >= worst.max_rel_error:
                worst = ParamCheck(
                    err, tuple(int(j) for j in np.unravel_index(i, arr.shape)), ana, float(num), len(idx)
                )
        report.params[name] = worst
    return report
