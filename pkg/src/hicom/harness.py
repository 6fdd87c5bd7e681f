"""Verification harnesses: end-to-end gradient check and the compression-ratio sweep."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .gradcheck import GradReport, grad_check
from .injection import ConditionEmbedding
from .ops import named_parameters
from .pipeline import CompressorConfig, forward, init_params, mse_loss_and_grads, token_budget
from .tensor import make_rng

SWEEP_RATIOS = ((1, 3, 3), (4, 3, 3), (4, 9, 9), (8, 9, 9))


def seeded_instance(config: CompressorConfig, seed: int, shape=(2, 3, 3), fine_len: int = 4, jitter: float = 0.3):
    """Params (jittered away from init), features, condition and a target sequence.

    The jitter keeps zero-initialised layers (the coarse regressor's output
    layer) from producing identically-zero gradients during checking.
    """
    params = init_params(config)
    rng = make_rng(seed)
    if jitter:
        for arr in params.named_parameters().values():
            arr += rng.normal(0.0, jitter, arr.shape).astype(arr.dtype)
    v = rng.normal(size=(*shape, config.dim)).astype(config.np_dtype)
    cond = ConditionEmbedding.random(rng, config.dim, fine_len, config.np_dtype)
    out, _ = forward(v, cond, params, config)
    target = rng.normal(size=out.sequence.shape).astype(config.np_dtype)
    return params, v, cond, target


def pipeline_grad_check(
    config: CompressorConfig,
    seed: int = 0,
    shape=(2, 3, 3),
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    corrupt: str | None = None,
) -> GradReport:
    """Central-difference check of every compressor parameter on an MSE objective.

    ``corrupt`` names a parameter whose analytic gradient is deliberately
    perturbed; the report must then fail.
    """
    if config.dtype != "float64":
        config = dataclasses.replace(config, dtype="float64")
    params, v, cond, target = seeded_instance(config, seed, shape)
    batch = [(v, cond, target)]
    _, grads = mse_loss_and_grads(params, batch, config)
    analytic = {k: g.copy() for k, g in named_parameters(grads).items()}
    if corrupt is not None:
        if corrupt not in analytic:
            raise KeyError(f"unknown parameter {corrupt!r}")
        analytic[corrupt] += 1.0 + np.abs(analytic[corrupt])

    def loss():
        return mse_loss_and_grads_value(params, batch, config)

    return grad_check(loss, params.named_parameters(), analytic, h=h, tol=tol, max_coords=max_coords)


def mse_loss_and_grads_value(params, batch, config) -> float:
    total = 0.0
    for v, cond, target in batch:
        seq = forward(v, cond, params, config)[0].sequence
        total += float(np.mean((seq - target) ** 2))
    return total / len(batch)


@dataclass
class SweepRow:
    ratio: tuple[int, int, int]
    budget: int
    tokens: int
    seconds: float


def ratio_sweep(
    ratios=SWEEP_RATIOS,
    frames: int = 32,
    grid=(27, 27),
    dim: int = 16,
    heads: int = 2,
    num_global: int = 32,
    seed: int = 0,
) -> list[SweepRow]:
    """Compress one synthetic clip at each ratio; report budget, produced length and wall time."""
    rng = make_rng(seed)
    v = rng.normal(size=(frames, *grid, dim))
    cond = ConditionEmbedding.random(rng, dim)
    rows = []
    for ratio in ratios:
        cfg = CompressorConfig(ratio=ratio, num_global_tokens=num_global, dim=dim, llm_dim=dim, heads=heads, seed=seed)
        params = init_params(cfg)
        t0 = time.perf_counter()
        out, _ = forward(v, cond, params, cfg)
        dt = time.perf_counter() - t0
        rows.append(SweepRow(tuple(ratio), token_budget(frames, grid, ratio, num_global), out.token_count, dt))
    return rows
