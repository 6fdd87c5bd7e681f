"""End-to-end conditional compressor: local + global branches, projectors, budgets, training groups."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .global_compressor import GlobalOutput, GlobalParams, global_backward, global_forward
from .injection import ALLOWED, ConditionEmbedding, check_level
from .local_compressor import (
    GroupGrid,
    LocalAttnParams,
    LocalOutput,
    ceil_div,
    group_partition,
    local_backward,
    local_forward,
)
from .ops import MLP, add_into, copy_tree, mlp_backward, mlp_forward, named_parameters, zeros_like_tree
from .posembed import split_channels
from .tensor import make_rng, resolve_dtype

MODES = ("avg-pool", "local-only", "global-only", "local+global")
INJECTION_TAG = ".injection."
# conditional pre-training rates: injection params vs the rest of the compressor
DEFAULT_LRS = {"injection": 1e-3, "other": 1e-4}


@dataclass
class CompressorConfig:
    ratio: tuple[int, int, int] = (4, 3, 3)
    num_global_tokens: int = 32
    dim: int = 64
    llm_dim: int = 64
    heads: int = 8
    local_injection: str = "direct"
    global_injection: str = "coarse"
    conditional_local: bool = True
    conditional_global: bool = True
    pos_embed: bool = True
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        self.ratio = tuple(int(r) for r in self.ratio)
        self.validate()

    def validate(self) -> None:
        if len(self.ratio) != 3 or any(r < 1 for r in self.ratio):
            raise ConfigError(f"ratio must be three integers >= 1, got {self.ratio}")
        for name in ("num_global_tokens", "dim", "llm_dim", "heads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by {self.heads} heads")
        if self.local_injection not in ALLOWED["local"]:
            raise ConfigError(f"local_injection must be one of {ALLOWED['local']}, got {self.local_injection!r}")
        check_level(self.global_injection, "global")
        if self.pos_embed:
            split_channels(self.dim)
        resolve_dtype(self.dtype)

    @property
    def np_dtype(self) -> np.dtype:
        return resolve_dtype(self.dtype)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ratio"] = list(self.ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CompressorConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> CompressorConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class HicomParams:
    local_branch: LocalAttnParams
    global_branch: GlobalParams
    local_proj: MLP
    global_proj: MLP

    def named_parameters(self) -> dict[str, np.ndarray]:
        return named_parameters(self)

    def num_parameters(self) -> int:
        return sum(a.size for a in self.named_parameters().values())


def init_params(config: CompressorConfig) -> HicomParams:
    rng = make_rng(config.seed)
    dt = config.np_dtype
    d, dl, h = config.dim, config.llm_dim, config.heads
    local = LocalAttnParams.init(rng, d, h, config.local_injection if config.conditional_local else None, dt)
    glob = GlobalParams.init(
        rng, d, h, config.num_global_tokens, config.global_injection if config.conditional_global else None, dt
    )
    return HicomParams(local, glob, MLP.init(rng, d, dl, dl, dt), MLP.init(rng, d, dl, dl, dt))


@dataclass
class CompressedOutput:
    local_tokens: np.ndarray  # (n_local, llm_dim) after projection
    global_tokens: np.ndarray  # (N_L, llm_dim) after projection
    local: Optional[LocalOutput] = field(default=None, repr=False)
    global_: Optional[GlobalOutput] = field(default=None, repr=False)

    @property
    def sequence(self) -> np.ndarray:
        return np.concatenate([self.local_tokens, self.global_tokens], axis=0)

    @property
    def token_count(self) -> int:
        return self.local_tokens.shape[0] + self.global_tokens.shape[0]


@dataclass
class ParamGroups:
    injection: dict[str, np.ndarray]
    other: dict[str, np.ndarray]

    def group_of(self, name: str) -> str:
        return "injection" if name in self.injection else "other"


def token_budget(frames: int, grid: Sequence[int], ratio: Sequence[int], num_global: int) -> int:
    """Sequence length handed to the language model: local groups plus global tokens."""
    h, w = grid
    a_t, a_h, a_w = ratio
    if min(frames, h, w, a_t, a_h, a_w) < 1 or num_global < 0:
        raise ConfigError("token_budget arguments must be positive")
    return ceil_div(frames, a_t) * ceil_div(h, a_h) * ceil_div(w, a_w) + num_global


def param_groups(params: HicomParams) -> ParamGroups:
    inj, other = {}, {}
    for name, arr in params.named_parameters().items():
        (inj if INJECTION_TAG in f".{name}" else other)[name] = arr
    return ParamGroups(inj, other)


def _check_inputs(v: np.ndarray, cond: ConditionEmbedding, config: CompressorConfig):
    if v.ndim != 4:
        raise ShapeError(f"video features must be T x H x W x D, got {v.shape}")
    if v.shape[-1] != config.dim:
        raise ShapeError(f"feature dim {v.shape[-1]} does not match config dim {config.dim}")
    if cond.dim != config.dim:
        raise ShapeError(f"condition dim {cond.dim} does not match config dim {config.dim}")


def forward(
    v: np.ndarray,
    cond: ConditionEmbedding,
    params: HicomParams,
    config: CompressorConfig,
    mode: str = "local+global",
    conditional: bool | None = None,
    workers: int = 1,
):
    """Run the compressor and return ``(CompressedOutput, cache)``.

    ``conditional`` overrides both per-level flags of ``config`` when given;
    an unconditional level queries with the pooled group token (local) or the
    raw learnable tokens (global).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    _check_inputs(v, cond, config)
    dt = config.np_dtype
    v = v.astype(dt, copy=False)
    cond = cond.astype(dt)
    cond_local = config.conditional_local if conditional is None else conditional
    cond_global = config.conditional_global if conditional is None else conditional
    local_p = params.local_branch if cond_local else dataclasses.replace(params.local_branch, injection=None)
    global_p = params.global_branch if cond_global else dataclasses.replace(params.global_branch, injection=None)
    if cond_local and local_p.injection is None or cond_global and global_p.injection is None:
        raise ConfigError("conditional compression requested but parameters carry no injection")

    grid = group_partition(v, config.ratio)
    empty = np.zeros((0, config.llm_dim), dtype=dt)
    local_out = global_out = None
    local_tokens, global_tokens = empty, empty
    c_local = c_lproj = c_global = c_gproj = None

    if mode == "avg-pool":
        pooled = np.stack([v[grid.bounds(i)].reshape(-1, config.dim).mean(axis=0) for i in grid.indices()])
        local_tokens, c_lproj = mlp_forward(pooled, params.local_proj)
    elif mode in ("local-only", "local+global"):
        local_out, c_local = local_forward(v, cond, local_p, grid, workers)
        local_tokens, c_lproj = mlp_forward(local_out.tokens(), params.local_proj)
    if mode in ("global-only", "local+global"):
        global_out, c_global = global_forward(v, cond, global_p, config.pos_embed)
        global_tokens, c_gproj = mlp_forward(global_out.z, params.global_proj)

    out = CompressedOutput(local_tokens, global_tokens, local_out, global_out)
    cache = dict(mode=mode, local_p=local_p, global_p=global_p, c_local=c_local, c_lproj=c_lproj,
                 c_global=c_global, c_gproj=c_gproj)
    return out, cache


def backward(dseq: np.ndarray, cache, params: HicomParams) -> HicomParams:
    """Gradients of all parameters given the upstream gradient on the output sequence."""
    grads = zeros_like_tree(params)
    n_local = 0
    if cache["c_lproj"] is not None:
        n_local = cache["c_lproj"][0].shape[0]
        dz_l, g = mlp_backward(dseq[:n_local], cache["c_lproj"], params.local_proj)
        grads.local_proj = g
        if cache["c_local"] is not None:
            g_local = local_backward(dz_l, cache["c_local"], cache["local_p"])
            _merge_branch(grads.local_branch, g_local)
    if cache["c_gproj"] is not None:
        dz_g, g = mlp_backward(dseq[n_local:], cache["c_gproj"], params.global_proj)
        grads.global_proj = g
        g_global = global_backward(dz_g, cache["c_global"], cache["global_p"])
        _merge_branch(grads.global_branch, g_global)
    return grads


def _merge_branch(target, g) -> None:
    # unconditional runs differentiate a copy without injection; those grads stay zero
    for f in dataclasses.fields(g):
        value = getattr(g, f.name)
        if value is not None:
            setattr(target, f.name, value)


def compress(v, cond, config: CompressorConfig, params: HicomParams | None = None, workers: int = 1) -> CompressedOutput:
    if params is None:
        params = init_params(config)
    return forward(v, cond, params, config, "local+global", None, workers)[0]


def ablation_run(mode: str, conditional: bool, v, cond, config: CompressorConfig, params: HicomParams | None = None):
    if params is None:
        params = init_params(config)
    return forward(v, cond, params, config, mode, conditional)[0]


def mse_loss_and_grads(
    params: HicomParams,
    batch: Sequence[tuple[np.ndarray, ConditionEmbedding, np.ndarray]],
    config: CompressorConfig,
    mode: str = "local+global",
):
    """Mean over the batch of per-sample mean squared error against a target sequence."""
    total = 0.0
    grads = zeros_like_tree(params)
    for v, cond, target in batch:
        out, cache = forward(v, cond, params, config, mode)
        seq = out.sequence
        if target.shape != seq.shape:
            raise ShapeError(f"target {target.shape} does not match sequence {seq.shape}")
        diff = seq - target
        total += float(np.mean(diff * diff))
        add_into(grads, backward(2.0 * diff / (diff.size * len(batch)), cache, params))
    return total / len(batch), grads


def toy_train_step(
    params: HicomParams,
    batch,
    config: CompressorConfig,
    lrs: dict[str, float] | None = None,
    mode: str = "local+global",
):
    """One plain gradient-descent step; returns ``(new_params, loss_before_step)``."""
    lrs = DEFAULT_LRS if lrs is None else lrs
    loss, grads = mse_loss_and_grads(params, batch, config, mode)
    new = copy_tree(params)
    groups = param_groups(new)
    g_named = named_parameters(grads)
    for name, arr in new.named_parameters().items():
        lr = lrs[groups.group_of(name)]
        if lr:
            arr -= lr * g_named[name]
    return new, loss

