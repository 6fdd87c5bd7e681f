"""Instruction-conditioned video token compression with hybrid local/global attention."""
from .errors import ConfigError, FormatError, HicomError, NumericError, ShapeError
from .injection import ConditionEmbedding, InjectionParams
from .pipeline import (
    CompressedOutput,
    CompressorConfig,
    HicomParams,
    ablation_run,
    compress,
    init_params,
    param_groups,
    token_budget,
    toy_train_step,
)
from .tensor import load_tensor, save_tensor

__all__ = [
    "CompressedOutput",
    "CompressorConfig",
    "ConditionEmbedding",
    "ConfigError",
    "FormatError",
    "HicomError",
    "HicomParams",
    "InjectionParams",
    "NumericError",
    "ShapeError",
    "ablation_run",
    "compress",
    "init_params",
    "load_tensor",
    "param_groups",
    "save_tensor",
    "token_budget",
    "toy_train_step",
]
