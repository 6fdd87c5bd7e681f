import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hicom.pipeline import CompressorConfig
from hicom.tensor import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def tiny_config():
    return CompressorConfig(ratio=(2, 2, 2), num_global_tokens=3, dim=16, llm_dim=16, heads=2, seed=7)


def jitter(tree, rng, scale=0.3):
    from hicom.ops import named_parameters

    for arr in named_parameters(tree).values():
        arr += rng.normal(0.0, scale, arr.shape)
    return tree


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    results = getattr(acc, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
