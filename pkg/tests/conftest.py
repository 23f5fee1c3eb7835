import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable

from dmtrav.demo import run_demo
from dmtrav.features import init_weights, reference_spec


@pytest.fixture(scope="session")
def reference():
    """(spec, weights) for the built-in desk extractor at its documented seed."""
    spec = reference_spec()
    return spec, init_weights(spec, 42)


@pytest.fixture(scope="session")
def demo_runs(tmp_path_factory):
    """Two full demo runs with the same seed, for the end-to-end criteria.

    Returns (outcome, dir_a, dir_b, seconds_per_run).
    """
    base = tmp_path_factory.mktemp("demo")
    t0 = time.perf_counter()
    outcome = run_demo(0, base / "a", quiet=True)
    elapsed = time.perf_counter() - t0
    run_demo(0, base / "b", quiet=True)
    return outcome, base / "a", base / "b", elapsed


def seeded_instance(seed: int, K: int, D: int, m: int | None = None):
    """Random feature matrix with a valid block split, as (V, m, n)."""
    rng = np.random.default_rng(seed)
    if m is None:
        m = (K - 1) // 2
    n = K - 1 - m
    return rng.standard_normal((K, D)), m, n
