import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from queue_mfg import mfg
from queue_mfg.cli import Scenario, run_scenario
from queue_mfg.forward import simulate_particles
from queue_mfg.measures import GridSpec
from queue_mfg.model import make_builtin_model

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

PARTICLES = 100_000
PARTICLE_SEED = 11


@pytest.fixture(scope="session")
def linear():
    return make_builtin_model("linear-mf")


@pytest.fixture(scope="session")
def uncontrolled():
    return make_builtin_model("uncontrolled")


@pytest.fixture(scope="session")
def grid200(linear):
    return GridSpec.for_model(linear, 200)


@pytest.fixture(scope="session")
def small_grid(linear):
    return GridSpec.for_model(linear, 40)


class _RowRecorder:
    """Wraps propagate_fp and keeps the worst row-sum error of every call."""

    def __init__(self, fn):
        self.fn = fn
        self.errors = []

    def __call__(self, *args, **kwargs):
        out = self.fn(*args, **kwargs)
        self.errors.append(float(np.abs(out.weights.sum(axis=1) - 1.0).max()))
        return out


@pytest.fixture(scope="session")
def solved(linear, grid200):
    """The default fixed point, with solve time and the row errors of every forward pass."""
    original = mfg.propagate_fp
    recorder = _RowRecorder(original)
    mfg.propagate_fp = recorder
    try:
        start = time.perf_counter()
        sol = mfg.solve_mfg(linear, grid200, tol=1e-3 * linear.L, max_iters=50, omega=0.5)
        elapsed = time.perf_counter() - start
    finally:
        mfg.propagate_fp = original
    return {"sol": sol, "seconds": elapsed, "row_errors": recorder.errors}


@pytest.fixture(scope="session")
def particles(linear, solved):
    sol = solved["sol"]
    start = time.perf_counter()
    batch = simulate_particles(linear, sol.grid, sol.policy, sol.nu_bar, linear.x0, PARTICLES, PARTICLE_SEED)
    return {"batch": batch, "seconds": time.perf_counter() - start}


@pytest.fixture(scope="session")
def study_runs(tmp_path_factory):
    """The default study, run twice into separate directories."""
    runs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"study{k}")
        start = time.perf_counter()
        files = run_scenario(Scenario(), "study", out, log=lambda *a: None)
        runs.append({"out": out, "files": files, "seconds": time.perf_counter() - start})
    return runs
