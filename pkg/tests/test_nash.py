import numpy as np
import pytest

from queue_mfg.errors import DomainError
from queue_mfg.measures import GridSpec
from queue_mfg.mfg import solve_mfg
from queue_mfg.nash import (RunCache, constant_strategy, convergence_study, custom_strategy, deviation_gap,
                            deviation_library, equilibrium_strategy, report_grid, table_strategy)
from queue_mfg.queue_sim import PrelimitConfig, simulate_nplayer


@pytest.fixture(scope="module")
def small_sol(linear, small_grid):
    return solve_mfg(linear, small_grid, tol=1e-3 * linear.L)


def test_lookup_at_nodes_is_exact(solved):
    sol = solved["sol"]
    s = equilibrium_strategy(sol)
    g, P = sol.grid, sol.policy.controls
    rng = np.random.default_rng(0)
    for m in rng.integers(0, g.M + 1, 40):
        assert np.array_equal(s(g.t[m], g.x), P[m])


def test_lookup_between_nodes_returns_a_neighbour(small_sol):
    s = equilibrium_strategy(small_sol)
    g, P = small_sol.grid, small_sol.policy.controls
    rng = np.random.default_rng(1)
    t = rng.uniform(0, g.T, 500)
    x = rng.uniform(0, g.L, 500)
    for ti, xi in zip(t, x):
        m0, j0 = int(ti // g.dt), int(xi // g.dx)
        m1, j1 = min(m0 + 1, g.M), min(j0 + 1, g.J)
        got = float(s(ti, np.array([xi]))[0])
        assert got in {P[m0, j0], P[m0, j1], P[m1, j0], P[m1, j1]}
    # values past the buffer clamp to the end nodes
    assert float(s(0.0, np.array([5.0]))[0]) == P[0, -1]


def test_uncontrolled_equilibrium_is_zero(uncontrolled):
    grid = GridSpec.for_model(uncontrolled, 40)
    s = equilibrium_strategy(solve_mfg(uncontrolled, grid, tol=1e-6), uncontrolled)
    rng = np.random.default_rng(0)
    assert np.all(s(rng.uniform(0, 1), rng.uniform(0, 2, 100)) == 0)


def test_controls_outside_U_are_refused(linear):
    with pytest.raises(DomainError):
        table_strategy(linear, np.full((2, 3), 1.5))
    bad = custom_strategy(linear, lambda t, q: np.full(np.shape(q), -2.0))
    with pytest.raises(DomainError):
        bad(0.0, np.zeros(3))


def test_library_spans_the_declared_deviations(linear, small_sol):
    names = [s.name for s in deviation_library(linear, small_sol)]
    assert names == ["equilibrium", "u_min", "u_max", "myopic"]


def test_report_shape_and_null_gap(linear, small_sol):
    cfg = PrelimitConfig.for_model(linear, 40, 40)
    devs = deviation_library(linear, small_sol)
    rep = deviation_gap(linear, small_sol, cfg, devs, reps=4)
    assert len(rep.rows) == len(devs)
    assert rep.value_at_start == small_sol.value_at_start
    null = rep.row("equilibrium")
    assert null.gap == 0.0 and null.stderr_gap == 0.0 and null.J_dev == null.J_eq
    for r in rep.rows:
        assert np.isfinite(r.stderr_gap) and r.reps == 4 and r.seeds == (0, 1, 2, 3)
        assert r.eps == pytest.approx(2 * 1.96 * r.stderr_gap)
    with pytest.raises(DomainError):
        deviation_gap(linear, small_sol, cfg, devs, reps=1)


def test_copy_of_equilibrium_table_is_also_null(linear, small_sol):
    cfg = PrelimitConfig.for_model(linear, 20, 20)
    copy = table_strategy(linear, small_sol.policy.controls.copy(), name="copy")
    assert deviation_gap(linear, small_sol, cfg, [copy], reps=3).row("copy").gap == 0.0


def test_pairing_reduces_gap_variance(linear, small_sol):
    cfg = PrelimitConfig.for_model(linear, 50, 50)
    grid = report_grid(small_sol)
    eq = equilibrium_strategy(small_sol, linear)
    dev = constant_strategy(linear, linear.u_max, "u_max")
    seeds = range(20)
    j_eq = np.array([simulate_nplayer(linear, PrelimitConfig.for_model(linear, 50, 50, seed=s), eq, grid).total[0]
                     for s in seeds])
    j_dev = np.array([simulate_nplayer(linear, PrelimitConfig.for_model(linear, 50, 50, seed=s),
                                       [dev] + [eq] * 49, grid).total[0] for s in seeds])
    paired = np.var(j_dev - j_eq, ddof=1)
    independent = np.var(j_dev - np.roll(j_eq, 7), ddof=1)
    assert paired <= independent
    rep = deviation_gap(linear, small_sol, cfg, [dev], reps=20)
    assert rep.row("u_max").gap == pytest.approx(np.mean(j_dev - j_eq), rel=1e-12)


def test_deviator_is_only_asked_about_its_own_queue(linear, small_sol):
    calls = []

    def rule(*args):
        calls.append(len(args))
        return np.zeros_like(args[1])

    cfg = PrelimitConfig.for_model(linear, 10, 10)
    deviation_gap(linear, small_sol, cfg, [custom_strategy(linear, rule, "probe")], reps=2)
    assert calls and set(calls) == {2}


def test_convergence_table_shape(linear, small_sol):
    cache = RunCache()
    tab = convergence_study(linear, small_sol, [10, 20], reps=3, cache=cache)
    assert [r.n for r in tab.rows] == [10, 20]
    assert tab.column("e_n").tolist() == [10.0, 20.0]
    for r in tab.rows:
        assert r.reps == 3 and np.isfinite(r.stderr) and np.isfinite(r.stderr_flow)
    assert len(cache) == 6
    again = convergence_study(linear, small_sol, [10, 20], reps=3, cache=cache)
    assert cache.hits == 6 and again.column("value_gap").tolist() == tab.column("value_gap").tolist()
    with pytest.raises(DomainError):
        convergence_study(linear, small_sol, [20, 10], reps=3)


def test_uncontrolled_values_approach_the_hjb_value(uncontrolled):
    grid = GridSpec.for_model(uncontrolled, 100)
    sol = solve_mfg(uncontrolled, grid, tol=1e-6)
    tab = convergence_study(uncontrolled, sol, [20, 80, 320], reps=12)
    gaps = tab.column("value_gap")
    assert gaps[-1] < gaps[0]
    assert gaps[-1] <= 0.05 * abs(sol.value_at_start)
