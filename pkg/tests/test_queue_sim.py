import dataclasses

import numpy as np
import pytest

from oracles import direct_histogram
from queue_mfg.errors import ConfigurationError, DomainError
from queue_mfg.measures import GridSpec
from queue_mfg.model import with_costs
from queue_mfg.nash import constant_strategy, table_strategy
from queue_mfg.queue_sim import PrelimitConfig, empirical_flow, player_cost, simulate_nplayer
from queue_mfg.skorohod import reflect_path


def zeros(*args):
    return np.zeros(np.shape(args[-1]))


@pytest.fixture(scope="module")
def report(linear):
    return GridSpec(J=200, M=100, L=linear.L, T=linear.T)


@pytest.fixture(scope="module")
def ramp(linear):
    """A state-dependent table strategy pushing toward the middle of the buffer."""
    x = np.linspace(0, linear.L, 201)
    return table_strategy(linear, np.tile(np.clip(1.0 - x, -1, 1), (11, 1)), name="ramp")


def run(model, n, e_n, strategy, grid, seed=0, **kw):
    cfg = PrelimitConfig.for_model(model, n, e_n, seed=seed, **{k: v for k, v in kw.items() if k != "engine"})
    return simulate_nplayer(model, cfg, strategy, grid, engine=kw.get("engine", "auto"))


def test_config_buffer_and_initial_queues(linear):
    cfg = PrelimitConfig.for_model(linear, 10, 200)
    assert cfg.Ln == int(np.ceil(np.sqrt(200) * linear.L))
    assert cfg.Q0 == (round(np.sqrt(200) * linear.x0),) * 10
    assert PrelimitConfig.for_model(linear, 3, 100).Ln == 20
    with pytest.raises(DomainError):
        PrelimitConfig.for_model(linear, 2, 100, Q0=(0, 21))
    with pytest.raises(DomainError):
        PrelimitConfig.for_model(linear, 2, 0.0)


@pytest.mark.parametrize("engine", ["numba", "python"])
def test_same_seed_same_record(linear, report, ramp, engine):
    a = run(linear, 20, 50, ramp, report, seed=3, engine=engine)
    b = run(linear, 20, 50, ramp, report, seed=3, engine=engine)
    for f in ("Q", "controls", "Y", "R", "running", "terminal", "lower", "upper", "counts"):
        assert np.array_equal(getattr(a, f), getattr(b, f)), f
    assert a.event_count == b.event_count > 0
    c = run(linear, 20, 50, ramp, report, seed=4, engine=engine)
    assert not np.array_equal(a.Q, c.Q)


def test_engines_agree(linear, report, ramp):
    a = run(linear, 30, 80, ramp, report, seed=1, engine="numba")
    b = run(linear, 30, 80, ramp, report, seed=1, engine="python")
    assert np.array_equal(a.Q, b.Q) and np.array_equal(a.controls, b.controls)
    assert a.event_count == b.event_count
    np.testing.assert_allclose(a.total, b.total, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.Y, b.Y, rtol=0, atol=1e-12)


def test_compiled_engine_refuses_callables(linear, report):
    with pytest.raises(ConfigurationError):
        run(linear, 3, 10, lambda t, q: np.zeros_like(q), report, engine="numba")


def test_record_invariants(linear, report, ramp):
    rec = run(linear, 40, 100, ramp, report, seed=2)
    assert rec.Q.dtype.kind == "i"
    assert rec.Q.min() >= 0 and rec.Q.max() <= rec.cfg.Ln
    q = rec.scaled_paths
    assert q.min() >= 0 and q.max() <= rec.scaled_buffer
    for z in (rec.Y, rec.R):
        assert np.all(z[:, 0] == 0) and np.all(np.diff(z, axis=1) >= 0)
    assert np.abs(rec.empirical.weights.sum(axis=1) - 1).max() <= 1e-12
    assert rec.controls.min() >= linear.u_min and rec.controls.max() <= linear.u_max


def test_empirical_flow_of_identical_players(linear, report, ramp):
    rec = run(linear, 10, 100, ramp, report, seed=0)
    v = 0.73
    # every player parked at the same scaled value v
    same = dataclasses.replace(rec, Q=np.full(rec.Q.shape, v * rec.cfg.scale))
    coarse = GridSpec(J=50, M=20, L=linear.L, T=linear.T)
    flow = empirical_flow(same, coarse)
    node = int(np.rint(v / coarse.dx))
    assert np.all(flow.weights[:, node] == 1.0)


def test_empirical_flow_matches_direct_counts(linear, report, ramp):
    rec = run(linear, 37, 150, ramp, report, seed=5)
    coarse = GridSpec(J=40, M=25, L=linear.L, T=linear.T)
    flow = empirical_flow(rec, coarse)
    stride = report.M // coarse.M
    for m in range(coarse.M + 1):
        ref = direct_histogram(rec.scaled_paths[:, m * stride], coarse.J, linear.L)
        np.testing.assert_allclose(flow.weights[m], ref, atol=1e-15)
    with pytest.raises(DomainError):
        empirical_flow(rec, GridSpec(J=40, M=30, L=linear.L, T=linear.T))


def test_constant_terminal_and_unit_running_costs(linear, report, ramp):
    const = with_costs(linear, f0=zeros, f1=zeros, g=lambda eta, x: np.full(np.shape(x), 1.75),
                       y=lambda t, eta: 0.0, r=lambda t, eta: 0.0)
    rec = run(const, 8, 100, ramp, report, seed=1)
    assert rec.engine == "python"
    for i in range(8):
        assert player_cost(const, rec, i).total == 1.75
    unit = with_costs(const, f0=lambda t, eta, x: np.ones(np.shape(x)), g=zeros)
    rec = run(unit, 8, 100, ramp, report, seed=1)
    for i in range(8):
        c = player_cost(unit, rec, i)
        assert c.total == pytest.approx(unit.T, abs=1e-12)
        assert player_cost(unit, rec, i, nu_for_cost=rec.empirical).total == pytest.approx(unit.T, abs=1e-12)


def test_costs_nonnegative_and_index_checked(linear, report, ramp):
    rec = run(linear, 25, 100, ramp, report, seed=6)
    for i in range(25):
        c = player_cost(linear, rec, i)
        assert min(c.running, c.terminal, c.lower_boundary, c.upper_boundary) >= 0
        assert c.total == pytest.approx(rec.total[i], rel=1e-15)
    with pytest.raises(DomainError):
        player_cost(linear, rec, 25)


def test_left_sum_costs_track_event_accumulators(linear, report, ramp):
    rec = run(linear, 50, 200, ramp, report, seed=7)
    ev = np.array([player_cost(linear, rec, i).total for i in range(50)])
    left = np.array([player_cost(linear, rec, i, nu_for_cost=rec.empirical).total for i in range(50)])
    assert np.abs(ev - left).mean() <= 0.05 * np.abs(ev).mean()


def test_pushing_only_at_the_boundaries(linear, report):
    low = constant_strategy(linear, -1.0, "down")
    cfg = PrelimitConfig.for_model(linear, 4, 100, seed=2, trace=True, Q0=(1, 3, 19, 20))
    rec = simulate_nplayer(linear, cfg, [low, low, constant_strategy(linear, 1.0, "up"),
                                         constant_strategy(linear, 1.0, "up")], report)
    tr = rec.trace
    dY, dR = np.diff(tr["Y"], axis=0), np.diff(tr["R"], axis=0)
    before = tr["Q"][:-1]
    assert np.all(before[dY > 0] == 0)
    assert np.all(before[dR > 0] == cfg.Ln)
    assert rec.Y[:2, -1].min() > 0 and rec.R[2:, -1].min() > 0


@pytest.mark.parametrize("e_n", [100, 400])
def test_skorohod_reconstruction(linear, report, ramp, e_n):
    cfg = PrelimitConfig.for_model(linear, 5, e_n, seed=9, trace=True)
    rec = simulate_nplayer(linear, cfg, ramp, report)
    tr = rec.trace
    s = cfg.scale
    q = tr["Q"] / s
    # exact identity Q~ = psi + Y~ - R~ at every event
    assert np.abs(q - (tr["psi"] + tr["Y"] - tr["R"])).max() <= 1e-9
    for i in range(cfg.n):
        out = reflect_path(tr["psi"][:, i], cfg.Ln / s)
        assert np.abs(out.phi - q[:, i]).max() <= 2 / s
        assert np.abs(out.zeta1 - tr["Y"][:, i]).max() <= 2 / s
        assert np.abs(out.zeta2 - tr["R"][:, i]).max() <= 2 / s


def test_exchangeable_players(linear, report, ramp):
    n = 12
    perm = np.random.default_rng(0).permutation(n)
    keys = tuple(range(100, 100 + n))
    q0 = tuple(int(v) for v in np.random.default_rng(1).integers(0, 20, n))
    a = simulate_nplayer(linear, PrelimitConfig.for_model(linear, n, 100, seed=3, player_keys=keys, Q0=q0),
                         ramp, report)
    b = simulate_nplayer(linear, PrelimitConfig.for_model(
        linear, n, 100, seed=3, player_keys=tuple(keys[k] for k in perm), Q0=tuple(q0[k] for k in perm)),
        ramp, report)
    for f in ("Q", "Y", "R", "running", "terminal", "lower", "upper"):
        assert np.array_equal(getattr(b, f), getattr(a, f)[perm]), f
    assert np.array_equal(a.counts, b.counts)


def test_clipping_is_reported_for_small_scale(linear, report):
    rec = run(linear, 5, 0.25, constant_strategy(linear, -1.0), report, seed=0)
    assert rec.clip_fraction > 0.10
    assert any("clipped" in w for w in rec.warnings)
    ok = run(linear, 5, 200, constant_strategy(linear, -1.0), report, seed=0)
    assert ok.warnings == () and ok.clip_count == 0


def test_decentralized_strategies_never_see_the_measure(linear, report):
    calls = []

    def rule(*args):
        calls.append(len(args))
        return np.zeros_like(args[1])

    run(linear, 6, 50, rule, report, seed=0)
    assert calls and set(calls) == {2}


def test_measure_reading_deviation_receives_the_histogram(linear, report):
    seen = []

    class Reader:
        uses_measure = True

        def __call__(self, t, q, eta):
            seen.append(float(np.sum(eta)))
            return np.zeros_like(q)

    run(linear, 6, 50, [Reader()] + [constant_strategy(linear, 0.0)] * 5, report, seed=0)
    assert seen and np.allclose(seen, 1.0)
