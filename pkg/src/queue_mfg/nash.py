"""Decentralized equilibrium strategies, deviation experiments and convergence tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError
from .measures import GridSpec, MeasureFlow, flow_distance
from .mfg import MFGSolution, myopic_policy
from .model import ModelSpec
from .queue_sim import PrelimitConfig, SimRecord, simulate_nplayer, table_lookup

Z95 = 1.96
STRATEGY_KINDS = ("equilibrium", "constant", "table", "custom")


@dataclass(frozen=True, eq=False)
class Strategy:
    """Feedback rule ``(t, q) -> u`` for one queue.

    Tabulated kinds answer with the entry at the nearest time layer and the
    nearest node to ``q`` (clamped to [0, L]).  A ``custom`` rule wraps a
    callable and may read the empirical measure when ``uses_measure`` is set.
    """

    kind: str
    name: str
    u_min: float
    u_max: float
    values: Optional[np.ndarray] = None
    T: float = 1.0
    L: float = 1.0
    fn: Optional[Callable] = None
    uses_measure: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise DomainError(f"unknown strategy kind {self.kind!r}; valid: {list(STRATEGY_KINDS)}")
        if (self.values is None) == (self.fn is None):
            raise DomainError("a strategy needs exactly one of a table or a callable")
        if self.values is not None:
            v = np.atleast_2d(np.asarray(self.values, dtype=float))
            if np.any(v < self.u_min) or np.any(v > self.u_max):
                raise DomainError(f"strategy {self.name!r} has table entries outside U")
            v.flags.writeable = False
            object.__setattr__(self, "values", v)

    def table(self):
        if self.values is None:
            return None
        return self.values, self.T, self.L

    def __call__(self, t, q, eta=None):
        if self.values is not None:
            return table_lookup(self.values, self.T, self.L, t, q)
        u = np.asarray(self.fn(t, q, eta) if self.uses_measure else self.fn(t, q), dtype=float)
        u = np.broadcast_to(u, np.shape(q))
        if np.any(u < self.u_min) or np.any(u > self.u_max):
            raise DomainError(f"strategy {self.name!r} emitted a control outside U")
        return u


def equilibrium_strategy(sol: MFGSolution, model: Optional[ModelSpec] = None) -> Strategy:
    """The policy of ``sol`` as a lookup on (t, own scaled queue) only."""
    g = sol.grid
    c = sol.policy.controls
    lo, hi = (float(c.min()), float(c.max())) if model is None else (model.u_min, model.u_max)
    return Strategy("equilibrium", "equilibrium", lo, hi, values=c, T=g.T, L=g.L)


def constant_strategy(model: ModelSpec, u: float, name: Optional[str] = None) -> Strategy:
    return Strategy("constant", name or f"constant({u:g})", model.u_min, model.u_max,
                    values=np.array([[float(u)]]), T=model.T, L=model.L)


def table_strategy(model: ModelSpec, values, name: str = "table") -> Strategy:
    """A strategy from a (layers, nodes) table spanning [0, T] x [0, L]."""
    return Strategy("table", name, model.u_min, model.u_max, values=np.asarray(values, dtype=float),
                    T=model.T, L=model.L)


def custom_strategy(model: ModelSpec, fn: Callable, name: str = "custom", uses_measure: bool = False) -> Strategy:
    return Strategy("custom", name, model.u_min, model.u_max, fn=fn, uses_measure=uses_measure)


def myopic_strategy(model: ModelSpec, grid: GridSpec) -> Strategy:
    """Minimizer of the control cost alone, ignoring the continuation value."""
    return table_strategy(model, myopic_policy(model, grid).controls, name="myopic")


def deviation_library(model: ModelSpec, sol: MFGSolution) -> list:
    """Null check first, then the constant extremes of U and the myopic rule."""
    return [
        equilibrium_strategy(sol, model),
        constant_strategy(model, model.u_min, "u_min"),
        constant_strategy(model, model.u_max, "u_max"),
        myopic_strategy(model, sol.grid),
    ]


def report_grid(sol: MFGSolution, M: int = 100) -> GridSpec:
    g = sol.grid
    return g.coarsen(M) if g.M % M == 0 else g


class RunCache:
    """Equilibrium runs keyed by (n, e_n, seed, report grid), shared between studies."""

    def __init__(self):
        self._runs = {}
        self.hits = 0

    def get(self, model, cfg, strategy, grid) -> SimRecord:
        key = (id(strategy), cfg.n, cfg.e_n, cfg.seed, cfg.player_keys, cfg.Q0, grid)
        if key in self._runs:
            self.hits += 1
            return self._runs[key][1]
        rec = simulate_nplayer(model, cfg, strategy, grid)
        self._runs[key] = (strategy, rec)  # the strategy is kept alive so its id stays unique
        return rec

    def __len__(self):
        return len(self._runs)


def _seeds(base: int, reps: int, seed_ladder: Optional[Sequence[int]]):
    seeds = [base + k for k in range(reps)] if seed_ladder is None else [int(s) for s in seed_ladder]
    if len(seeds) != reps:
        raise DomainError(f"seed ladder has {len(seeds)} seeds for {reps} replications")
    return seeds


def _mean_se(v: np.ndarray):
    v = np.asarray(v, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


@dataclass(frozen=True)
class NashRow:
    n: int
    e_n: float
    deviation: str
    J_eq: float
    J_dev: float
    stderr_eq: float
    stderr_dev: float
    gap: float
    stderr_gap: float
    eps: float
    reps: int
    seeds: tuple

    @property
    def half_width(self) -> float:
        return Z95 * self.stderr_gap

    @property
    def violation(self) -> bool:
        return self.gap < -self.eps


@dataclass(frozen=True)
class NashReport:
    rows: list
    value_at_start: float

    def row(self, deviation: str) -> NashRow:
        for r in self.rows:
            if r.deviation == deviation:
                return r
        raise KeyError(deviation)

    @property
    def violations(self) -> list:
        return [r.deviation for r in self.rows if r.violation]


def deviation_gap(model: ModelSpec, sol: MFGSolution, cfg: PrelimitConfig, deviations: Sequence[Strategy],
                  reps: int, seed_ladder: Optional[Sequence[int]] = None, cache: Optional[RunCache] = None,
                  grid: Optional[GridSpec] = None) -> NashReport:
    """Paired comparison of player 1 (index 0) deviating against the all-equilibrium profile.

    Both profiles run on every seed of the ladder with the same clocks, so
    the gap of each replication is a paired difference.  ``eps`` is twice
    the 95% half-width of the mean gap.
    """
    if reps < 2:
        raise DomainError("deviation_gap needs reps >= 2")
    seeds = _seeds(cfg.seed, reps, seed_ladder)
    grid = grid or report_grid(sol)
    cache = cache if cache is not None else RunCache()
    eq = cache_strategy(cache, sol, model)
    base = [cache.get(model, _with_seed(cfg, s), eq, grid) for s in seeds]
    j_eq = np.array([rec.total[0] for rec in base])
    rows = []
    for beta in deviations:
        if beta is eq or _same_table(beta, eq):
            j_dev = j_eq.copy()
        else:
            profile = [beta] + [eq] * (cfg.n - 1)
            j_dev = np.array([simulate_nplayer(model, _with_seed(cfg, s), profile, grid).total[0] for s in seeds])
        d = j_dev - j_eq
        m_eq, se_eq = _mean_se(j_eq)
        m_dev, se_dev = _mean_se(j_dev)
        gap, se_gap = _mean_se(d)
        rows.append(NashRow(cfg.n, cfg.e_n, beta.name, m_eq, m_dev, se_eq, se_dev, gap, se_gap,
                            2.0 * Z95 * se_gap, reps, tuple(seeds)))
    return NashReport(rows, sol.value_at_start)


def _with_seed(cfg: PrelimitConfig, seed: int) -> PrelimitConfig:
    return PrelimitConfig(n=cfg.n, e_n=cfg.e_n, T=cfg.T, L=cfg.L, x0=cfg.x0, seed=seed,
                          player_keys=cfg.player_keys, Q0=cfg.Q0)


def _same_table(a: Strategy, b: Strategy) -> bool:
    return (a.values is not None and b.values is not None and a.values.shape == b.values.shape
            and a.T == b.T and a.L == b.L and bool(np.array_equal(a.values, b.values)))


def cache_strategy(cache: RunCache, sol: MFGSolution, model: ModelSpec) -> Strategy:
    """One equilibrium strategy object per solution, so cached runs are found again."""
    store = cache.__dict__.setdefault("_strategies", {})
    if id(sol) not in store:
        store[id(sol)] = (sol, equilibrium_strategy(sol, model))
    return store[id(sol)][1]


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    e_n: float
    value_gap: float
    stderr: float
    flow_gap: float
    stderr_flow: float
    reps: int
    mean_flow_gap: float  # distance of the replication-averaged empirical flow


@dataclass(frozen=True)
class ConvergenceTable:
    rows: list
    value_at_start: float
    seeds: tuple

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def convergence_study(model: ModelSpec, sol: MFGSolution, n_list: Sequence[int],
                      e_rule: Optional[Callable] = None, reps: int = 30,
                      seed_ladder: Optional[Sequence[int]] = None, base_seed: int = 0,
                      cache: Optional[RunCache] = None, grid: Optional[GridSpec] = None) -> ConvergenceTable:
    """Distance of the n-player equilibrium to the mean-field limit, per n.

    For every replication the expected cost of a player is estimated by the
    average over all players (they are exchangeable), and its distance to
    the value of the game is recorded together with the flow distance of the
    empirical measure to the fixed-point flow.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise DomainError("n_list must be strictly ascending")
    e_rule = e_rule or (lambda n: float(n))
    seeds = _seeds(base_seed, reps, seed_ladder)
    grid = grid or report_grid(sol)
    cache = cache if cache is not None else RunCache()
    eq = cache_strategy(cache, sol, model)
    nu_bar = sol.nu_bar.coarsen(grid) if sol.grid != grid else sol.nu_bar
    V0 = sol.value_at_start
    rows = []
    for n in n_list:
        cfg = PrelimitConfig.for_model(model, n, e_rule(n))
        vals, flows, mean_w = [], [], np.zeros_like(nu_bar.weights)
        for s in seeds:
            rec = cache.get(model, _with_seed(cfg, s), eq, grid)
            vals.append(abs(float(rec.total.mean()) - V0))
            emp = rec.empirical
            flows.append(flow_distance(emp, nu_bar))
            mean_w += emp.weights
        v, sv = _mean_se(vals)
        f, sf = _mean_se(flows)
        mean_flow = flow_distance(MeasureFlow(mean_w / reps, grid), nu_bar)
        rows.append(ConvergenceRow(n, cfg.e_n, v, sv, f, sf, reps, mean_flow))
    return ConvergenceTable(rows, V0, tuple(seeds))
