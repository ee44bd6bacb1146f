"""Event-driven simulation of the controlled n-queue prelimit.

Queue ``i`` has arrival rate ``lambda_hat e_n + lambda(t, nu_n, Q_i / s, u_i) s``
and service rate ``mu_hat e_n + mu(...) s`` with ``s = sqrt(e_n)``, both
clipped at zero and gated by ``Q_i < L_n`` and ``Q_i > 0``.  Each
(queue, channel) pair owns a unit-rate Poisson clock read through its
integrated intensity (next-reaction form).  Changing one player's strategy
therefore leaves the clocks of all the others untouched, and runs that
share a seed are strongly paired.

Rates and controls of every queue are refreshed at each event and at each
report stamp and frozen in between.  Two engines implement the same loop:
a generic one that calls the model and strategies as Python callables,
and a compiled one for the built-in model families driven by tabulated
strategies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from . import streams
from .errors import ConfigurationError, DomainError
from .measures import GridSpec, MeasureFlow, histogram, node_positions
from .model import ModelSpec

CLIP_WARN = 0.10
STREAM_BLOCK = 256
ENGINES = ("auto", "numba", "python")
_PSI_CODES = {"x": 0, "x2": 1, "const": 2}


@dataclass(frozen=True)
class PrelimitConfig:
    n: int
    e_n: float
    T: float
    L: float
    x0: float
    seed: int = 0
    player_keys: Optional[tuple] = None
    Q0: Optional[tuple] = None
    trace: bool = False
    Ln: int = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("need at least one player")
        if not self.e_n > 0:
            raise DomainError(f"e_n must be > 0, got {self.e_n}")
        if not (self.T > 0 and self.L > 0 and 0 <= self.x0 <= self.L):
            raise DomainError("need T > 0, L > 0 and x0 in [0, L]")
        # rounding keeps ceil from overshooting when sqrt(e_n) L is an integer
        object.__setattr__(self, "Ln", int(math.ceil(round(math.sqrt(self.e_n) * self.L, 9))))
        keys = tuple(range(self.n)) if self.player_keys is None else tuple(int(k) for k in self.player_keys)
        if len(keys) != self.n or len(set(keys)) != self.n:
            raise DomainError("player_keys must be n distinct integers")
        object.__setattr__(self, "player_keys", keys)
        if self.Q0 is None:
            q = min(max(int(round(math.sqrt(self.e_n) * self.x0)), 0), self.Ln)
            object.__setattr__(self, "Q0", (q,) * self.n)
        else:
            q0 = tuple(int(q) for q in self.Q0)
            if len(q0) != self.n or min(q0) < 0 or max(q0) > self.Ln:
                raise DomainError(f"initial queues must be n integers in [0, L_n={self.Ln}]")
            object.__setattr__(self, "Q0", q0)

    @property
    def scale(self) -> float:
        return math.sqrt(self.e_n)

    @classmethod
    def for_model(cls, model: ModelSpec, n: int, e_n: Optional[float] = None, seed: int = 0, **kw):
        """Configuration on the model's horizon and buffer; ``e_n`` defaults to ``n``."""
        return cls(n=n, e_n=float(n if e_n is None else e_n), T=model.T, L=model.L, x0=model.x0,
                   seed=seed, **kw)


@dataclass(frozen=True, eq=False)
class SimRecord:
    """One prelimit run, sampled on the stamps of ``report_grid``.

    Per-player arrays are (n, stamps).  The cost accumulators integrate
    between consecutive events, so they are finer than the sampled paths.
    ``martingale`` is the compensated part ``(A - int a) / s - (D - int d) / s``
    and ``drift_integral`` is ``int (lambda - mu) / s``, both with the
    clipped rates.
    """

    cfg: PrelimitConfig
    report_grid: GridSpec
    Q: np.ndarray
    controls: np.ndarray
    Y: np.ndarray
    R: np.ndarray
    drift_integral: np.ndarray
    martingale: np.ndarray
    counts: np.ndarray  # (stamps, J+1) players per nearest node
    running: np.ndarray
    terminal: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    event_count: int
    clip_count: int
    rate_evaluations: int
    engine: str
    warnings: tuple = ()
    trace: Optional[dict] = None

    @property
    def n(self) -> int:
        return self.cfg.n

    @property
    def seed(self) -> int:
        return self.cfg.seed

    @property
    def scaled_paths(self) -> np.ndarray:
        return self.Q / self.cfg.scale

    @property
    def scaled_buffer(self) -> float:
        return self.cfg.Ln / self.cfg.scale

    @property
    def clip_fraction(self) -> float:
        return self.clip_count / self.rate_evaluations if self.rate_evaluations else 0.0

    @property
    def empirical(self) -> MeasureFlow:
        return MeasureFlow(self.counts / self.cfg.n, self.report_grid)

    @property
    def total(self) -> np.ndarray:
        return self.running + self.terminal + self.lower + self.upper


def table_lookup(values: np.ndarray, T: float, L: float, t, x):
    """Nearest time layer and nearest node of a table on [0, T] x [0, L]."""
    Mt, Jt = values.shape[0] - 1, values.shape[1] - 1
    m = 0 if Mt == 0 else min(max(int(np.rint(t / (T / Mt))), 0), Mt)
    if Jt == 0:
        return np.full(np.shape(x), values[m, 0])
    j = np.clip(np.rint(np.asarray(x, dtype=float) / (L / Jt)).astype(np.int64), 0, Jt)
    return values[m, j]


class _Clocks:
    """Unit exponentials in fixed blocks, one stream per (player key, channel)."""

    def __init__(self, seed, keys):
        self.seed = seed
        self.tags = [streams.queue_tag(k, ch) for ch in (0, 1) for k in keys]
        self.buf = np.stack([streams.exponentials(seed, tag, 0, STREAM_BLOCK) for tag in self.tags])
        self.block = np.zeros(len(self.tags), dtype=np.int64)
        self.pos = np.ones(len(self.tags), dtype=np.int64)

    def first(self) -> np.ndarray:
        return self.buf[:, 0].copy()

    def refill(self, c: int) -> None:
        self.block[c] += 1
        start = int(self.block[c]) * STREAM_BLOCK
        self.buf[c] = streams.exponentials(self.seed, self.tags[c], start, STREAM_BLOCK)
        self.pos[c] = 0

    def next(self, c: int) -> float:
        if self.pos[c] == STREAM_BLOCK:
            self.refill(c)
        k = self.pos[c]
        self.pos[c] = k + 1
        return float(self.buf[c, k])


def _profile(strategies, n):
    """Distinct strategies and, per player, the index of the one it plays."""
    if callable(strategies):
        return [strategies], np.zeros(n, dtype=np.int64)
    strategies = list(strategies)
    if len(strategies) != n:
        raise DomainError(f"need one strategy per player ({n}), got {len(strategies)}")
    distinct, owner = [], np.empty(n, dtype=np.int64)
    for i, s in enumerate(strategies):
        for k, d in enumerate(distinct):
            if d is s:
                owner[i] = k
                break
        else:
            owner[i] = len(distinct)
            distinct.append(s)
    return distinct, owner


def _linear_coefficients(model: ModelSpec):
    """Rate and cost coefficients of a built-in family, or None for other models.

    Both families have ``lambda = la u``, ``mu = ma u``, ``f1 = kappa u^2 / 2``,
    constant ``y`` and ``r``, and ``f0`` affine in ``psi1(x)`` and one moment.
    """
    if model.builtin not in ("linear-mf", "uncontrolled"):
        return None
    p = model.params
    if model.builtin == "linear-mf":
        la, ma, kappa = p["split"], p["split"] - 1.0, p["kappa"]
    else:
        la = ma = kappa = 0.0
    coef = np.array([la, ma, kappa, p["run_const"], p["run_slope"], p["a1"], p["a1_slope"], p["c1"],
                     p["y"], p["r"]])
    return coef, _PSI_CODES[p["psi1"]]


def _tables(distinct):
    """Flatten the tables of all strategies, or None if one of them is not tabulated."""
    flat, ints, floats = [], [], []
    offset = 0
    for s in distinct:
        tab = s.table() if hasattr(s, "table") and not getattr(s, "uses_measure", False) else None
        if tab is None:
            return None
        values, T, L = tab
        values = np.ascontiguousarray(values, dtype=float)
        Mt, Jt = values.shape[0] - 1, values.shape[1] - 1
        ints.append((offset, Mt, Jt))
        floats.append((T / Mt if Mt else 0.0, L / Jt if Jt else 0.0))
        flat.append(values.ravel())
        offset += values.size
    return np.concatenate(flat), np.array(ints, dtype=np.int64), np.array(floats, dtype=float)


@numba.njit(cache=True)
def _psi(code, x):
    if code == 0:
        return x
    if code == 1:
        return x * x
    return 1.0


@numba.njit(cache=True)
def _refresh(t, Q, x, u, rates, owner, tab, tab_i, tab_f, coef, psi_code, eta, xnodes,
             s, Ln, base_lam, base_mu, counters):
    n = Q.shape[0]
    la, ma, kappa = coef[0], coef[1], coef[2]
    rc, rs, a1, a1s, c1, yv, rv = coef[3], coef[4], coef[5], coef[6], coef[7], coef[8], coef[9]
    mean_field = a1 != 0.0 or a1s != 0.0
    mom = 0.0
    if mean_field:
        for j in range(eta.shape[0]):
            mom += eta[j] * _psi(psi_code, xnodes[j])
    k = (a1 + a1s * t) * mom
    for i in range(n):
        g = owner[i]
        off, Mt, Jt = tab_i[g, 0], tab_i[g, 1], tab_i[g, 2]
        m = 0
        if Mt > 0:
            m = min(max(int(np.rint(t / tab_f[g, 0])), 0), Mt)
        j = 0
        if Jt > 0:
            j = min(max(int(np.rint(x[i] / tab_f[g, 1])), 0), Jt)
        ui = tab[off + m * (Jt + 1) + j]
        u[i] = ui
        lr = base_lam + (la * ui) * s
        mr = base_mu + (ma * ui) * s
        if lr < 0.0:
            counters[0] += 1
            lr = 0.0
        if mr < 0.0:
            counters[0] += 1
            mr = 0.0
        counters[1] += 2
        q = Q[i]
        dY = mr / s if q == 0 else 0.0
        dR = lr / s if q == Ln else 0.0
        if rs == 0.0:
            f0 = rc
        else:
            f0 = rs * x[i]
            if rc != 0.0:
                f0 += rc
        if mean_field:
            f0 = f0 + k * (c1 + _psi(psi_code, x[i]))
        rates[0, i] = f0 + (0.5 * kappa) * (ui * ui)
        rates[1, i] = yv * dY
        rates[2, i] = rv * dR
        rates[3, i] = dY
        rates[4, i] = dR
        rates[5, i] = (lr - mr) / s
        rates[6, i] = lr if q < Ln else 0.0
        rates[7, i] = mr if q > 0 else 0.0


@numba.njit(cache=True)
def _event_kernel(state, istate, Q, x, node, counts, eta, u, rates, acc, fire_at, jumps,
                  buf, pos, stamps, owner, tab, tab_i, tab_f, coef, psi_code, xnodes, dx, J, n_players,
                  s, Ln, base_lam, base_mu, rec_Q, rec_counts, rec_u, rec_acc, counters):
    """Run events until the horizon (returns -1) or until a clock block runs dry (returns its channel)."""
    n = Q.shape[0]
    S = stamps.shape[0]
    t = state[0]
    k = istate[0]
    while True:
        c = -1
        best = np.inf
        for ch in range(2 * n):
            i = ch % n
            row = 6 if ch < n else 7
            a = rates[row, i]
            if a > 0.0:
                w = (fire_at[ch] - acc[row, i]) / a
                if w < best:
                    best = w
                    c = ch
        if c >= 0 and t + best < stamps[k]:
            for r in range(8):
                for i in range(n):
                    acc[r, i] += rates[r, i] * best
            t += best
            i = c % n
            row = 6 if c < n else 7
            acc[row, i] = fire_at[c]
            fire_at[c] += buf[c, pos[c]]
            pos[c] += 1
            if c < n:
                Q[i] += 1
                jumps[0, i] += 1
            else:
                Q[i] -= 1
                jumps[1, i] += 1
            x[i] = Q[i] / s
            new = min(int(np.rint(x[i] / dx)), J)
            if new != node[i]:
                counts[node[i]] -= 1
                counts[new] += 1
                node[i] = new
                for j in range(J + 1):
                    eta[j] = counts[j] / n_players
            istate[1] += 1
            _refresh(t, Q, x, u, rates, owner, tab, tab_i, tab_f, coef, psi_code, eta, xnodes,
                     s, Ln, base_lam, base_mu, counters)
            if pos[c] == buf.shape[1]:
                state[0] = t
                istate[0] = k
                return c
        else:
            dt = stamps[k] - t
            for r in range(8):
                for i in range(n):
                    acc[r, i] += rates[r, i] * dt
            t = stamps[k]
            _refresh(t, Q, x, u, rates, owner, tab, tab_i, tab_f, coef, psi_code, eta, xnodes,
                     s, Ln, base_lam, base_mu, counters)
            for i in range(n):
                rec_Q[i, k] = Q[i]
                rec_u[i, k] = u[i]
                rec_acc[0, i, k] = acc[3, i]
                rec_acc[1, i, k] = acc[4, i]
                rec_acc[2, i, k] = acc[5, i]
                rec_acc[3, i, k] = (jumps[0, i] - acc[6, i] - jumps[1, i] + acc[7, i]) / s
            for j in range(J + 1):
                rec_counts[k, j] = counts[j]
            if k == S - 1:
                state[0] = t
                istate[0] = k
                return -1
            k += 1


def simulate_nplayer(model: ModelSpec, cfg: PrelimitConfig, strategies, report_grid: GridSpec,
                     engine: str = "auto") -> SimRecord:
    """Run the prelimit to ``T`` and sample it on ``report_grid``.

    ``strategies`` is one callable for every player or a sequence of ``n``.
    A strategy is called as ``s(t, q)`` with scaled own queue lengths, or as
    ``s(t, q, eta)`` when it sets ``uses_measure``.  The empirical measure
    handed to the model and to such strategies is the nearest-node histogram
    on ``report_grid``.

    ``engine="auto"`` picks the compiled loop when the model is a built-in
    family, every strategy exposes ``table()`` and no trace is requested.
    """
    if engine not in ENGINES:
        raise ConfigurationError(f"unknown engine {engine!r}; valid: {list(ENGINES)}")
    if abs(report_grid.T - cfg.T) > 1e-12 or abs(report_grid.L - cfg.L) > 1e-12:
        raise DomainError("report grid does not cover [0, T] x [0, L] of the configuration")
    distinct, owner = _profile(strategies, cfg.n)
    coef = _linear_coefficients(model)
    tables = _tables(distinct)
    fast = coef is not None and tables is not None and not cfg.trace
    if engine == "numba" and not fast:
        raise ConfigurationError("the compiled engine needs a built-in model, tabulated strategies and no trace")
    if engine == "auto":
        engine = "numba" if fast else "python"
    run = _run_numba if engine == "numba" else _run_python
    parts = run(model, cfg, report_grid, distinct, owner, coef, tables)

    n = cfg.n
    warnings = []
    frac = parts["clip"] / parts["evals"] if parts["evals"] else 0.0
    if frac > CLIP_WARN:
        warnings.append(f"rates clipped at zero in {frac:.1%} of evaluations; e_n is small for the perturbations")
    eta_T = parts["counts"][-1] / n
    terminal = np.asarray(model.g(eta_T, parts["Q"][:, -1] / cfg.scale), dtype=float) * np.ones(n)
    acc = parts["acc"]
    return SimRecord(
        cfg=cfg, report_grid=report_grid, Q=parts["Q"], controls=parts["u"],
        Y=parts["Y"], R=parts["R"], drift_integral=parts["drift"], martingale=parts["mart"],
        counts=parts["counts"], running=acc[0].copy(), terminal=terminal,
        lower=acc[1].copy(), upper=acc[2].copy(), event_count=parts["events"],
        clip_count=parts["clip"], rate_evaluations=parts["evals"], engine=engine,
        warnings=tuple(warnings), trace=parts.get("trace"),
    )


def _initial_state(cfg, report_grid):
    Q = np.array(cfg.Q0, dtype=np.int64)
    x = Q / cfg.scale
    node = np.minimum(np.rint(x / report_grid.dx).astype(np.int64), report_grid.J)
    counts = np.bincount(node, minlength=report_grid.J + 1).astype(np.int64)
    return Q, x, node, counts


def _run_numba(model, cfg, report_grid, distinct, owner, coef, tables):
    n, s, Ln, S = cfg.n, cfg.scale, cfg.Ln, report_grid.M + 1
    coef, psi_code = coef
    tab, tab_i, tab_f = tables
    Q, x, node, counts = _initial_state(cfg, report_grid)
    eta = counts / n
    xnodes = node_positions(report_grid.J + 1, report_grid.L)
    u = np.empty(n)
    rates = np.zeros((8, n))
    acc = np.zeros((8, n))
    jumps = np.zeros((2, n), dtype=np.int64)
    counters = np.zeros(2, dtype=np.int64)
    clocks = _Clocks(cfg.seed, cfg.player_keys)
    fire_at = clocks.first()
    base_lam, base_mu = model.lambda_hat * cfg.e_n, model.mu_hat * cfg.e_n
    rec_Q = np.empty((n, S), dtype=np.int64)
    rec_counts = np.empty((S, report_grid.J + 1), dtype=np.int64)
    rec_u = np.empty((n, S))
    rec_acc = np.zeros((4, n, S))

    _refresh(0.0, Q, x, u, rates, owner, tab, tab_i, tab_f, coef, psi_code, eta, xnodes,
             s, Ln, base_lam, base_mu, counters)
    rec_Q[:, 0] = Q
    rec_counts[0] = counts
    rec_u[:, 0] = u
    state = np.zeros(1)
    istate = np.array([1, 0], dtype=np.int64)
    while True:
        c = _event_kernel(state, istate, Q, x, node, counts, eta, u, rates, acc, fire_at, jumps,
                          clocks.buf, clocks.pos, report_grid.t, owner, tab, tab_i, tab_f, coef, psi_code,
                          xnodes, report_grid.dx, report_grid.J, float(n), s, Ln, base_lam, base_mu,
                          rec_Q, rec_counts, rec_u, rec_acc, counters)
        if c < 0:
            break
        clocks.refill(c)
    return dict(Q=rec_Q, u=rec_u, Y=rec_acc[0], R=rec_acc[1], drift=rec_acc[2], mart=rec_acc[3],
                counts=rec_counts, acc=acc, events=int(istate[1]), clip=int(counters[0]),
                evals=int(counters[1]))


def _run_python(model, cfg, report_grid, distinct, owner, coef, tables):
    n, s, Ln = cfg.n, cfg.scale, cfg.Ln
    J, dx = report_grid.J, report_grid.dx
    stamps = report_grid.t
    S = report_grid.M + 1
    reads_eta = [bool(getattr(d, "uses_measure", False)) for d in distinct]
    groups = [np.flatnonzero(owner == k) for k in range(len(distinct))]
    U = (model.u_min, model.u_max)
    base_lam, base_mu = model.lambda_hat * cfg.e_n, model.mu_hat * cfg.e_n

    Q, x, node, counts = _initial_state(cfg, report_grid)
    eta = counts / n
    # rows: running cost, y dY, r dR, dY, dR, drift, arrival intensity, service intensity
    rates = np.zeros((8, n))
    acc = np.zeros((8, n))
    jumps = np.zeros((2, n), dtype=np.int64)
    clocks = _Clocks(cfg.seed, cfg.player_keys)
    fire_at = clocks.first()
    u = np.empty(n)
    counters = [0, 0]

    def refresh(t):
        for k, idx in enumerate(groups):
            strat = distinct[k]
            u[idx] = strat(t, x[idx], eta) if reads_eta[k] else strat(t, x[idx])
        if np.any(u < U[0]) or np.any(u > U[1]):
            raise DomainError("a strategy emitted a control outside U")
        lr = base_lam + np.asarray(model.lam(t, eta, x, u), dtype=float) * s
        mr = base_mu + np.asarray(model.mu(t, eta, x, u), dtype=float) * s
        counters[0] += int(np.count_nonzero(lr < 0) + np.count_nonzero(mr < 0))
        counters[1] += 2 * n
        lr, mr = np.maximum(lr, 0.0), np.maximum(mr, 0.0)
        rates[3] = np.where(Q == 0, mr / s, 0.0)
        rates[4] = np.where(Q == Ln, lr / s, 0.0)
        rates[0] = model.f(t, eta, x, u)
        rates[1] = model.y(t, eta) * rates[3]
        rates[2] = model.r(t, eta) * rates[4]
        rates[5] = (lr - mr) / s
        rates[6] = np.where(Q < Ln, lr, 0.0)
        rates[7] = np.where(Q > 0, mr, 0.0)

    rec_Q = np.empty((n, S), dtype=np.int64)
    rec_counts = np.empty((S, J + 1), dtype=np.int64)
    rec = np.empty((5, n, S))  # controls, Y, R, drift, martingale
    trace = {"t": [], "player": [], "channel": [], "Q": [], "Y": [], "R": [], "psi": []} if cfg.trace else None
    q0 = np.array(cfg.Q0) / s

    def martingale():
        return (jumps[0] - acc[6] - jumps[1] + acc[7]) / s

    def record(k):
        rec_Q[:, k] = Q
        rec_counts[k] = counts
        rec[0, :, k] = u
        rec[1, :, k] = acc[3]
        rec[2, :, k] = acc[4]
        rec[3, :, k] = acc[5]
        rec[4, :, k] = martingale()

    def log_event(t, i, ch):
        trace["t"].append(t)
        trace["player"].append(i)
        trace["channel"].append(ch)
        trace["Q"].append(Q.copy())
        trace["Y"].append(acc[3].copy())
        trace["R"].append(acc[4].copy())
        trace["psi"].append(q0 + acc[5] + martingale())

    t = 0.0
    refresh(t)
    record(0)
    if trace is not None:
        log_event(0.0, -1, -1)
    k, events = 1, 0
    a = rates[6:8].reshape(2 * n)  # views into the intensity rows
    intensity = acc[6:8].reshape(2 * n)
    wait = np.empty(2 * n)
    while True:
        live = a > 0
        wait.fill(np.inf)
        np.divide(fire_at - intensity, a, out=wait, where=live)
        c = int(np.argmin(wait))
        dt = wait[c]
        if live[c] and t + dt < stamps[k]:
            acc += rates * dt
            t += dt
            intensity[c] = fire_at[c]  # removes round-off in the integrated clock
            fire_at[c] += clocks.next(c)
            i, ch = (c, 0) if c < n else (c - n, 1)
            Q[i] += 1 if ch == 0 else -1
            jumps[ch, i] += 1
            x[i] = Q[i] / s
            new = min(int(np.rint(x[i] / dx)), J)
            if new != node[i]:
                counts[node[i]] -= 1
                counts[new] += 1
                node[i] = new
                eta = counts / n
            events += 1
            refresh(t)
            if trace is not None:
                log_event(t, i, ch)
        else:
            acc += rates * (stamps[k] - t)
            t = stamps[k]
            refresh(t)
            record(k)
            if k == S - 1:
                break
            k += 1

    if trace is not None:
        trace = {key: np.asarray(v) for key, v in trace.items()}
    return dict(Q=rec_Q, u=rec[0], Y=rec[1], R=rec[2], drift=rec[3], mart=rec[4], counts=rec_counts,
                acc=acc, events=events, clip=counters[0], evals=counters[1], trace=trace)


def empirical_flow(record: SimRecord, grid: GridSpec) -> MeasureFlow:
    """Nearest-node histograms of the scaled queues at the stamps of ``grid``."""
    rg = record.report_grid
    if abs(grid.T - rg.T) > 1e-12 or abs(grid.L - rg.L) > 1e-12 or rg.M % grid.M:
        raise DomainError("record stamps do not refine the time stamps of the grid")
    stride = rg.M // grid.M
    values = record.scaled_paths[:, ::stride]
    return MeasureFlow(np.stack([histogram(values[:, m], grid) for m in range(grid.M + 1)]), grid)


@dataclass(frozen=True)
class CostBreakdown:
    running: float
    terminal: float
    lower_boundary: float
    upper_boundary: float

    @property
    def total(self) -> float:
        return self.running + self.terminal + self.lower_boundary + self.upper_boundary


def player_cost(model: ModelSpec, record: SimRecord, i: int,
                nu_for_cost: Optional[MeasureFlow] = None) -> CostBreakdown:
    """Cost of player ``i``.

    Without ``nu_for_cost`` these are the event-resolution accumulators,
    which integrate against the simulated empirical measure.  Given a flow
    on the report grid, the four terms are recomputed from the sampled
    paths by left-point sums against that flow instead.
    """
    if not 0 <= i < record.n:
        raise DomainError(f"player index {i} out of range for n={record.n}")
    if nu_for_cost is None:
        return CostBreakdown(float(record.running[i]), float(record.terminal[i]),
                             float(record.lower[i]), float(record.upper[i]))
    rg = record.report_grid
    if nu_for_cost.grid != rg:
        raise DomainError("cost flow must live on the report grid of the record")
    q = record.scaled_paths[i]
    u = record.controls[i]
    dY, dR = np.diff(record.Y[i]), np.diff(record.R[i])
    running = lower = upper = 0.0
    for m in range(rg.M):
        tm, eta = rg.t[m], nu_for_cost[m]
        running += float(model.f(tm, eta, q[m], u[m])) * rg.dt
        lower += float(model.y(tm, eta)) * dY[m]
        upper += float(model.r(tm, eta)) * dR[m]
    terminal = float(model.g(nu_for_cost[rg.M], q[rg.M]))
    return CostBreakdown(running, terminal, lower, upper)
