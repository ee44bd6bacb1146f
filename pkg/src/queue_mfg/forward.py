"""Forward propagation of the state law under a fixed feedback policy.

``propagate_fp`` advances node weights with one explicit step of a
reflecting birth-death generator per time layer.  ``simulate_particles``
is the Monte-Carlo counterpart: Euler-Maruyama increments, each reflected
by the Skorohod recursion, with cost accumulators along the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from . import streams
from .errors import DomainError, NumericalError
from .hjb import PolicyField
from .measures import GridSpec, MeasureFlow, check_probability, histogram
from .model import ModelSpec
from .skorohod import reflect_step

NEG_TOL = 1e-14


def _check_grids(grid: GridSpec, policy: PolicyField, nu_env: MeasureFlow) -> None:
    if policy.grid != grid:
        raise DomainError("policy lives on a different grid")
    if nu_env.grid != grid:
        raise DomainError("environment flow lives on a different grid")


def propagate_fp(model: ModelSpec, grid: GridSpec, policy: PolicyField, nu_env: MeasureFlow,
                 eta0) -> MeasureFlow:
    grid.check_cfl(model.sigma, model.drift_bound)
    _check_grids(grid, policy, nu_env)
    eta0 = check_probability(eta0)
    if eta0.size != grid.J + 1:
        raise DomainError("initial law lives on a different grid")
    dx, dt = grid.dx, grid.dt
    diffusion = 0.5 * model.sigma**2 / dx**2
    b = np.broadcast_to(
        model.drift(grid.t[:, None], grid.x[None, :], policy.controls), policy.controls.shape
    )
    up = dt * (diffusion + np.maximum(b, 0.0) / dx)
    down = dt * (diffusion + np.maximum(-b, 0.0) / dx)
    # reflecting ends: no mass leaves through 0 or L
    up[:, -1] = 0.0
    down[:, 0] = 0.0
    P = np.empty((grid.M + 1, grid.J + 1))
    P[0] = eta0
    for m in range(grid.M):
        p = P[m]
        to_right = up[m] * p
        to_left = down[m] * p
        nxt = p - to_right - to_left
        nxt[1:] += to_right[:-1]
        nxt[:-1] += to_left[1:]
        if nxt.min() < -NEG_TOL:
            j = int(np.argmin(nxt))
            raise NumericalError(f"negative weight {nxt[j]:.3e}", (m + 1, j))
        P[m + 1] = nxt
    return MeasureFlow(P, grid)


@dataclass(frozen=True, eq=False)
class ParticleBatch:
    """Per-particle cost components and sampled reflected paths.

    ``hist`` is the nearest-node histogram flow on ``record_grid``;
    ``X, Y, R`` are kept on the same stamps only when requested.
    """

    seed: int
    grid: GridSpec
    record_grid: GridSpec
    nu_env: MeasureFlow
    x0: float
    running: np.ndarray
    terminal: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    Y_final: np.ndarray
    R_final: np.ndarray
    X_final: np.ndarray
    hist: MeasureFlow
    X: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.running.size

    @property
    def total(self) -> np.ndarray:
        return self.running + self.terminal + self.lower + self.upper


def policy_lookup(policy: PolicyField, m: int, X: np.ndarray, interpolate: bool = False) -> np.ndarray:
    grid = policy.grid
    row = policy.controls[m]
    if not interpolate:
        return row[grid.nearest_node(X)]
    return np.interp(X, grid.x, row)


def default_record_steps(M: int) -> int:
    return 100 if M % 100 == 0 else M


BOUNDARY_RULES = ("bridge", "endpoint")
BRIDGE_CUTOFF = 8.0  # in units of sigma sqrt(dt)
CHUNK = 8192


def bridge_extremum(x, a, u, s2, lower):
    """Minimum (``lower``) or maximum of a Brownian bridge from ``x`` to ``a``.

    ``s2`` is the bridge variance over the step and ``u`` a uniform draw;
    drift does not change the bridge law.
    """
    spread = np.sqrt((a - x) ** 2 - 2.0 * s2 * np.log(u))
    return 0.5 * (x + a - spread) if lower else 0.5 * (x + a + spread)


def reflected_step(X, A, bridge_u, s2, L, boundary, reach=None):
    """Reflect the Euler step from ``X`` to the free endpoint ``A`` (numpy reference).

    With ``boundary="endpoint"`` the sampled path is the two stamps and the
    recursion is a clamp.  With ``boundary="bridge"`` a particle starting
    near a boundary also passes through the exact extremum of the Brownian
    bridge on the nearer side, and the recursion runs over the three
    samples; this removes the half-order undercount of the pushing terms.
    """
    Xn, dY, dR = reflect_step(X, A - X, L)
    if boundary == "endpoint":
        return Xn, dY, dR
    if reach is None:
        # from farther out, touching a boundary within the step needs a normal draw beyond the cutoff
        reach = BRIDGE_CUTOFF * np.sqrt(s2)
    idx = np.flatnonzero((X < reach) | (X > L - reach))
    if idx.size == 0:
        return Xn, dY, dR
    x, a = X[idx], A[idx]
    u = bridge_u[idx]
    ext = np.where(x < 0.5 * L, bridge_extremum(x, a, u, s2, True), bridge_extremum(x, a, u, s2, False))
    x1, dy1, dr1 = reflect_step(x, ext - x, L)
    x2, dy2, dr2 = reflect_step(x1, a - ext, L)
    Xn[idx], dY[idx], dR[idx] = x2, dy1 + dy2, dr1 + dr2
    return Xn, dY, dR


@numba.njit(cache=True)
def _step_kernel(X, words, b, sq, dt, L, reach, bridge, y, r, Yc, Rc, lower, upper):
    # fused version of the numpy path, same operation order, updates in place
    s2 = sq * sq
    half = 0.5 * L
    for p in range(X.size):
        x = X[p]
        w = words[p]
        hi = (np.float64(np.int64(w >> np.uint64(32))) + 0.5) * 2.0**-32
        a = streams.normal_quantile(hi) * sq + b[p] * dt + x
        if bridge and (x < reach or x > L - reach):
            lo = (np.float64(np.int64(w & np.uint64(0xFFFFFFFF))) + 0.5) * 2.0**-32
            d = a - x
            spread = math.sqrt(d * d - 2.0 * s2 * math.log(lo))
            ext = 0.5 * (x + a - spread) if x < half else 0.5 * (x + a + spread)
            v = x + (ext - x)
            x1 = min(max(v, 0.0), L)
            dy = max(-v, 0.0)
            dr = max(v - L, 0.0)
            v = x1 + (a - ext)
            xn = min(max(v, 0.0), L)
            dy = dy + max(-v, 0.0)
            dr = dr + max(v - L, 0.0)
        else:
            v = x + (a - x)
            xn = min(max(v, 0.0), L)
            dy = max(-v, 0.0)
            dr = max(v - L, 0.0)
        X[p] = xn
        Yc[p] += dy
        Rc[p] += dr
        lower[p] += y * dy
        upper[p] += r * dr


ENGINES = ("numba", "numpy")


def simulate_particles(model: ModelSpec, grid: GridSpec, policy: PolicyField, nu_env: MeasureFlow,
                       x0: float, N: int, seed: int, record_M: Optional[int] = None,
                       keep_paths: bool = False, interpolate: bool = False,
                       boundary: str = "bridge", chunk: int = CHUNK, engine: str = "numba") -> ParticleBatch:
    """Euler-Maruyama with per-step Skorohod reflection on the solver time grid.

    Draws for particle ``p`` at step ``m`` come from word ``p`` of the
    stream keyed by ``(seed, m)``, so the batch does not depend on
    ``chunk`` and any particle can be regenerated on its own.
    """
    if N < 1:
        raise DomainError("need at least one particle")
    if not 0 <= x0 <= model.L:
        raise DomainError(f"x0={x0} outside [0, L]")
    if boundary not in BOUNDARY_RULES:
        raise DomainError(f"unknown boundary rule {boundary!r}; valid: {list(BOUNDARY_RULES)}")
    if engine not in ENGINES:
        raise DomainError(f"unknown engine {engine!r}; valid: {list(ENGINES)}")
    _check_grids(grid, policy, nu_env)
    record_grid = grid.coarsen(record_M or default_record_steps(grid.M))
    stride = grid.M // record_grid.M
    dt, L = grid.dt, model.L
    sq = model.sigma * np.sqrt(dt)
    s2 = sq * sq
    reach = BRIDGE_CUTOFF * sq + model.drift_bound * dt
    bridge = boundary == "bridge"
    times = grid.t
    controls = policy.controls
    scale = 1.0 / grid.dx
    y_vals = [model.y(times[m], nu_env[m]) for m in range(grid.M)]
    r_vals = [model.r(times[m], nu_env[m]) for m in range(grid.M)]

    out = {k: np.empty(N) for k in ("running", "lower", "upper", "Y", "R", "X")}
    counts = np.zeros((record_grid.M + 1, grid.J + 1), dtype=np.int64)
    counts[0, grid.nearest_node(x0)] = N
    if keep_paths:
        paths = [np.empty((N, record_grid.M + 1)) for _ in range(3)]
        paths[0][:, 0], paths[1][:, 0], paths[2][:, 0] = x0, 0.0, 0.0

    for p0 in range(0, N, chunk):
        p1 = min(p0 + chunk, N)
        n = p1 - p0
        X = np.full(n, float(x0))
        Yc, Rc = np.zeros(n), np.zeros(n)
        running, lower, upper = np.zeros(n), np.zeros(n), np.zeros(n)
        for m in range(grid.M):
            tm, eta = times[m], nu_env[m]
            if interpolate:
                u = np.interp(X, grid.x, controls[m])
            else:
                # X stays in [0, L], so rounding never leaves the node range
                u = controls[m][np.rint(X * scale).astype(np.intp)]
            b = model.drift(tm, X, u)
            running += model.f(tm, eta, X, u)
            words = streams.raw_words(seed, streams.particle_tag(m), p0, n)
            if engine == "numba":
                b = np.ascontiguousarray(np.broadcast_to(b, X.shape), dtype=float)
                _step_kernel(X, words, b, sq, dt, L, reach, bridge, float(y_vals[m]), float(r_vals[m]),
                             Yc, Rc, lower, upper)
            else:
                hi, lo = streams.split_unit(words)
                A = streams.normal_from_unit(hi)
                A *= sq
                A += b * dt
                A += X
                X, dY, dR = reflected_step(X, A, lo, s2, L, boundary, reach)
                Yc += dY
                Rc += dR
                lower += y_vals[m] * dY
                upper += r_vals[m] * dR
            if (m + 1) % stride == 0:
                k = (m + 1) // stride
                counts[k] += np.bincount(np.rint(X * scale).astype(np.intp), minlength=grid.J + 1)
                if keep_paths:
                    paths[0][p0:p1, k], paths[1][p0:p1, k], paths[2][p0:p1, k] = X, Yc, Rc
        # summing f first and scaling once keeps constant integrands exact
        running *= grid.T
        running /= grid.M
        for key, val in zip(("running", "lower", "upper", "Y", "R", "X"), (running, lower, upper, Yc, Rc, X)):
            out[key][p0:p1] = val

    X = out["X"]
    terminal = np.asarray(model.g(nu_env[grid.M], X), dtype=float) * np.ones(N)
    return ParticleBatch(
        seed=seed, grid=grid, record_grid=record_grid, nu_env=nu_env, x0=float(x0),
        running=out["running"], terminal=terminal, lower=out["lower"], upper=out["upper"],
        Y_final=out["Y"], R_final=out["R"], X_final=X, hist=MeasureFlow(counts / N, record_grid),
        X=paths[0] if keep_paths else None,
        Y=paths[1] if keep_paths else None,
        R=paths[2] if keep_paths else None,
    )


def evaluate_cost_mc(model: ModelSpec, batch: ParticleBatch, nu_env: MeasureFlow):
    """Mean per-particle cost and its standard error."""
    if nu_env.grid != batch.grid:
        raise DomainError("environment flow lives on a different grid than the batch")
    if nu_env is not batch.nu_env and not np.array_equal(nu_env.weights, batch.nu_env.weights):
        raise DomainError("batch was simulated against a different environment flow")
    total = batch.total
    se = float(total.std(ddof=1) / np.sqrt(total.size)) if total.size > 1 else 0.0
    return float(total.mean()), se
