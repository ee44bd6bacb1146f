"""Problem instances, the pointwise Hamiltonian minimization, and assumption checks.

Model functions take numpy arrays and broadcast.  A measure argument
``eta`` is always a weight vector over a uniform grid of [0, L]; moments
against it use the node positions implied by its length.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, ValidationError
from .measures import check_probability, node_positions, w1

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ARGMIN_GRID = 257
ARGMIN_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    T: float
    L: float
    x0: float
    lambda_hat: float
    u_min: float
    u_max: float
    drift: Callable  # b(t, x, u)
    lam: Callable  # arrival-rate perturbation lambda(t, eta, x, u)
    mu: Callable  # service-rate perturbation mu(t, eta, x, u)
    f0: Callable  # f0(t, eta, x)
    f1: Callable  # f1(t, x, u)
    g: Callable  # g(eta, x)
    y: Callable  # y(t, eta), cost per unit of lower pushing (empty buffer)
    r: Callable  # r(t, eta), cost per unit of upper pushing (rejections)
    argmin: Optional[Callable] = None  # closed form (t, x, p) -> u
    params: dict = field(default_factory=dict)
    claims: frozenset = frozenset()
    eta_free: bool = False  # f0 and g ignore eta
    rates_use_eta: bool = False
    drift_bound: Optional[float] = None
    builtin: Optional[str] = None

    def __post_init__(self):
        if self.drift_bound is None:
            object.__setattr__(self, "drift_bound", self._sample_drift_bound())

    @property
    def sigma(self) -> float:
        return math.sqrt(2.0 * self.lambda_hat)

    @property
    def mu_hat(self) -> float:
        return self.lambda_hat

    @property
    def u_width(self) -> float:
        return self.u_max - self.u_min

    def f(self, t, eta, x, u):
        return self.f0(t, eta, x) + self.f1(t, x, u)

    def _sample_drift_bound(self) -> float:
        t = np.linspace(0, self.T, 21)[:, None, None]
        x = np.linspace(0, self.L, 21)[None, :, None]
        u = np.linspace(self.u_min, self.u_max, 33)[None, None, :]
        return float(np.abs(np.broadcast_to(self.drift(t, x, u), (21, 21, 33))).max())

    def __reduce__(self):
        # built-ins rebuild from name and parameters, so they cross process boundaries
        if self.builtin is None:
            raise TypeError(f"model {self.name!r} holds arbitrary callables and cannot be pickled")
        return (make_builtin_model, (self.builtin, dict(self.params)))


@lru_cache(maxsize=64)
def _nodes(n: int, L: float) -> np.ndarray:
    x = node_positions(n, L)
    x.flags.writeable = False
    return x


def moment(eta, fn, L: float) -> float:
    eta = np.asarray(eta, dtype=float)
    return float(np.dot(eta, fn(_nodes(eta.size, L))))


def _shaped(value, *args):
    # broadcast ``value`` against the argument shapes only when it has to grow
    value = np.asarray(value, dtype=float)
    shape = np.broadcast_shapes(value.shape, *(np.shape(a) for a in args))
    return value if value.shape == shape else np.broadcast_to(value, shape).copy()


_PSI = {
    "x": lambda x: np.asarray(x, dtype=float),
    "x2": lambda x: np.asarray(x, dtype=float) ** 2,
    "const": lambda x: np.ones_like(np.asarray(x, dtype=float)),
}

_COMMON = dict(
    T=1.0, L=2.0, x0=1.0, lambda_hat=0.5,
    a1=1.0, a1_slope=0.0, c1=1.0, psi1="x",
    a2=1.0, c2=0.0, psi2="x",
    run_const=0.0, run_slope=0.0, term_const=0.0, term_slope=0.0,
    y=0.5, r=1.0,
)

BUILTIN_DEFAULTS = {
    "linear-mf": dict(_COMMON, u_min=-1.0, u_max=1.0, kappa=1.0, split=0.5),
    "uncontrolled": dict(_COMMON, a1=0.0, a2=0.0, run_slope=1.0),
}


def _validate(p: dict) -> None:
    positive = ("T", "L", "lambda_hat", "kappa")
    for key in positive:
        if key in p and not p[key] > 0:
            raise ValidationError(key, f"must be > 0, got {p[key]}")
    for key in ("a1", "a2", "y", "r"):
        if not p[key] >= 0:
            raise ValidationError(key, f"must be >= 0, got {p[key]}")
    if not p["a1"] + p["a1_slope"] * p["T"] >= 0:
        raise ValidationError("a1_slope", "a1(t) = a1 + a1_slope t must stay >= 0 on [0, T]")
    if not 0 <= p["x0"] <= p["L"]:
        raise ValidationError("x0", f"must lie in [0, L]=[0, {p['L']}], got {p['x0']}")
    if "u_min" in p and not p["u_min"] <= p["u_max"]:
        raise ValidationError("u_min", f"must not exceed u_max ({p['u_min']} > {p['u_max']})")
    if "split" in p and not 0 <= p["split"] <= 1:
        raise ValidationError("split", f"must lie in [0, 1], got {p['split']}")
    for key in ("psi1", "psi2"):
        if p[key] not in _PSI:
            raise ValidationError(key, f"unknown moment function {p[key]!r}; valid: {sorted(_PSI)}")


def make_builtin_model(name: str, params: Optional[dict] = None) -> ModelSpec:
    """Build a named model family with optional parameter overrides.

    ``linear-mf``: drift ``b = u``, control cost ``kappa u^2 / 2`` on
    ``U = [u_min, u_max]``, and costs linear in two moments of the measure,
    ``f0 = a1(t) (c1 + psi1(x)) <psi1, eta>`` and
    ``g = a2 (c2 + psi2(x)) <psi2, eta>``, plus optional eta-free terms.
    ``uncontrolled``: ``U = {0}``, ``b = 0``, by default the holding cost
    ``f = x`` and no mean-field terms.
    """
    if name not in BUILTIN_DEFAULTS:
        raise ConfigurationError(f"unknown model {name!r}; valid names: {sorted(BUILTIN_DEFAULTS)}")
    p = dict(BUILTIN_DEFAULTS[name])
    for key, value in (params or {}).items():
        if key not in p:
            raise ConfigurationError(f"model {name!r} has no parameter {key!r}; known: {sorted(p)}")
        p[key] = value if isinstance(p[key], str) else float(value)
    _validate(p)

    L = p["L"]
    psi1, psi2 = _PSI[p["psi1"]], _PSI[p["psi2"]]
    a1, a1s, c1, a2, c2 = p["a1"], p["a1_slope"], p["c1"], p["a2"], p["c2"]
    rc, rs, tc, ts = p["run_const"], p["run_slope"], p["term_const"], p["term_slope"]
    y_val, r_val = p["y"], p["r"]

    def _affine(const, slope, x):
        out = np.full(x.shape, const) if slope == 0.0 else slope * x
        if slope != 0.0 and const != 0.0:
            out += const
        return out

    def f0(t, eta, x):
        x = np.asarray(x, dtype=float)
        out = _affine(rc, rs, x)
        if a1 != 0.0 or a1s != 0.0:
            k = (a1 + a1s * np.asarray(t, dtype=float)) * moment(eta, psi1, L)
            out = out + k * (c1 + psi1(x))
        return out

    def g(eta, x):
        x = np.asarray(x, dtype=float)
        out = _affine(tc, ts, x)
        if a2 != 0.0:
            out = out + (a2 * moment(eta, psi2, L)) * (c2 + psi2(x))
        return out

    def y(t, eta):
        return y_val

    def r(t, eta):
        return r_val

    eta_free = a1 == 0.0 and a1s == 0.0 and a2 == 0.0

    if name == "uncontrolled":
        zero = lambda *args: np.zeros(np.broadcast(*args[-2:]).shape)  # noqa: E731
        return ModelSpec(
            name=name, T=p["T"], L=L, x0=p["x0"], lambda_hat=p["lambda_hat"],
            u_min=0.0, u_max=0.0,
            drift=lambda t, x, u: np.zeros(np.broadcast(x, u).shape),
            lam=zero, mu=zero, f0=f0,
            f1=lambda t, x, u: np.zeros(np.broadcast(x, u).shape),
            g=g, y=y, r=r,
            argmin=lambda t, x, p_: np.zeros(np.broadcast(x, p_).shape),
            params=p, claims=frozenset({"lipschitz", "unique_argmin", "monotone", "drift_eta_free"}),
            eta_free=eta_free, drift_bound=0.0, builtin=name,
        )

    u_min, u_max, kappa, split = p["u_min"], p["u_max"], p["kappa"], p["split"]

    def drift(t, x, u):
        return _shaped(u, x)

    def lam(t, eta, x, u):
        return split * drift(t, x, u)

    def mu(t, eta, x, u):
        return (split - 1.0) * drift(t, x, u)

    def f1(t, x, u):
        u = np.asarray(u, dtype=float)
        return _shaped((0.5 * kappa) * (u * u), x)

    def argmin(t, x, p_):
        return _shaped(np.clip(-np.asarray(p_, dtype=float) / kappa, u_min, u_max), x)

    return ModelSpec(
        name=name, T=p["T"], L=L, x0=p["x0"], lambda_hat=p["lambda_hat"],
        u_min=u_min, u_max=u_max, drift=drift, lam=lam, mu=mu, f0=f0, f1=f1, g=g, y=y, r=r,
        argmin=argmin, params=p,
        claims=frozenset({"lipschitz", "unique_argmin", "monotone", "drift_eta_free"}),
        eta_free=eta_free, drift_bound=max(abs(u_min), abs(u_max)), builtin=name,
    )


def _h_without_f0(model: ModelSpec, t, x, u, p):
    return model.f1(t, x, u) + model.drift(t, x, u) * p


def control_argmin(model: ModelSpec, t, x, p) -> np.ndarray:
    """Minimizer over U of f1(t, x, u) + b(t, x, u) p, elementwise in (x, p)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if model.argmin is not None:
        return np.asarray(model.argmin(t, x, p), dtype=float)
    shape = np.broadcast(x, p).shape
    if model.u_width == 0.0:
        return np.full(shape, model.u_min)
    return _grid_golden_argmin(model, t, np.broadcast_to(x, shape), np.broadcast_to(p, shape))


def _grid_golden_argmin(model, t, x, p):
    # coarse scan over U, then golden-section inside the bracketing cells
    grid = np.linspace(model.u_min, model.u_max, ARGMIN_GRID)
    ug = grid.reshape((-1,) + (1,) * x.ndim)
    vals = _h_without_f0(model, t, x[None], ug, p[None])
    k = np.argmin(vals, axis=0)
    lo = grid[np.maximum(k - 1, 0)]
    hi = grid[np.minimum(k + 1, ARGMIN_GRID - 1)]
    tol = ARGMIN_RTOL * model.u_width
    a, b = lo.copy(), hi.copy()
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc = _h_without_f0(model, t, x, c, p)
    fd = _h_without_f0(model, t, x, d, p)
    while np.max(b - a) > tol:
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - GOLDEN * (b - a)
        new_d = a + GOLDEN * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        fc_next = np.where(left, _h_without_f0(model, t, x, new_c, p), fd)
        fd_next = np.where(left, fc, _h_without_f0(model, t, x, new_d, p))
        c, d, fc, fd = c_next, d_next, fc_next, fd_next
    u = 0.5 * (a + b)
    best_grid = grid[k]
    keep_grid = _h_without_f0(model, t, x, best_grid, p) < _h_without_f0(model, t, x, u, p)
    return np.where(keep_grid, best_grid, u)


def _check_point(model: ModelSpec, x) -> None:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > model.L):
        raise DomainError(f"state outside [0, L]=[0, {model.L}]")


def hamiltonian_argmin(model: ModelSpec, t, eta, x, p):
    """Return (u_star, h_star): the minimizing control and H(t, eta, x, p)."""
    eta = check_probability(eta)
    _check_point(model, x)
    u = control_argmin(model, t, x, p)
    h = model.f0(t, eta, x) + _h_without_f0(model, t, x, u, p)
    if np.ndim(u) == 0:
        return float(u), float(h)
    return u, h


# ---------------------------------------------------------------- diagnostics


@dataclass(frozen=True, eq=False)
class Witness:
    kind: str
    args: dict
    value: float


@dataclass(frozen=True, eq=False)
class AssumptionReport:
    lipschitz_estimate: float
    lipschitz_by_arg: dict
    argmin_unique: bool
    argmin_gap: float
    monotonicity_ok: bool
    drift_eta_free: bool
    violations: list

    def as_rows(self):
        rows = [("lipschitz_estimate", self.lipschitz_estimate)]
        rows += [(f"lipschitz[{fn},{arg}]", v) for (fn, arg), v in sorted(self.lipschitz_by_arg.items())]
        rows += [
            ("argmin_unique", self.argmin_unique),
            ("argmin_gap", self.argmin_gap),
            ("monotonicity_ok", self.monotonicity_ok),
            ("drift_eta_free", self.drift_eta_free),
            ("violations", len(self.violations)),
        ]
        return rows


DIAG_NODES = 51
MONO_TOL = 1e-12


def _random_measure(rng, n):
    if rng.random() < 0.2:
        w = np.zeros(n)
        w[rng.integers(n)] = 1.0
        return w
    w = rng.dirichlet(np.full(n, rng.choice([0.2, 1.0, 5.0])))
    return w / w.sum()


def _evaluate_lipschitz(model, z):
    t, eta, x, u = z
    return dict(
        f=float(model.f(t, eta, x, u)),
        g=float(model.g(eta, x)),
        b=float(model.drift(t, x, u)),
        y=float(model.y(t, eta)),
        r=float(model.r(t, eta)),
    )


def witness_holds(model: ModelSpec, w: Witness) -> bool:
    """Re-evaluate a violation witness; True when the violation reproduces."""
    a = w.args
    if w.kind in ("f0", "g"):
        eta, etap = a["eta"], a["eta_prime"]
        xs = node_positions(eta.size, model.L)
        if w.kind == "f0":
            diff = model.f0(a["t"], eta, xs) - model.f0(a["t"], etap, xs)
        else:
            diff = model.g(eta, xs) - model.g(etap, xs)
        return float(np.dot(diff, eta - etap)) < -MONO_TOL
    if w.kind in ("y", "r"):
        fn = model.y if w.kind == "y" else model.r
        return abs(fn(a["t"], a["eta"]) - fn(a["t"], a["eta_prime"])) > MONO_TOL
    if w.kind == "drift_eta":
        t, x, u = a["t"], a["x"], a["u"]
        d1 = model.lam(t, a["eta"], x, u) - model.mu(t, a["eta"], x, u)
        d2 = model.lam(t, a["eta_prime"], x, u) - model.mu(t, a["eta_prime"], x, u)
        return abs(float(d1) - float(d2)) > MONO_TOL
    if w.kind == "rate_split":
        t, x, u = a["t"], a["x"], a["u"]
        d = model.lam(t, a["eta"], x, u) - model.mu(t, a["eta"], x, u) - model.drift(t, x, u)
        return abs(float(d)) > MONO_TOL
    if w.kind == "argmin":
        return _argmin_gap(model, a["t"], a["x"], a["p"]) <= 0.0
    raise ValueError(f"unknown witness kind {w.kind!r}")


def _argmin_gap(model, t, x, p):
    if model.u_width == 0.0:
        return math.inf
    u_star = float(control_argmin(model, t, x, p))
    h_star = float(_h_without_f0(model, t, x, u_star, p))
    grid = np.linspace(model.u_min, model.u_max, ARGMIN_GRID)
    h = _h_without_f0(model, t, x, grid, p)
    if h.min() < h_star - 1e-10 * (1 + abs(h_star)):
        return float(h.min() - h_star)  # u_star is not a minimizer
    far = np.abs(grid - u_star) > 0.05 * model.u_width
    return float((h[far] - h_star).min()) if far.any() else math.inf


def diagnose_assumptions(model: ModelSpec, sample_budget: int = 1000, seed: int = 0) -> AssumptionReport:
    """Sample the model and test Lipschitz bounds, argmin uniqueness, monotonicity, eta-free drift."""
    if sample_budget < 1:
        raise DomainError("sample_budget must be >= 1")
    rng = np.random.default_rng(seed)
    L, T, n = model.L, model.T, DIAG_NODES
    violations = []

    def draw():
        return (rng.uniform(0, T), _random_measure(rng, n), rng.uniform(0, L),
                rng.uniform(model.u_min, model.u_max))

    # Lipschitz: full-argument pairs and one-argument-at-a-time pairs, far and near
    combined = 0.0
    by_arg = {}
    for k in range(sample_budget):
        z, zp = draw(), draw()
        if k % 2:
            s = 1e-3
            zp = (min(max(z[0] + s * T * rng.normal(), 0), T),
                  0.5 * (z[1] + zp[1]) if rng.random() < 0.5 else z[1],
                  min(max(z[2] + s * L * rng.normal(), 0), L),
                  min(max(z[3] + s * rng.normal(), model.u_min), model.u_max))
        dist = abs(z[0] - zp[0]) + w1(z[1], zp[1], L) + abs(z[2] - zp[2]) + abs(z[3] - zp[3])
        if dist > 0:
            v, vp = _evaluate_lipschitz(model, z), _evaluate_lipschitz(model, zp)
            combined = max(combined, sum(abs(v[c] - vp[c]) for c in v) / dist)
        for i, arg in enumerate(("t", "eta", "x", "u")):
            zz = list(z)
            zz[i] = zp[i]
            d = (abs(z[i] - zz[i]) if arg != "eta" else w1(z[1], zz[1], L))
            if d <= 0:
                continue
            v, vp = _evaluate_lipschitz(model, z), _evaluate_lipschitz(model, tuple(zz))
            for fn in v:
                q = abs(v[fn] - vp[fn]) / d
                key = (fn, arg)
                by_arg[key] = max(by_arg.get(key, 0.0), q)

    # argmin uniqueness
    worst_gap = math.inf
    for _ in range(sample_budget):
        t, x, p = rng.uniform(0, T), rng.uniform(0, L), rng.uniform(-5, 5)
        gap = _argmin_gap(model, t, x, p)
        worst_gap = min(worst_gap, gap)
        if gap <= 0.0:
            violations.append(Witness("argmin", dict(t=t, x=x, p=p), gap))

    # monotonicity of f0 and g, eta-independence of y and r
    xs = node_positions(n, L)
    for _ in range(sample_budget):
        t = rng.uniform(0, T)
        eta, etap = _random_measure(rng, n), _random_measure(rng, n)
        i_f = float(np.dot(model.f0(t, eta, xs) - model.f0(t, etap, xs), eta - etap))
        i_g = float(np.dot(model.g(eta, xs) - model.g(etap, xs), eta - etap))
        args = dict(t=t, eta=eta, eta_prime=etap)
        if i_f < -MONO_TOL:
            violations.append(Witness("f0", args, i_f))
        if i_g < -MONO_TOL:
            violations.append(Witness("g", args, i_g))
        for kind, fn in (("y", model.y), ("r", model.r)):
            d = abs(fn(t, eta) - fn(t, etap))
            if d > MONO_TOL:
                violations.append(Witness(kind, args, d))

    # drift: lambda - mu must equal b and ignore eta
    drift_free = True
    for _ in range(sample_budget):
        t, eta, x, u = draw()
        etap = _random_measure(rng, n)
        args = dict(t=t, x=x, u=u, eta=eta, eta_prime=etap)
        d1 = float(model.lam(t, eta, x, u) - model.mu(t, eta, x, u))
        d2 = float(model.lam(t, etap, x, u) - model.mu(t, etap, x, u))
        if abs(d1 - d2) > MONO_TOL:
            drift_free = False
            violations.append(Witness("drift_eta", args, abs(d1 - d2)))
        if abs(d1 - float(model.drift(t, x, u))) > MONO_TOL:
            violations.append(Witness("rate_split", args, d1 - float(model.drift(t, x, u))))

    mono_ok = not any(w.kind in ("f0", "g", "y", "r") for w in violations)
    return AssumptionReport(
        lipschitz_estimate=combined,
        lipschitz_by_arg=by_arg,
        argmin_unique=worst_gap > 0.0,
        argmin_gap=worst_gap,
        monotonicity_ok=mono_ok,
        drift_eta_free=drift_free,
        violations=violations,
    )


def with_costs(model: ModelSpec, **changes) -> ModelSpec:
    """Copy of ``model`` with some callables replaced; the copy is no longer a named built-in."""
    return replace(model, builtin=None, **changes)
