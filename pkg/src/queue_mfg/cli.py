"""Scenario files and the ``queue-mfg`` command line.

A scenario is a flat text file of ``section.key = value`` lines; ``#``
starts a comment.  Sections:

``model``     ``name`` plus any parameter of that family
``grid``      ``J``, ``M`` (0 picks the smallest stable multiple of 100)
``mfg``       ``tol`` (in units of L), ``omega``, ``max_iters``, ``initial``
``prelimit``  ``n_list``, ``e_rule`` (``n``, ``power:p`` or ``const:e``), ``reps``, ``seed``, ``report_M``
``nash``      ``n``, ``deviations``
``output``    ``dir``, ``plots``, ``time_stride``
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .errors import ConfigurationError, ConvergenceError, DomainError, ValidationError
from .measures import GridSpec
from .mfg import INITIAL_GUESSES, MFGSolution, solve_mfg
from .model import BUILTIN_DEFAULTS, ModelSpec, diagnose_assumptions, make_builtin_model
from .nash import (RunCache, constant_strategy, convergence_study, deviation_gap, equilibrium_strategy,
                   myopic_strategy, report_grid, table_strategy)
from .queue_sim import PrelimitConfig, simulate_nplayer

DEVIATIONS = ("equilibrium", "u_min", "u_max", "myopic")


class ScenarioError(ConfigurationError):
    pass


@dataclass(frozen=True)
class Scenario:
    model: str = "linear-mf"
    model_params: tuple = ()  # sorted (key, value) overrides
    J: int = 200
    M: int = 0
    tol: float = 1e-3
    omega: float = 0.5
    max_iters: int = 50
    initial: str = "uncontrolled"
    n_list: tuple = (50, 100, 200)
    e_rule: str = "n"
    reps: int = 30
    seed: int = 0
    report_M: int = 100
    nash_n: int = 200
    deviations: tuple = DEVIATIONS
    out: str = "out"
    plots: bool = False
    time_stride: int = 0  # 0 writes values and policies on the report stamps

    def build_model(self) -> ModelSpec:
        return make_builtin_model(self.model, dict(self.model_params))

    def build_grid(self, model: ModelSpec) -> GridSpec:
        if self.M:
            return GridSpec(J=self.J, M=self.M, L=model.L, T=model.T)
        return GridSpec.for_model(model, self.J, multiple=self.report_M)

    def e_n(self, n: int) -> float:
        kind, _, arg = self.e_rule.partition(":")
        if kind == "n":
            return float(n)
        if kind == "power":
            return float(n) ** float(arg)
        return float(arg)

    def stride(self, grid: GridSpec) -> int:
        if self.time_stride:
            return self.time_stride
        return grid.M // self.report_M if grid.M % self.report_M == 0 else 1


_KEYS = {
    "grid.J": ("J", int), "grid.M": ("M", int),
    "mfg.tol": ("tol", float), "mfg.omega": ("omega", float), "mfg.max_iters": ("max_iters", int),
    "mfg.initial": ("initial", str),
    "prelimit.n_list": ("n_list", "ints"), "prelimit.e_rule": ("e_rule", str), "prelimit.reps": ("reps", int),
    "prelimit.seed": ("seed", int), "prelimit.report_M": ("report_M", int),
    "nash.n": ("nash_n", int), "nash.deviations": ("deviations", "names"),
    "output.dir": ("out", str), "output.plots": ("plots", "bool"), "output.time_stride": ("time_stride", int),
}


def _convert(kind, text):
    if kind == "ints":
        return tuple(int(v) for v in text.split(",") if v.strip())
    if kind == "names":
        return tuple(v.strip() for v in text.split(",") if v.strip())
    if kind == "bool":
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    return kind(text)


def parse_scenario(text: str) -> Scenario:
    values, params = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = (s.strip() for s in line.partition("="))
        if not eq or not key:
            raise ScenarioError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        if key == "model.name":
            values["model"] = value
        elif key.startswith("model."):
            params[key[len("model."):]] = value
        elif key in _KEYS:
            name, kind = _KEYS[key]
            try:
                values[name] = _convert(kind, value)
            except ValueError as exc:
                raise ScenarioError(f"line {lineno}: bad value for {key}: {exc}") from None
        else:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
    sc = Scenario(**values)
    if sc.model not in BUILTIN_DEFAULTS:
        raise ScenarioError(f"unknown model {sc.model!r}; valid names: {sorted(BUILTIN_DEFAULTS)}")
    defaults = BUILTIN_DEFAULTS[sc.model]
    typed = {}
    for k, v in params.items():
        if k not in defaults:
            raise ScenarioError(f"model {sc.model!r} has no parameter {k!r}; known: {sorted(defaults)}")
        typed[k] = v if isinstance(defaults[k], str) else float(v)
    sc = replace(sc, model_params=tuple(sorted(typed.items())))
    _check(sc)
    return sc


def _check(sc: Scenario) -> None:
    if sc.initial not in INITIAL_GUESSES:
        raise ScenarioError(f"mfg.initial must be one of {list(INITIAL_GUESSES)}")
    bad = [d for d in sc.deviations if d not in DEVIATIONS]
    if bad:
        raise ScenarioError(f"unknown deviations {bad}; valid: {list(DEVIATIONS)}")
    kind, _, arg = sc.e_rule.partition(":")
    if kind not in ("n", "power", "const") or (kind != "n" and not arg):
        raise ScenarioError(f"prelimit.e_rule must be 'n', 'power:p' or 'const:e', got {sc.e_rule!r}")
    if sc.reps < 2 or not sc.n_list or sc.nash_n < 1 or sc.report_M < 1:
        raise ScenarioError("need reps >= 2, a non-empty n_list, nash.n >= 1 and report_M >= 1")


def serialize_scenario(sc: Scenario) -> str:
    lines = [f"model.name = {sc.model}"]
    lines += [f"model.{k} = {io.fmt(v)}" for k, v in sc.model_params]
    for key, (name, kind) in _KEYS.items():
        v = getattr(sc, name)
        if kind in ("ints", "names"):
            text = ",".join(str(e) for e in v)
        else:
            text = io.fmt(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror or exc}") from None
    return parse_scenario(text)


# outputs


class Manifest:
    """Emitted files in stage order, with checksums."""

    def __init__(self, out: Path):
        self.out = out
        self.entries = []

    def add(self, stage: str, path: Path) -> None:
        self.entries.append((stage, path.name, path.stat().st_size, io.sha256(path)))

    def write(self) -> Path:
        return io.write_csv(self.out / "manifest.csv", ["stage", "file", "bytes", "sha256"], self.entries)

    @property
    def files(self):
        return [e[1] for e in self.entries]


def write_solution(sol: MFGSolution, model: ModelSpec, out: Path, stride: int) -> list:
    g = sol.grid
    paths = [
        io.write_flow(out / "nu_bar.csv", sol.nu_bar, stride),
        io.write_field(out / "value.csv", sol.value.values, g, "value", stride),
        io.write_field(out / "policy.csv", sol.policy.controls, g, "control", stride),
    ]
    meta = [("model", model.name), ("L", model.L), ("T", model.T), ("x0", model.x0), ("J", g.J), ("M", g.M),
            ("time_stride", stride), ("tol", sol.tol), ("omega", sol.omega), ("iterations", sol.iterations),
            ("initial", sol.initial), ("residual", sol.residual), ("value_at_start", sol.value_at_start),
            ("holder", sol.holder)]
    meta += [(f"residual[{k}]", r) for k, r in enumerate(sol.history, 1)]
    paths.append(io.write_csv(out / "meta.csv", ["key", "value"], meta))
    return paths


def write_convergence(table, out: Path) -> Path:
    cols = ["n", "e_n", "value_gap", "stderr", "flow_gap", "stderr_flow", "reps"]
    return io.write_csv(out / "convergence.csv", cols, ([getattr(r, c) for c in cols] for r in table.rows))


def write_nash(report, out: Path) -> Path:
    cols = ["n", "e_n", "deviation", "J_eq", "J_dev", "gap", "stderr_gap", "eps", "reps"]
    return io.write_csv(out / "nash_report.csv", cols, ([getattr(r, c) for c in cols] for r in report.rows))


def write_sim_costs(rec, out: Path) -> Path:
    rows = ((rec.seed, rec.n, rec.cfg.e_n, i, rec.running[i], rec.terminal[i], rec.lower[i], rec.upper[i],
             rec.total[i]) for i in range(rec.n))
    return io.write_csv(out / "sim_costs.csv",
                        ["seed", "n", "e_n", "player", "running", "terminal", "lowerY", "upperR", "total"], rows)


def emit_outputs(solution: MFGSolution, tables: dict, out, plots: bool, model: Optional[ModelSpec] = None,
                 stride: int = 1, manifest: Optional[Manifest] = None) -> list:
    """Write the solution, any study tables and, if asked, the SVG charts; returns the file list."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    manifest = manifest if manifest is not None else Manifest(out)
    model = model or make_builtin_model("linear-mf")
    for p in write_solution(solution, model, out, stride):
        manifest.add("solve", p)
    if "convergence" in tables:
        manifest.add("convergence", write_convergence(tables["convergence"], out))
    if "nash" in tables:
        manifest.add("nash", write_nash(tables["nash"], out))
    if plots:
        for p in _plots(solution, tables, out):
            manifest.add("plots", p)
    return list(manifest.files)


def _plots(sol: MFGSolution, tables: dict, out: Path) -> list:
    g = sol.grid
    paths = [io.line_chart(out / "value_t0.svg", {"V(0, x)": (g.x, sol.value.values[0])},
                           "Value at t = 0", "x", "V")]
    stride = max(1, g.M // 100)
    layers = np.arange(0, g.M + 1, stride)
    paths.append(io.heat_strip(out / "policy.svg", sol.policy.controls[layers][:, ::max(1, g.J // 50)],
                               g.t[layers], g.x[::max(1, g.J // 50)], "Equilibrium policy"))
    snaps = {f"t = {g.t[m]:.3g}": (g.x, sol.nu_bar[m]) for m in (0, g.M // 2, g.M)}
    paths.append(io.line_chart(out / "nu_bar_snapshots.svg", snaps, "Fixed-point marginals", "x", "weight"))
    if "convergence" in tables:
        tab = tables["convergence"]
        n = tab.column("n")
        series = {"value gap": (n, tab.column("value_gap")), "flow gap": (n, tab.column("flow_gap"))}
        paths.append(io.line_chart(out / "convergence.svg", series, "Distance to the mean-field limit", "n",
                                   "gap", logx=True))
    return paths


def _deviations(names, model, sol):
    lib = {"equilibrium": lambda: equilibrium_strategy(sol, model),
           "u_min": lambda: constant_strategy(model, model.u_min, "u_min"),
           "u_max": lambda: constant_strategy(model, model.u_max, "u_max"),
           "myopic": lambda: myopic_strategy(model, sol.grid)}
    return [lib[name]() for name in names]


def _solve(sc: Scenario, model: ModelSpec, log=None) -> MFGSolution:
    grid = sc.build_grid(model)
    return solve_mfg(model, grid, tol=sc.tol * model.L, max_iters=sc.max_iters, omega=sc.omega,
                     initial=sc.initial, log=log)


def run_scenario(sc: Scenario, verb: str = "study", out=None, log=print) -> list:
    """Run the stages of ``verb`` and return the emitted file names (manifest last).

    ``simulate`` needs a solved directory and goes through ``simulate_from``.
    """
    out = Path(out or sc.out)
    model = sc.build_model()
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    try:
        if verb == "check":
            rep = diagnose_assumptions(model)
            manifest.add("check", io.write_csv(out / "assumptions.csv", ["quantity", "value"], rep.as_rows()))
            for k, v in rep.as_rows():
                log(f"{k}: {v}")
            return manifest.files + [manifest.write().name]
        sol = _solve(sc, model, log=lambda k, r: log(f"iteration {k}: residual {r:.3e}"))
        stride = sc.stride(sol.grid)
        if verb == "solve":
            emit_outputs(sol, {}, out, sc.plots, model, stride, manifest)
            return manifest.files + [manifest.write().name]
        grid = report_grid(sol, sc.report_M)
        cache = RunCache()
        if verb != "study":
            raise ScenarioError(f"unknown verb {verb!r}")
        tables = {}
        for p in write_solution(sol, model, out, stride):
            manifest.add("solve", p)
        tables["convergence"] = convergence_study(model, sol, sc.n_list, sc.e_n, sc.reps, base_seed=sc.seed,
                                                  cache=cache, grid=grid)
        manifest.add("convergence", write_convergence(tables["convergence"], out))
        cfg = PrelimitConfig.for_model(model, sc.nash_n, sc.e_n(sc.nash_n), seed=sc.seed)
        tables["nash"] = deviation_gap(model, sol, cfg, _deviations(sc.deviations, model, sol), sc.reps,
                                       cache=cache, grid=grid)
        manifest.add("nash", write_nash(tables["nash"], out))
        if sc.plots:
            for p in _plots(sol, tables, out):
                manifest.add("plots", p)
        return manifest.files + [manifest.write().name]
    except ConvergenceError:
        manifest.write()
        raise


def load_solution_policy(directory, model: ModelSpec):
    """Read ``policy.csv`` and ``meta.csv`` of a solved directory into a tabulated strategy."""
    directory = Path(directory)
    _, meta_rows = io.read_csv(directory / "meta.csv")
    meta = dict(meta_rows)
    if meta.get("model") != model.name:
        raise DomainError(f"{directory} holds a solution of {meta.get('model')!r}, not {model.name!r}")
    _, _, table = io.read_field(directory / "policy.csv")
    return table_strategy(model, table, name="equilibrium"), float(meta["value_at_start"])


def simulate_from(sc: Scenario, directory, out: Path, log=print) -> list:
    model = sc.build_model()
    strategy, _ = load_solution_policy(directory, model)
    grid = GridSpec(J=sc.J, M=sc.report_M, L=model.L, T=model.T)
    cfg = PrelimitConfig.for_model(model, sc.nash_n, sc.e_n(sc.nash_n), seed=sc.seed)
    rec = simulate_nplayer(model, cfg, strategy, grid)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    manifest.add("simulate", write_sim_costs(rec, out))
    manifest.add("simulate", io.write_flow(out / "empirical_flow.csv", rec.empirical))
    for w in rec.warnings:
        log(f"warning: {w}")
    return manifest.files + [manifest.write().name]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="queue-mfg", description="Mean-field game solver and n-queue study.")
    ap.add_argument("verb", choices=("solve", "simulate", "study", "check"))
    ap.add_argument("--scenario", help="scenario file; defaults apply when omitted")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, help="base seed (overrides prelimit.seed)")
    ap.add_argument("--plots", action="store_true", help="also write SVG charts")
    ap.add_argument("--policy", help="solved directory whose policy.csv drives 'simulate'")
    args = ap.parse_args(argv)
    try:
        sc = load_scenario(args.scenario) if args.scenario else Scenario()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ScenarioError("--seed must be an unsigned 64-bit integer")
            sc = replace(sc, seed=args.seed)
        if args.plots:
            sc = replace(sc, plots=True)
        out = Path(args.out or sc.out)
        if args.verb == "simulate":
            if not args.policy:
                raise ScenarioError("simulate needs --policy <dir> pointing at a solved directory")
            files = simulate_from(sc, args.policy, out)
        else:
            files = run_scenario(sc, args.verb, out)
    except (ConfigurationError, ValidationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    for f in files:
        print(out / f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
