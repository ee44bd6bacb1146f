import dataclasses
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from queue_mfg import io
from queue_mfg.cli import Scenario, ScenarioError, main, parse_scenario, serialize_scenario
from queue_mfg.measures import flow_distance

GOLDEN_STUDY_FILES = ["nu_bar.csv", "value.csv", "policy.csv", "meta.csv", "convergence.csv", "nash_report.csv",
                      "manifest.csv"]
SMALL = """\
model.name = linear-mf
grid.J = 40
prelimit.n_list = 10, 20
prelimit.reps = 3
nash.n = 20
"""

scenarios = st.builds(
    Scenario,
    model=st.sampled_from(["linear-mf", "uncontrolled"]),
    model_params=st.sampled_from([(), (("lambda_hat", 0.75),), (("a1", 2.0), ("y", 0.25))]),
    J=st.integers(2, 400), M=st.integers(0, 10_000),
    tol=st.floats(1e-6, 0.1), omega=st.floats(0.01, 1.0), max_iters=st.integers(1, 200),
    initial=st.sampled_from(["uncontrolled", "delta"]),
    n_list=st.lists(st.integers(1, 500), min_size=1, max_size=4, unique=True).map(lambda v: tuple(sorted(v))),
    e_rule=st.sampled_from(["n", "power:0.5", "const:100"]),
    reps=st.integers(2, 50), seed=st.integers(0, 2**64 - 1), report_M=st.sampled_from([10, 50, 100]),
    nash_n=st.integers(1, 500),
    deviations=st.sampled_from([("equilibrium",), ("equilibrium", "u_min", "u_max", "myopic"), ("u_max",)]),
    out=st.sampled_from(["out", "runs/a"]), plots=st.booleans(), time_stride=st.integers(0, 50),
)


@given(sc=scenarios)
def test_scenario_round_trip(sc):
    text = serialize_scenario(sc)
    assert parse_scenario(text) == sc
    assert serialize_scenario(parse_scenario(text)) == text


@pytest.mark.parametrize("text,where", [
    ("grid.J = 40\nbogus line\n", "line 2"),
    ("grid.J = forty\n", "grid.J"),
    ("mfg.color = red\n", "mfg.color"),
    ("prelimit.e_rule = cubic\n", "e_rule"),
])
def test_parse_errors_name_line_or_key(text, where):
    with pytest.raises(ScenarioError, match=where):
        parse_scenario(text)


def write(tmp_path, text, name="sc.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_unknown_model_fails_without_data_files(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["study", "--scenario", write(tmp_path, "model.name = foobar\n"), "--out", str(out)])
    assert code != 0
    err = capsys.readouterr().err
    assert "linear-mf" in err and "uncontrolled" in err
    assert not out.exists() or not any(out.iterdir())


def test_study_manifest_is_golden_and_ordered(study_runs):
    run = study_runs[0]
    assert run["files"] == GOLDEN_STUDY_FILES
    header, rows = io.read_csv(run["out"] / "manifest.csv")
    assert header == ["stage", "file", "bytes", "sha256"]
    stages = [r[0] for r in rows]
    order = ["solve", "convergence", "nash", "plots"]
    assert [order.index(s) for s in stages] == sorted(order.index(s) for s in stages)
    for stage, name, size, digest in rows:
        assert io.sha256(run["out"] / name) == digest
        assert (run["out"] / name).stat().st_size == int(size)


def test_study_tables_follow_declared_schemas(study_runs):
    out = study_runs[0]["out"]
    header, rows = io.read_csv(out / "convergence.csv")
    assert header == ["n", "e_n", "value_gap", "stderr", "flow_gap", "stderr_flow", "reps"]
    assert [r[0] for r in rows] == ["50", "100", "200"]
    header, rows = io.read_csv(out / "nash_report.csv")
    assert header == ["n", "e_n", "deviation", "J_eq", "J_dev", "gap", "stderr_gap", "eps", "reps"]
    assert [r[2] for r in rows] == ["equilibrium", "u_min", "u_max", "myopic"]


def test_nu_bar_round_trip(study_runs, solved, linear):
    sol = solved["sol"]
    back = io.read_flow(study_runs[0]["out"] / "nu_bar.csv", linear.L)
    assert flow_distance(back, sol.nu_bar.coarsen(back.grid)) <= 1e-9 * linear.L
    _, meta = io.read_csv(study_runs[0]["out"] / "meta.csv")
    meta = dict(meta)
    assert float(meta["value_at_start"]) == sol.value_at_start
    assert int(meta["iterations"]) == sol.iterations


def test_field_csv_round_trip(tmp_path, solved):
    sol = solved["sol"]
    g = sol.grid
    io.write_field(tmp_path / "v.csv", sol.value.values, g, "value", stride=g.M // 100)
    t, x, table = io.read_field(tmp_path / "v.csv")
    assert np.array_equal(table, sol.value.values[:: g.M // 100])
    assert np.array_equal(x, g.x)


@pytest.mark.parametrize("plots", [False, True])
def test_solve_with_and_without_plots(tmp_path, capsys, plots):
    out = tmp_path / "solve"
    args = ["solve", "--scenario", write(tmp_path, SMALL), "--out", str(out)] + (["--plots"] if plots else [])
    assert main(args) == 0
    svgs = sorted(p.name for p in out.glob("*.svg"))
    if not plots:
        assert svgs == []
    else:
        assert svgs == ["nu_bar_snapshots.svg", "policy.svg", "value_t0.svg"]
        for name in svgs:
            root = ET.parse(out / name).getroot()
            assert root.tag.endswith("svg")
    printed = capsys.readouterr().out.split()
    assert printed[-1].endswith("manifest.csv")


def test_study_plots_include_the_convergence_curve(tmp_path):
    out = tmp_path / "study"
    assert main(["study", "--scenario", write(tmp_path, SMALL), "--out", str(out), "--plots"]) == 0
    assert (out / "convergence.svg").exists()
    ET.parse(out / "convergence.svg")
    _, rows = io.read_csv(out / "manifest.csv")
    assert rows[-1][0] == "plots"


def test_simulate_needs_and_uses_a_solved_directory(tmp_path, capsys):
    sc = write(tmp_path, SMALL)
    assert main(["simulate", "--scenario", sc, "--out", str(tmp_path / "sim")]) == 2
    assert "--policy" in capsys.readouterr().err
    assert main(["solve", "--scenario", sc, "--out", str(tmp_path / "sol")]) == 0
    assert main(["simulate", "--scenario", sc, "--out", str(tmp_path / "sim"), "--policy", str(tmp_path / "sol"),
                 "--seed", "5"]) == 0
    header, rows = io.read_csv(tmp_path / "sim" / "sim_costs.csv")
    assert header == ["seed", "n", "e_n", "player", "running", "terminal", "lowerY", "upperR", "total"]
    assert len(rows) == 20 and rows[0][0] == "5"


def test_non_convergence_exits_nonzero_with_manifest(tmp_path, capsys):
    out = tmp_path / "nc"
    sc = write(tmp_path, SMALL + "mfg.tol = 1e-9\nmfg.max_iters = 2\n")
    assert main(["study", "--scenario", sc, "--out", str(out)]) == 3
    assert "residual" in capsys.readouterr().err
    assert (out / "manifest.csv").exists()


def test_unwritable_output_names_the_path(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["check", "--out", str(blocker / "sub")]) == 4
    assert str(blocker) in capsys.readouterr().err


def test_check_writes_assumption_report(tmp_path, capsys):
    out = tmp_path / "check"
    assert main(["check", "--out", str(out)]) == 0
    _, rows = io.read_csv(out / "assumptions.csv")
    rows = dict(rows)
    assert rows["monotonicity_ok"] == "true" and rows["violations"] == "0"


def test_seed_flag_must_fit_64_bits(tmp_path):
    assert main(["check", "--out", str(tmp_path), "--seed", str(2**64)]) == 2


def test_scenario_defaults_match_the_default_pipeline():
    sc = Scenario()
    assert (sc.model, sc.J, sc.tol, sc.omega, sc.reps, sc.n_list) == ("linear-mf", 200, 1e-3, 0.5, 30, (50, 100, 200))
    assert dataclasses.replace(sc, e_rule="power:0.5").e_n(100) == 10.0
