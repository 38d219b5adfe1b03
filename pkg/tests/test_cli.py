import io

import pytest

from tpdv.cli import OUTPUT_ENV, ConfigError, RunConfig, main, report, run
from tpdv.solver import ConvergenceRecord, IterationRow


@pytest.mark.parametrize("field,value", [
    ("problem", "maxwell"), ("algo", "newton"), ("alpha", -1.0), ("gamma", 0.0), ("tol", 2.0),
    ("max_iter", 0), ("mg_cycles", 0), ("n", [1]), ("mdim", 30), ("cond", 0.5),
    ("flow_dt", 0.0), ("param_mode", "guess"),
])
def test_validation_names_field(field, value):
    cfg = RunConfig(**{field: value})
    with pytest.raises(ConfigError, match=field):
        cfg.validate()


def test_darcy_theoretical_rejected():
    with pytest.raises(ConfigError, match="param_mode"):
        RunConfig(problem="darcy", param_mode="theoretical").validate()


def test_json_round_trip():
    cfg = RunConfig(problem="darcy", n=[8, 16], alpha=0.5, seed=3)
    assert RunConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_json('{"bogus": 1}')


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert RunConfig(seed=2).output_path().parent == tmp_path
    assert RunConfig(output="x/y.csv").output_path("_n8").name == "y_n8.csv"


def record(dofs, lyap=True, label="r"):
    rows = [IterationRow(k, 1.0 / (k + 1), 0.0, 0.0, (0.5 ** k if lyap else None))
            for k in range(3)]
    return ConvergenceRecord(rows=rows, status="converged", dofs=dofs, label=label)


def test_report_single_row():
    assert len(report([record(10)]).splitlines()) == 2


def test_report_without_lyapunov():
    line = report([record(10, lyap=False)]).splitlines()[1]
    assert "0.5" not in line and "converged" in line
    assert "0.500000" in report([record(10)])


def test_report_sorted_by_dofs():
    lines = report([record(50, label="big"), record(5, label="small")]).splitlines()
    assert lines[1].startswith("small") and lines[2].startswith("big")


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--problem", "quadratic", "--tol", "5"])
    assert info.value.code == 2
    assert "tol" in capsys.readouterr().err


def test_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["--output", str(blocker / "sub" / "out.csv")]) == 3


def test_quadratic_run(tmp_path):
    out = io.StringIO()
    path = tmp_path / "q.csv"
    assert run(RunConfig(output=str(path)), out) == 0
    assert "converged" in out.getvalue()
    assert path.read_text().startswith("k,residual_inf")


def test_quadratic_theoretical_lyapunov_decreasing(tmp_path):
    path = tmp_path / "t.csv"
    cfg = RunConfig(param_mode="theoretical", dim=10, mdim=3, cond=2.0, output=str(path))
    assert run(cfg, io.StringIO()) == 0
    E = ConvergenceRecord.from_csv(path.read_text()).lyapunov_values()
    assert all(b < a for a, b in zip(E[:-1], E[1:]))


def test_uzawa_divergence_exit_code(tmp_path):
    assert run(RunConfig(algo="uzawa", output=str(tmp_path / "u.csv")), io.StringIO()) == 1


def test_darcy_run(tmp_path):
    path = tmp_path / "d.csv"
    assert run(RunConfig(problem="darcy", n=[8, 16], output=str(path)), io.StringIO()) == 0
    assert len(path.read_text().splitlines()) == 3
    assert (tmp_path / "d_n8.csv").exists() and (tmp_path / "d_n16.csv").exists()


def test_flow_run(tmp_path):
    out = io.StringIO()
    cfg = RunConfig(problem="flow", dim=8, mdim=3, flow_tend=1.0, flow_dt=1e-2,
                    output=str(tmp_path / "f.csv"))
    assert run(cfg, out) == 0
    assert "violations=0" in out.getvalue()


@pytest.mark.parametrize("argv", [
    ["--problem", "quadratic", "--seed", "4"],
    ["--problem", "darcy", "--n", "8", "--algo", "tpdv-imex"],
])
def test_runs_are_deterministic(argv, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(argv + ["--output", str(a)])
    main(argv + ["--output", str(b)])
    if "darcy" in argv:
        a, b = tmp_path / "a_n8.csv", tmp_path / "b_n8.csv"
    assert a.read_bytes() == b.read_bytes()


def test_dump_config(capsys, tmp_path):
    main(["--dump-config", "--dim", "6", "--mdim", "2", "--output", str(tmp_path / "c.csv")])
    assert '"dim": 6' in capsys.readouterr().out
