import csv

import pytest

from aoimfq.cli import EXIT_NUMERICAL, EXIT_THRESHOLD, EXIT_USAGE, main, read_config

SCEN = ["--lambdas", "1,2", "--mus", "3,1"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_analyze_writes_schema(tmp_path):
    assert main(["analyze", "--policies", "fsfs,sbr", *SCEN, "--grid", "0:5:11", "--out", str(tmp_path)]) == 0
    cdf = rows(tmp_path / "fsfs_cdf.csv")
    assert cdf[0] == ["x", "source_1", "source_2"] and len(cdf) == 12
    assert float(cdf[1][0]) == 0.0 and float(cdf[-1][0]) == 5.0
    assert rows(tmp_path / "sbr_pdf.csv")[0] == ["x", "source_1", "source_2"]
    summary = rows(tmp_path / "fsfs_summary.csv")
    assert summary[0] == ["metric", "source", "value"]
    metrics = {(m, s) for m, s, _ in summary[1:]}
    assert {("mean", "1"), ("moment_2", "2"), ("mean", "all"), ("violation@5.0", "all")} <= metrics


def test_analyze_balanced_and_default_grid(tmp_path, capsys):
    assert main(["analyze", "--policy", "esfs", "--balanced", "--n", "3", "--rho", "1.5", "--grid", "20",
                 "--gammas", "1,3", "--out", str(tmp_path)]) == 0
    assert len(rows(tmp_path / "esfs_cdf.csv")) == 21
    assert float(rows(tmp_path / "esfs_cdf.csv")[-1][1]) >= 0.9999
    assert "ESFS: E[AoI]" in capsys.readouterr().out


def test_simulate_tags_rows(tmp_path):
    assert main(["simulate", "--policy", "sbr", *SCEN, "--events", "20000", "--grid", "0:4:5",
                 "--seed", "3", "--out", str(tmp_path)]) == 0
    sim = rows(tmp_path / "sbr_sim_cdf.csv")
    assert sim[0] == ["x", "source_1", "source_2", "source"]
    assert all(r[-1] == "sim" for r in sim[1:])
    summary = dict(((m, s), v) for m, s, v in rows(tmp_path / "sbr_sim_summary.csv")[1:])
    assert summary[("seed", "all")] == "3" and summary[("events", "all")] == "20000"


def test_compare_threshold_exit(tmp_path):
    args = ["compare", "--policy", "fsfs", *SCEN, "--events", "200000", "--grid", "30", "--out", str(tmp_path)]
    assert main(args + ["--threshold", "0.05"]) == 0
    assert main(args + ["--threshold", "1e-6"]) == EXIT_THRESHOLD
    header = rows(tmp_path / "compare.csv")[0]
    assert header == ["policy", "source", "sup_distance", "model_mean", "sim_mean"]


def test_statecount(tmp_path, capsys):
    assert main(["statecount", "--n", "2..4", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split() == ["policy", "N=2", "N=3", "N=4"]
    assert out[1].split() == ["SBR", "10", "17", "26"]
    assert out[3].split() == ["ESFS", "15", "80", "606"]
    assert rows(tmp_path / "statecount.csv")[1] == ["sbr", "2", "10", "7"]


@pytest.mark.parametrize("axis, extra", [
    ("rho", ["--balanced", "--n", "2", "--range", "0.5:2"]),
    ("rho1", ["--rho", "1.0", "--range", "0.2:0.8"]),
    ("gamma", SCEN + ["--range", "0:6"]),
])
def test_sweeps(tmp_path, axis, extra):
    assert main(["sweep", "--axis", axis, "--policies", "esfs,sbr", "--points", "3", *extra, "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / f"sweep_{axis}.csv")
    assert table[0][0] == axis and len(table) == 4 and len(table[0]) == 3


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# scenario\npolicy = sbr\nlambdas = 1, 2   # two sources\nmus = 3,1\ngrid = 0:2:3\n")
    assert read_config(cfg)["lambdas"] == "1, 2"
    out = tmp_path / "o"
    assert main(["analyze", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "sbr_cdf.csv").exists() and len(rows(out / "sbr_cdf.csv")) == 4
    assert main(["analyze", "--config", str(cfg), "--policy", "esfs", "--out", str(out)]) == 0
    assert (out / "esfs_cdf.csv").exists()


@pytest.mark.parametrize("argv", [
    ["analyze", *SCEN],
    ["analyze", "--policy", "lifo", *SCEN],
    ["analyze", "--policy", "sbr", "--lambdas", "1,2", "--mus", "1"],
    ["analyze", "--policy", "sbr", "--lambdas", "1,x", "--mus", "1,1"],
    ["analyze", "--policy", "sbr", "--balanced", "--n", "2"],
    ["simulate", "--policy", "sbr", *SCEN, "--events", "10", "--horizon", "5"],
    ["sweep", "--policy", "sbr", "--axis", "rho1", "--rho", "1", "--range", "0.5:1"],
    ["sweep", "--policy", "sbr", "--axis", "rho", *SCEN],
    ["sweep", "--policy", "sbr", *SCEN],
    ["statecount", "--n", "3..2"],
    ["nonsense"],
])
def test_usage_errors(argv, tmp_path):
    code = None
    try:
        code = main(argv + ["--out", str(tmp_path)])
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE


def test_bad_config(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("policy sbr\n")
    assert main(["statecount", "--config", str(cfg)]) == EXIT_USAGE
    cfg.write_text("colour = blue\n")
    assert main(["statecount", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["statecount", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE


def test_numerical_failure_exit(tmp_path, monkeypatch):
    from aoimfq import cli
    from aoimfq.observer import NumericalError

    def boom(*a, **k):
        raise NumericalError("stationary solve did not converge", 1.0)

    monkeypatch.setattr(cli, "analyze", boom)
    assert main(["analyze", "--policy", "sbr", *SCEN, "--out", str(tmp_path)]) == EXIT_NUMERICAL
