import json

from hamlb.cli import EXIT_BAD_REQUEST, EXIT_NOT_CERTIFIED, EXIT_OK, main


def test_run_prints_summary(tmp_path, capsys):
    code = main(["run", "--model", "heis", "--method", "lti", "--n", "4", "--cache", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert out.startswith("certified=-0.5")
    data = json.loads(out[out.index("{") :])
    assert abs(data["certified"] + 0.5) < 1e-5


def test_run_with_config_and_out(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "tfi", "method": "lti", "n": 3}))
    out = tmp_path / "r.json"
    code = main(["run", "--config", str(cfg), "--n", "4", "--out", str(out), "--cache", str(tmp_path)])
    assert code == EXIT_OK
    assert json.loads(out.read_text())["request"]["n"] == 4
    assert "{" not in capsys.readouterr().out


def test_unconverged_run_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"solver": {"method": "admm", "check_every": 1}}))
    code = main(["run", "--config", str(cfg), "--model", "tfi", "--method", "lti", "--n", "5", "--max-iters", "2", "--out", str(tmp_path / "r.json")])
    assert code == EXIT_NOT_CERTIFIED


def test_bad_requests(tmp_path, capsys):
    assert main(["run", "--model", "potts", "--method", "lti", "--n", "4"]) == EXIT_BAD_REQUEST
    assert main(["run", "--model", "tfi", "--method", "mps", "--n", "8"]) == EXIT_BAD_REQUEST
    assert main(["run", "--model", "tfi", "--method", "lti", "--n", "4", "--param", "hz"]) == EXIT_BAD_REQUEST
    assert "hamlb: error:" in capsys.readouterr().err


def test_param_override(tmp_path, capsys):
    code = main(["run", "--model", "tfi", "--param", "hz=0", "--method", "lti", "--n", "2", "--out", str(tmp_path / "r.json")])
    assert code == EXIT_OK
    data = json.loads((tmp_path / "r.json").read_text())
    # classical Ising: the bound is exact
    assert abs(data["certified"] + 0.25) < 1e-6


def test_sweep_and_report(tmp_path, capsys):
    table = tmp_path / "s.csv"
    code = main(["sweep", "--model", "tfi", "--method", "lti", "--n", "3", "4", "5", "--out", str(table), "--cache", str(tmp_path)])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and lines[0].startswith("tfi lti n=3")
    code = main(["report", str(table), "--out", str(tmp_path / "p.csv")])
    assert code == EXIT_OK
    assert "LTI fit" in capsys.readouterr().out


def test_report_missing_file(tmp_path):
    assert main(["report", str(tmp_path / "none.csv")]) == EXIT_BAD_REQUEST
