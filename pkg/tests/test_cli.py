import csv
import json
import subprocess
import sys

import pytest

from kaclab.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, eval_angle, main, parse_nu


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sumrule_example(tmp_path):
    rc = main(["sumrule", "--M", "1", "--N", "2", "--lambda-r", "1", "--mu", "1", "--nu", "uniform",
               "--kmax", "4", "--brute-force", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    rows = read_csv(tmp_path / "sumrule.csv")
    assert [r["k"] for r in rows] == ["0", "1", "2", "3", "4"]
    assert all(float(r["abs_error"]) < 1e-10 for r in rows)
    assert float(rows[2]["closed_form"]) == 19 / 32
    side = json.loads((tmp_path / "sumrule.json").read_text())
    for key in ("config", "seed", "versions", "wall_time_s"):
        assert key in side


def test_ou_check_example(tmp_path):
    rc = main(["ou-check", "--a", "2", "--smax", "6", "--tol", "1e-6", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    side = json.loads((tmp_path / "ou-check.json").read_text())
    assert side["contractivity"] and side["derivative"] and side["integral"] and side["log_sobolev"]


def test_unknown_flag():
    proc = subprocess.run([sys.executable, "-m", "kaclab", "sumrule", "--bogus"], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "usage" in proc.stderr


def test_check_failure_exit(tmp_path):
    rc = main(["sumrule", "--kmax", "1", "--local-lambda", "1", "--brute-force", "--tol", "0",
               "--out", str(tmp_path)])
    assert rc == EXIT_CHECK


def test_malformed_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"kmax": 2, "not_an_option": 1}')
    assert main(["sumrule", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg.write_text("{broken")
    assert main(["sumrule", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_nu_is_config_error(tmp_path):
    assert main(["bounds", "--nu", "atoms:0.7", "--mu", "1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"M": 2, "N": 3, "local_lambda": 1.0, "kmax": 2}))
    assert main(["sumrule", "--config", str(cfg), "--kmax", "3", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "sumrule.csv")
    assert len(rows) == 4
    side = json.loads((tmp_path / "sumrule.json").read_text())
    assert side["config"]["M"] == 2 and side["config"]["kmax"] == 3


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("KACLAB_OUT", str(tmp_path / "env"))
    assert main(["bounds", "--mu", "1", "--N", "10"]) == EXIT_OK
    rows = read_csv(tmp_path / "env" / "bounds.csv")
    assert float(rows[0]["sphere_factor"]) == pytest.approx(2.1)


def test_seventeen_digits(tmp_path):
    main(["bounds", "--mu", "1", "--N", "2", "--t-grid", "1", "--out", str(tmp_path)])
    row = read_csv(tmp_path / "bounds.csv")[0]
    assert row["gauss_factor"] == format(float(row["gauss_factor"]), ".17g")


def test_dsmc_entropy_pipeline(tmp_path):
    rc = main(["dsmc", "--M", "1", "--N", "2", "--local-lambda", "1", "--replicas", "3000",
               "--t-grid", "0.5,1", "--checkpoint", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    rows = read_csv(tmp_path / "dsmc.csv")
    assert list(rows[0]) == ["t", "mean", "stderr", "n"]
    side = json.loads((tmp_path / "dsmc.json").read_text())
    files = [str(tmp_path / f) for f in side["checkpoints"]]
    assert main(["entropy", *files, "--out", str(tmp_path)]) == EXIT_OK
    ent = read_csv(tmp_path / "entropy.csv")
    assert [r["method"] for r in ent] == ["knn"] * 3
    assert list(ent[0]) == ["t", "S_hat", "stderr", "method", "n"]


def test_series_columns(tmp_path):
    assert main(["series", "--M", "1", "--N", "2", "--local-lambda", "1", "--t-grid", "0,0.5",
                 "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "series.csv")
    assert list(rows[0]) == ["t", "S", "I", "bound_factor", "S_bound", "I_bound", "covered_mass", "components"]


def test_sigma_check(tmp_path):
    assert main(["sigma-check", "--trials", "50", "--out", str(tmp_path)]) == EXIT_OK
    assert len(read_csv(tmp_path / "sigma-check.csv")) == 50


RUNS = {
    "sumrule": ["sumrule", "--local-lambda", "1", "--M", "2", "--N", "2", "--kmax", "2", "--brute-force"],
    "series": ["series", "--local-lambda", "1", "--mode", "sample", "--histories", "500", "--t-grid", "0.5"],
    "dsmc": ["dsmc", "--local-lambda", "1", "--replicas", "500", "--t-grid", "0.5,1", "--workers", "2"],
    "ou-check": ["ou-check", "--points", "3", "--smax", "1"],
    "sigma-check": ["sigma-check", "--trials", "30"],
    "bounds": ["bounds", "--mu", "1"],
}


@pytest.mark.parametrize("name", sorted(RUNS))
def test_reproducible(tmp_path, name):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(RUNS[name] + ["--seed", "3", "--out", str(a)]) == EXIT_OK
    assert main(RUNS[name] + ["--seed", "3", "--out", str(b)]) == EXIT_OK
    assert (a / f"{name}.csv").read_bytes() == (b / f"{name}.csv").read_bytes()


def test_nu_parsing():
    assert parse_nu("uniform").kind == "uniform"
    nu = parse_nu("atoms:pi/3,-pi/3")
    assert nu.moment_sin2 == pytest.approx(0.75)
    assert parse_nu('{"kind":"atoms","atoms":[{"theta":1.5707963267948966,"weight":1}]}').moment_sin2 == pytest.approx(1)
    assert eval_angle("2*pi") == pytest.approx(6.283185307179586)
