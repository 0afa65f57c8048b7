import csv
import json

import numpy as np
import pytest

from ebshrink.cli import main


def _write_xy(tmp_path, rng, n=40, p=8):
    X = rng.standard_normal((n, p))
    y = X @ (0.3 * rng.standard_normal(p)) + rng.standard_normal(n)
    xp, yp = tmp_path / "X.csv", tmp_path / "y.csv"
    np.savetxt(xp, X, delimiter=",", header=",".join(f"x{j}" for j in range(p)), comments="")
    np.savetxt(yp, y, delimiter=",", header="y", comments="")
    return xp, yp


def test_fit_ridge_mml_json(tmp_path, rng, capsys):
    xp, yp = _write_xy(tmp_path, rng)
    assert main(["fit", "ridge-mml", "--x", str(xp), "--y", str(yp)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert {"tau2", "sigma2", "lambda"} <= out.keys()
    assert out["lambda"] == pytest.approx(out["sigma2"] / out["tau2"])


@pytest.mark.filterwarnings("ignore:negative group variance")
def test_fit_group_moment_json(tmp_path, rng, capsys):
    xp, yp = _write_xy(tmp_path, rng)
    gp = tmp_path / "g.csv"
    gp.write_text("group\n" + "\n".join(["a"] * 4 + ["b"] * 4) + "\n")
    code = main(["fit", "group-moment", "--x", str(xp), "--y", str(yp), "--groups", str(gp)])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["alpha"]) == 2 and len(out["multipliers"]) == 2


def test_missing_seed_is_domain_error(capsys):
    assert main(["simulate", "emse"]) == 1
    assert "seed" in capsys.readouterr().err
    assert main(["fit", "enet", "--x", "a.csv", "--y", "b.csv", "--lambda1", "1", "--lambda2", "1"]) == 1


def test_missing_file_is_io_error(tmp_path, capsys):
    code = main(["fit", "ridge-mml", "--x", str(tmp_path / "none.csv"), "--y", str(tmp_path / "y.csv")])
    assert code == 2
    assert capsys.readouterr().out == ""


def test_simulate_batting_writes_table(tmp_path, capsys):
    out = tmp_path / "bat"
    assert main(["simulate", "batting", "--seed", "0", "--out", str(out)]) == 0
    assert capsys.readouterr().out == ""
    rows = list(csv.DictReader(open(out / "batting.csv")))
    assert len(rows) == 18
    summary = json.loads((out / "batting_summary.json").read_text())
    assert round(summary["mu_hat"], 3) == 0.256
    assert summary["tau2_hat"] == pytest.approx(0.000623, abs=5e-7)
    assert float(rows[0]["theta_hat_18"]) == pytest.approx(0.271, abs=5e-4)


def test_simulate_emse_closed_form_without_seed(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 50, "p": [10, 20], "tau2": 0.01}))
    assert main(["simulate", "emse", "--closed-form", "--config", str(cfg)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("n,p,tau2") and len(lines) == 3


def test_standardize(tmp_path, rng, capsys):
    xp, _ = _write_xy(tmp_path, rng, 30, 3)
    outp = tmp_path / "z.csv"
    assert main(["standardize", "--x", str(xp), "--out", str(outp)]) == 0
    Z = np.loadtxt(outp, delimiter=",", skiprows=1)
    assert np.allclose(Z.mean(0), 0, atol=1e-12) and np.allclose(Z.std(0), 1)


def test_seed_check(capsys):
    assert main(["seed-check", "--seed", "5", "--stream", "2"]) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["reproducible"] is True
    main(["seed-check", "--seed", "5", "--stream", "2"])
    assert json.loads(capsys.readouterr().out)["draws"] == first["draws"]
    main(["seed-check", "--seed", "5", "--stream", "3"])
    assert json.loads(capsys.readouterr().out)["draws"] != first["draws"]
