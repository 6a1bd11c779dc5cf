import json
import subprocess
import sys

import numpy as np
import pytest

from multiperc.cli import main, parse_grid, parse_log_grid


def run_cli(args):
    proc = subprocess.run([sys.executable, "-m", "multiperc.cli", *args],
                          capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def test_parse_grid():
    assert parse_grid("1:2:0.5") == [1.0, 1.5, 2.0]
    with pytest.raises(ValueError):
        parse_grid("1:2")
    with pytest.raises(ValueError):
        parse_grid("2:1:0.5")


def test_parse_log_grid():
    pts = parse_log_grid("1e-2:1:log:3")
    assert np.allclose(pts, [1e-2, 1e-1, 1.0])
    with pytest.raises(ValueError):
        parse_log_grid("1:10:linear")


def test_se_erm_alpha_zero_rejected():
    code = main(["se-erm", "--alpha", "0:0:1", "--k", "3"])
    assert code == 1


def test_se_bayes_csv_roundtrip(tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    args = ["se-bayes", "--k", "2", "--teacher", "gaussian", "--alpha", "0.5:1.5:0.5",
            "--gh-order", "40", "--n-mc", "40000", "--out"]
    assert main(args + [str(out1)]) == 0
    assert main(args + [str(out2)]) == 0
    b1, b2 = out1.read_bytes(), out2.read_bytes()
    assert b1 == b2  # byte-for-byte reproducible
    lines = b1.decode().splitlines()
    assert lines[0].startswith("# tool: multiperc")
    assert lines[2].startswith("# config:")
    header = lines[3].split(",")
    assert "alpha" in header and "eps_gen" in header and "phi" in header
    rows = [dict(zip(header, l.split(","))) for l in lines[4:]]
    eps = [float(r["eps_gen"]) for r in rows]
    assert all(b <= a + 3e-3 for a, b in zip(eps, eps[1:]))  # decreasing curve


def test_scan_transition_gaussian_exit_2(tmp_path):
    out = tmp_path / "rep.json"
    code = main(["scan-transition", "--k", "3", "--teacher", "gaussian",
                 "--alpha-lo", "0.8", "--alpha-hi", "1.4", "--grid-step", "0.3",
                 "--n-mc", "20000", "--out", str(out)])
    assert code == 2
    payload = json.loads(out.read_text())
    assert payload["found"] is False and payload["alpha_it"] is None


def test_scan_transition_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    import importlib.resources as res

    out = tmp_path / "rep.json"
    main(["scan-transition", "--k", "3", "--teacher", "gaussian",
          "--alpha-lo", "0.8", "--alpha-hi", "1.4", "--grid-step", "0.3",
          "--n-mc", "20000", "--out", str(out)])
    schema = json.loads(res.files("multiperc").joinpath("report_schema.json").read_text())
    jsonschema.validate(json.loads(out.read_text()), schema)


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 2, "alpha": "0.5:0.5:1", "n_mc": 20000,
                               "gh_order": 30}))
    out1 = tmp_path / "o1.csv"
    # flag overrides config: gh_order 40 beats 30; config beats default k=3
    assert main(["se-bayes", "--config", str(cfg), "--gh-order", "40",
                 "--out", str(out1)]) == 0
    text = out1.read_text()
    conf = json.loads(text.splitlines()[2].split("# config: ")[1])
    assert conf["k"] == 2 and conf["gh_order"] == 40 and conf["n_mc"] == 20000


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["se-bayes", "--config", str(cfg)]) == 1


def test_erm_fit_square_smoke(tmp_path):
    out = tmp_path / "fit.csv"
    assert main(["erm-fit", "--loss", "square", "--lam", "1.0", "--alpha", "2.0",
                 "--d", "120", "--seeds", "3", "--n-test", "20000",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = lines[3].split(",")
    rows = [dict(zip(header, l.split(","))) for l in lines[4:]]
    assert rows[-1]["seed"] == "mean"
    assert 0.0 < float(rows[-1]["test_error"]) < 0.67


def test_module_entrypoint():
    code, out, err = run_cli(["--version"])
    assert code == 0 and "multiperc" in out


def test_threads_and_env_default_deterministic(tmp_path, monkeypatch):
    args = ["se-bayes", "--k", "2", "--teacher", "gaussian", "--alpha", "0.5:1:0.5",
            "--gh-order", "30", "--n-mc", "20000"]
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    assert main(args + ["--threads", "2", "--out", str(a)]) == 0
    assert main(args + ["--threads", "1", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("MULTIPERC_THREADS", "2")
    assert main(args + ["--out", str(c)]) == 0
    assert a.read_bytes() == c.read_bytes()


def test_amp_cli_smoke(tmp_path):
    out = tmp_path / "amp.csv"
    assert main(["amp", "--teacher", "gaussian", "--alpha", "1.0", "--d", "250",
                 "--seeds", "2", "--n-test", "10000", "--gh-order", "50",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = lines[3].split(",")
    rows = [dict(zip(header, l.split(","))) for l in lines[4:]]
    assert rows[-1]["seed"] == "se_prediction" and rows[-2]["seed"] == "mean"
    assert float(rows[-1]["q_00"]) > 0
