import csv
import hashlib
import json
import math
from pathlib import Path

import pytest

from fpplab.cli import (EXIT_BUDGET, EXIT_COMPUTE, EXIT_CONFIG, EXIT_EMPTY, EXIT_OK, ConfigError,
                        emit_plotdata, main, parse_config)

HEAD = """schema_version = 1
kind = "{kind}"
seed = 7
dimension = 2
n_samples = {n}
"""
CONST = """[distribution]
kind = "constant"
c = 0.05
"""
UNIF = """[distribution]
kind = "uniform"
lo = 0.001
hi = 0.0625
"""
TWO = """[distribution]
kind = "two_point"
w0 = 0.02
w1 = 0.05
p = 0.5
"""


def write(tmp_path, kind, dist, params, n=20, extra="", name="cfg.toml"):
    p = tmp_path / name
    p.write_text(HEAD.format(kind=kind, n=n) + extra + dist + "[params]\n" + params)
    return p


def run(*args):
    return main([str(a) for a in args])


def test_mu_constant(tmp_path):
    cfg = write(tmp_path, "mu", CONST, "N_list = [10, 100]\n", n=3)
    out = tmp_path / "out"
    assert run("mu", "--config", cfg, "--out", out) == EXIT_OK
    doc = json.loads((out / "results.json").read_text())
    assert abs(doc["result"]["mu_hat"] - 0.05) <= 1e-12 * 100 * 0.05
    assert "workers" not in json.dumps(doc["config"])
    for name in ("results.json", "scales.csv", "manifest.json", "run.log", "plot_mu.csv"):
        assert (out / name).exists()


def test_manifest_digests(tmp_path):
    cfg = write(tmp_path, "mu", CONST, "N_list = [10, 20]\n", n=2)
    out = tmp_path / "out"
    run("run", "--config", cfg, "--out", out)
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_sha256"] == hashlib.sha256(cfg.read_bytes()).hexdigest()
    assert man["started"] <= man["finished"]
    for art in man["artifacts"]:
        assert hashlib.sha256((out / art["path"]).read_bytes()).hexdigest() == art["sha256"]


@pytest.mark.parametrize("mutation", [
    lambda s: s.replace("seed = 7", "seed = 7\nbogus = 1"),
    lambda s: s.replace("[params]\n", "[params]\nunknown_param = 3\n"),
    lambda s: s.replace('c = 0.05', 'c = 0.2'),
    lambda s: s.replace("schema_version = 1", "schema_version = 9"),
    lambda s: s.replace("N_list = [10, 100]", "N_list = 10"),
    lambda s: s + "\n[[broken",
])
def test_config_errors_leave_no_artifacts(tmp_path, mutation):
    cfg = write(tmp_path, "mu", CONST, "N_list = [10, 100]\n", n=3)
    cfg.write_text(mutation(cfg.read_text()))
    out = tmp_path / "out"
    assert run("mu", "--config", cfg, "--out", out) == EXIT_CONFIG
    assert not out.exists()


def test_subcommand_kind_mismatch(tmp_path):
    cfg = write(tmp_path, "mu", CONST, "N_list = [10]\n", n=3)
    assert run("chi", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG


def test_validate(tmp_path, capsys):
    cfg = write(tmp_path, "mu", CONST, "N_list = [10]\n", n=3)
    assert run("validate", "--config", cfg) == EXIT_OK
    assert "kind=mu" in capsys.readouterr().out


def test_tail_needs_exactly_one_magnitude():
    base = {"schema_version": 1, "kind": "tail", "seed": 1, "n_samples": 5,
            "distribution": {"kind": "constant", "c": 0.05},
            "params": {"N": 10, "side": "upper", "mu_ref": 0.05}}
    with pytest.raises(ConfigError):
        parse_config(base)
    base["params"]["a"] = 0.5
    assert parse_config(base).params["a"] == 0.5


def test_exact_oracle_pmf_sums_to_one(tmp_path):
    cfg = write(tmp_path, "exact_oracle", TWO, "shape = [3, 3]\nthresholds = [0.125]\n")
    out = tmp_path / "out"
    assert run("oracle", "--config", cfg, "--out", out) == EXIT_OK
    raw = (out / "pmf.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.DictReader(raw.decode().splitlines()))
    assert abs(math.fsum(float(r["probability"]) for r in rows) - 1) <= 1e-12
    assert list(rows[0]) == ["time", "probability"]


def test_rate_curve_plotdata_columns(tmp_path):
    cfg = write(tmp_path, "rate_curve", UNIF,
                'N = 16\nside = "lower"\nzeta_grid = [0.002, 0.004]\nmu_ref = 0.025\n', n=50)
    out = tmp_path / "out"
    assert run("rate_curve", "--config", cfg, "--out", out) == EXIT_OK
    header = (out / "plot_rate_curve.csv").read_text().splitlines()[0]
    assert header == "zeta,p_hat,ci_lo,ci_hi,neg_log_p_normalized"


def test_chi_plotdata_and_svg(tmp_path):
    cfg = write(tmp_path, "chi", UNIF, "N_list = [8, 16, 32]\n", n=30)
    out = tmp_path / "out"
    assert run("chi", "--config", cfg, "--out", out, "--svg") == EXIT_OK
    header = (out / "plot_chi.csv").read_text().splitlines()[0]
    assert header == "log_N,log_var"
    side = json.loads((out / "plot_chi_fit.json").read_text())
    assert {"slope", "intercept"} <= set(side)
    assert (out / "plot_chi.svg").read_text().startswith("<svg")
    again = tmp_path / "again"
    assert run("plotdata", out / "results.json", "--out", again) == EXIT_OK
    assert (again / "plot_chi.csv").read_bytes() == (out / "plot_chi.csv").read_bytes()


def test_empty_plotdata_exit(tmp_path):
    p = tmp_path / "results.json"
    p.write_text(json.dumps({"config": {"kind": "rate_curve"}, "result": {}}))
    assert run("plotdata", p) == EXIT_EMPTY
    with pytest.raises(ValueError):
        emit_plotdata({}, "chi")


def test_degenerate_chi_has_no_plot_but_succeeds(tmp_path):
    cfg = write(tmp_path, "chi", CONST, "N_list = [8, 16, 32]\n", n=30)
    out = tmp_path / "out"
    assert run("chi", "--config", cfg, "--out", out) == EXIT_OK
    assert json.loads((out / "results.json").read_text())["result"]["degenerate"]
    assert run("plotdata", out / "results.json") == EXIT_EMPTY


def test_rerun_and_workers_byte_identical(tmp_path):
    cfg = write(tmp_path, "tail", UNIF, 'N = 24\nside = "upper"\na = 0.2\nmu_ref = "estimate"\n'
                'mu_samples = 30\n', n=60)
    outs = []
    for i, w in enumerate((1, 8, 1)):
        o = tmp_path / f"o{i}"
        assert run("tail", "--config", cfg, "--out", o, "--workers", w) == EXIT_OK
        outs.append(o)
    for name in ("results.json", "tail.csv", "plot_tail.csv"):
        blobs = {(o / name).read_bytes() for o in outs}
        assert len(blobs) == 1


def test_env_out_override(tmp_path, monkeypatch):
    cfg = write(tmp_path, "mu", CONST, "N_list = [10]\n", n=2, extra='out = "ignored"\n')
    monkeypatch.setenv("FPPLAB_OUT", str(tmp_path / "envout"))
    assert run("mu", "--config", cfg) == EXIT_OK
    assert (tmp_path / "envout" / "results.json").exists()


def test_budget_exhaustion_exit(tmp_path):
    cfg = write(tmp_path, "mu", UNIF, "N_list = [200]\n", n=4)
    out = tmp_path / "out"
    assert run("mu", "--config", cfg, "--out", out, "--budget", "20") == EXIT_BUDGET
    assert not (out / "results.json").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_status"] == EXIT_BUDGET
    assert "budget" in (out / "run.log").read_text()


def test_compute_error_exit(tmp_path):
    cfg = write(tmp_path, "face_profile", CONST,
                "N = 64\nK = 32\nL = 4\nchi_bar = 0.3\nmu_ref = 0.05\nwindow = 20\n")
    assert run("face_profile", "--config", cfg, "--out", tmp_path / "o") == EXIT_COMPUTE


def test_certificate_kind_outputs(tmp_path):
    cfg = write(tmp_path, "slab_certify", CONST,
                "N = 64\na = 0.5\ninstances = 2\nmu_ref = 0.05\n")
    out = tmp_path / "out"
    assert run("slab_certify", "--config", cfg, "--out", out) == EXIT_OK
    doc = json.loads((out / "results.json").read_text())
    assert [o["kind"] for o in doc["result"]["outcomes"]] == ["bound_witness"] * 2
    assert all(o["verification"]["rechecked"] for o in doc["result"]["outcomes"])
