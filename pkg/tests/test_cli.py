import json

import numpy as np
import pytest

from gcr import io
from gcr.cli import main, summarize_dir
from gcr.model import ValidationError

SMALL = """n_crn = 128
n_crn_report = 256
K1 = 400
K = 600
theta_grid_size = 4
map_resolution = 8
map_draws = 6
gibbs_iter = 10
scr_K = 200
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = d / "small.cfg"
    cfg.write_text(SMALL)
    for cmd in ("simulate", "precompute", "fit-stage1", "fit-stage2", "abundance", "fit-scr"):
        assert main([cmd, "--config", str(cfg), "--seed", "112", "--out-dir", str(d)]) == 0, cmd
    return d, cfg


def test_pipeline_outputs(run_dir):
    d, _ = run_dir
    for name in ("traps.csv", "captures.csv", "truth.csv", "theta_cache.npz", "stage1_chain.csv",
                 "stage2_chain.csv", "abundance.csv", "abundance_summary.json", "scr_chain.csv"):
        assert (d / name).is_file(), name
    header = (d / "stage1_chain.csv").read_text().splitlines()[0]
    assert header == "iter,chain,mu,theta,psi,loglik,dbar"
    assert (d / "stage2_chain.csv").read_text().splitlines()[0] == "iter,mu,theta,psi,lambda,accepted"
    s1 = io.read_table(d / "stage1_chain.csv")
    assert len(s1["mu"]) == 4 * 80 and min(map(int, s1["iter"])) == 20
    summary = json.loads((d / "abundance_summary.json").read_text())
    assert summary["true_N"] == 29 and summary["n"] == 14
    for key in ("mean", "q025", "q25", "median", "q75", "q975"):
        assert key in summary["N"]


def test_single_manifest_tracks_stages(run_dir):
    d, _ = run_dir
    assert len(list(d.glob("manifest*.json"))) == 1
    m = json.loads((d / "manifest.json").read_text())
    assert m["schema_version"] == 1 and m["seed"] == 112
    assert {"simulate", "fit-stage1", "fit-stage2", "abundance"} <= set(m["stages"])
    st = m["stages"]["fit-stage1"]
    assert len(st["inputs"]["captures.csv"]) == 64 and "stage1_chain.csv" in st["outputs"]


def test_summary_report(run_dir, capsys):
    d, cfg = run_dir
    assert main(["summary", "--config", str(cfg), "--out-dir", str(d)]) == 0
    out = capsys.readouterr().out
    assert "abundance.N: mean" in out and "stage1.mu" in out
    rep = json.loads((d / "summary.json").read_text())
    assert rep["true_N"] == 29 and rep["n"] == 14
    s = rep["stage1"]["psi"]
    assert s["q025"] < s["q25"] < s["median"] < s["q75"] < s["q975"] and s["ess"] > 0
    assert 0 < rep["stage2"]["acceptance"] <= 1


def test_predict_maps_writes_selected_ids(run_dir):
    d, cfg = run_dir
    sel = d / "sel.cfg"
    sel.write_text(SMALL + "map_ids = 15,43\n")
    assert main(["predict-maps", "--config", str(sel), "--seed", "112", "--out-dir", str(d)]) == 0
    maps = sorted(p.name for p in (d / "maps").glob("map_*.csv"))
    assert maps == ["map_15.csv", "map_43.csv"]
    t = io.read_table(d / "maps" / "map_15.csv", ["x", "y", "mean_p", "sd_p", "utilization"])
    assert len(t["x"]) == 64
    assert sum(map(float, t["utilization"])) == pytest.approx(1.0)


def test_stage2_before_stage1_fails(tmp_path, capsys):
    assert main(["fit-stage2", "--out-dir", str(tmp_path)]) == 2
    assert "missing stage-1 chain" in capsys.readouterr().err


def test_unknown_command_and_flag():
    assert main(["frobnicate"]) != 0
    assert main(["summary", "--no-such-flag"]) != 0


def test_validation_error_exit_code(tmp_path, capsys):
    (tmp_path / "traps.csv").write_text("trap_id,x,y\nA,0,0\nB,1,0\n")
    (tmp_path / "captures.csv").write_text("individual_id,trap_id,count\n1,A,9\n")
    assert main(["fit-stage1", "--out-dir", str(tmp_path)]) == 2
    assert "row 2, column count" in capsys.readouterr().err


def test_summary_constant_and_empty_chains(tmp_path):
    io.write_table(tmp_path / "abundance.csv", ["iter", "psi_bar", "N"], [np.arange(50), np.full(50, 0.1), np.full(50, 7)])
    rep = summarize_dir(tmp_path)["abundance"]["N"]
    assert rep["sd"] == 0 and rep["q025"] == rep["q975"] == rep["mean"] == 7
    (tmp_path / "abundance.csv").write_text("iter,psi_bar,N\n")
    with pytest.raises(ValidationError, match="empty"):
        summarize_dir(tmp_path)


def test_summary_of_prior_psi_chain(tmp_path):
    x = np.random.default_rng(0).uniform(size=20_000)
    io.write_table(tmp_path / "stage2_chain.csv", ["iter", "mu", "theta", "psi", "lambda", "accepted"],
                   [np.arange(x.size), x, x, x, x, np.ones(x.size, int)])
    s = summarize_dir(tmp_path)["stage2"]["psi"]
    assert s["q25"] == pytest.approx(0.25, abs=0.015) and s["median"] == pytest.approx(0.5, abs=0.015)
    assert s["ess"] == pytest.approx(20_000, rel=0.15)
