import numpy as np
import pytest

from gcr import io
from gcr.model import ValidationError
from gcr.simulate import SimConfig, simulate


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def hare_files(tmp_path):
    xs, ys = np.meshgrid(50.0 * np.arange(12), 50.0 * np.arange(7))
    lines = ["trap_id,x,y"] + [f"T{k},{x},{y}" for k, (x, y) in enumerate(zip(xs.ravel(), ys.ravel()))]
    traps = write(tmp_path / "traps.csv", "\n".join(lines) + "\n")
    rng = np.random.default_rng(0)
    rows = ["individual_id,trap_id,count"]
    for i in range(13):
        for t in rng.choice(84, 3, replace=False):
            rows.append(f"hare{i},T{t},{rng.integers(1, 6)}")
    caps = write(tmp_path / "captures.csv", "\n".join(rows) + "\n")
    cfg = write(tmp_path / "run.cfg", "J = 5\nM = 150  # augmented\n")
    return traps, caps, cfg


def test_ingest_hare_shaped(hare_files):
    traps, data, model = io.ingest(*hare_files)
    assert traps.L == 84 and data.n == 13 and data.occasions == 5 and model.M == 150
    assert traps.max_distance == pytest.approx(np.hypot(550, 300))
    assert data.ids[0] == "hare0"


def test_ingest_rejects_zero_history(hare_files, tmp_path):
    traps, caps, cfg = hare_files
    write(caps, caps.read_text() + "ghost,T0,0\n")
    with pytest.raises(ValidationError, match="ghost"):
        io.ingest(traps, caps, cfg)


def test_ingest_rejects_count_above_J(hare_files):
    traps, caps, cfg = hare_files
    write(caps, caps.read_text() + "extra,T1,6\n")
    with pytest.raises(ValidationError, match=r"row 41, column count"):
        io.ingest(traps, caps, cfg)


def test_ingest_rejects_unknown_trap(hare_files):
    traps, caps, cfg = hare_files
    write(caps, caps.read_text() + "extra,T999,1\n")
    with pytest.raises(ValidationError, match="unknown trap id 'T999'"):
        io.ingest(traps, caps, cfg)


def test_ingest_rejects_bad_headers_and_values(tmp_path, hare_files):
    traps, caps, cfg = hare_files
    with pytest.raises(ValidationError, match="expected columns"):
        io.read_traps(write(tmp_path / "bad.csv", "id,x,y\n1,0,0\n"))
    with pytest.raises(ValidationError, match="row 3"):
        io.read_traps(write(tmp_path / "bad2.csv", "trap_id,x,y\n1,0,0\n2,zero,1\n"))
    with pytest.raises(ValidationError, match="unknown config key 'Jay'"):
        io.read_config(write(tmp_path / "c.cfg", "Jay = 5\n"))
    with pytest.raises(ValidationError, match="cannot parse"):
        io.read_config(write(tmp_path / "c2.cfg", "J = 2.5\n"))


def test_simulate_ingest_roundtrip(tmp_path):
    traps, data, truth = simulate(SimConfig(seed=112))
    io.write_traps(traps, tmp_path / "traps.csv")
    io.write_captures(data, traps, tmp_path / "captures.csv")
    io.write_config(io.RunConfig(), tmp_path / "run.cfg")
    t2, d2, _ = io.ingest(tmp_path / "traps.csv", tmp_path / "captures.csv", tmp_path / "run.cfg")
    assert np.array_equal(t2.locations, traps.locations) and t2.ids == traps.ids
    assert np.array_equal(d2.counts, data.counts) and d2.ids == data.ids
    assert io.read_config(tmp_path / "run.cfg") == io.RunConfig()
    io.write_truth(truth, tmp_path / "truth.csv")
    back = io.read_truth(tmp_path / "truth.csv")
    assert sum(r["z"] for r in back.values()) == truth.N
    assert np.array_equal(np.array(back["1"]["centers"]), truth.centers[0])


def test_table_roundtrip_is_exact(tmp_path):
    x = np.random.default_rng(3).normal(size=50) * 1e-7
    io.write_table(tmp_path / "t.csv", ["a", "b"], [np.arange(50), x])
    t = io.read_table(tmp_path / "t.csv")
    assert np.array_equal(np.array(t["b"], dtype=float), x)


def test_stage1_iterations_count_total_draws():
    cfg = io.RunConfig(K1=20_000, n_chains=4)
    assert cfg.stage1_iterations == 5000
