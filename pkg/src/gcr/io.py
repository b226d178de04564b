"""File formats: trap and capture CSVs, key-value run configuration, manifest, chain tables."""

import configparser
import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .model import CaptureData, ModelConfig, TrapArray, ValidationError

MANIFEST_SCHEMA = 1
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run reads from the key-value config file.

    Field names are the accepted keys. Unknown keys are rejected.
    """

    # model
    M: int = 200
    J: int = 5
    mu_mean: float = 0.0
    mu_var: float = 4.0
    psi_a: float = 1.0
    psi_b: float = 1.0
    sigma2: float = 1.0
    theta_grid_size: int = 20
    link: str = "probit"
    # stage 1 / stage 2
    n_crn: int = 4096
    n_crn_report: int = 16384
    K1: int = 20_000
    K: int = 20_000
    n_chains: int = 4
    warmup_frac: float = 0.2
    s_mu: float = 0.25
    # maps
    map_resolution: int = 40
    map_buffer: float = 0.5
    map_draws: int = 1000
    gibbs_iter: int = 200
    map_ids: str = ""
    # simulator
    sim_psi: float = 0.2
    trap_rows: int = 8
    trap_cols: int = 8
    trap_spacing: float = 1.0 / 7.0
    buffer: float = 0.5
    ac_lambda: float = 0.5
    alpha: float = -1.0
    beta: float = -50.0
    # SCR baseline
    scr_K: int = 20_000
    scr_prior_var: float = 100.0

    def model_config(self):
        return ModelConfig(M=self.M, prior_mu=(self.mu_mean, self.mu_var),
                           prior_psi=(self.psi_a, self.psi_b), sigma2=self.sigma2,
                           theta_grid_size=self.theta_grid_size, link=self.link)

    def sim_config(self, seed):
        from .simulate import SimConfig

        return SimConfig(M=self.M, psi=self.sim_psi, trap_rows=self.trap_rows, trap_cols=self.trap_cols,
                         trap_spacing=self.trap_spacing, buffer=self.buffer, ac_lambda=self.ac_lambda,
                         alpha=self.alpha, beta=self.beta, J=self.J, seed=seed)

    @property
    def stage1_iterations(self):
        """Per-chain iterations so that ``K1`` counts draws across all chains, warmup included."""
        return int(np.ceil(self.K1 / self.n_chains))

    def selected_ids(self):
        return [s.strip() for s in self.map_ids.split(",") if s.strip()]


def _coerce(name, kind, raw):
    try:
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind is float:
            return float(raw)
        return str(raw).strip()
    except ValueError:
        raise ValidationError(f"config key '{name}': cannot parse {raw!r} as {kind.__name__}") from None


def read_config(path=None):
    """Parse a ``key = value`` file (``#`` comments) into a :class:`RunConfig`; ``None`` gives defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text())
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    kinds = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for key, raw in parser["run"].items():
        if key not in kinds:
            raise ValidationError(f"{path}: unknown config key '{key}'")
        values[key] = _coerce(key, kinds[key], raw)
    cfg = RunConfig(**values)
    if cfg.J < 1 or cfg.M < 1:
        raise ValidationError("config: J and M must be positive")
    if cfg.link not in ("probit", "logit", "cloglog"):
        raise ValidationError("config key 'link' must be probit, logit or cloglog")
    return cfg


def write_config(cfg, path):
    lines = [f"{k} = {fmt(v)}" for k, v in asdict(cfg).items()]
    Path(path).write_text("\n".join(lines) + "\n")


def fmt(v):
    """Shortest text that parses back to the same value."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, columns):
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*(c.tolist() for c in cols)):
            w.writerow([fmt(v) for v in row])


def read_table(path, required=None):
    """Read a CSV into a dict of column name -> list of strings."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if required is not None and header[:len(required)] != list(required):
        raise ValidationError(f"{path}: expected columns {','.join(required)}, found {','.join(header)}")
    body = [r for r in rows[1:] if any(s.strip() for s in r)]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ValidationError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
    return {h: [r[j].strip() for r in body] for j, h in enumerate(header)}


def write_traps(traps, path):
    loc = traps.locations
    write_table(path, ["trap_id", "x", "y"], [list(traps.ids), loc[:, 0], loc[:, 1]])


def read_traps(path):
    t = read_table(path, ["trap_id", "x", "y"])
    xy = np.empty((len(t["trap_id"]), 2))
    for i, (x, y) in enumerate(zip(t["x"], t["y"])):
        try:
            xy[i] = float(x), float(y)
        except ValueError:
            raise ValidationError(f"{path}: row {i + 2}: non-numeric coordinate") from None
    try:
        return TrapArray(xy, ids=tuple(t["trap_id"]))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_captures(data, traps, path):
    ind, trap, cnt = [], [], []
    for i, row in zip(data.ids, data.counts):
        for l in np.flatnonzero(row):
            ind.append(i)
            trap.append(traps.ids[l])
            cnt.append(int(row[l]))
    write_table(path, ["individual_id", "trap_id", "count"], [ind, trap, cnt])


def read_captures(path, traps, J):
    """Capture rows ``(individual_id, trap_id, count)``; individuals keep first-appearance order."""
    t = read_table(path, ["individual_id", "trap_id", "count"])
    col = {tid: l for l, tid in enumerate(traps.ids)}
    order, counts, seen = {}, [], set()
    for r, (ind, tid, c) in enumerate(zip(t["individual_id"], t["trap_id"], t["count"]), start=2):
        if tid not in col:
            raise ValidationError(f"{path}: row {r}, column trap_id: unknown trap id '{tid}'")
        try:
            value = float(c)
            if value != int(value):
                raise ValueError
            value = int(value)
        except ValueError:
            raise ValidationError(f"{path}: row {r}, column count: '{c}' is not an integer") from None
        if value < 0 or value > J:
            raise ValidationError(f"{path}: row {r}, column count: {value} outside [0, {J}]")
        if (ind, tid) in seen:
            raise ValidationError(f"{path}: row {r}: duplicate entry for individual '{ind}' at trap '{tid}'")
        seen.add((ind, tid))
        if ind not in order:
            order[ind] = len(order)
            counts.append(np.zeros(traps.L, dtype=np.int64))
        counts[order[ind]][col[tid]] = value
    Y = np.array(counts, dtype=np.int64).reshape(len(counts), traps.L)
    try:
        return CaptureData(Y, J, ids=tuple(order))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def ingest(traps_path, captures_path, config_path=None):
    """Read and validate a trap file, a capture file and a run config."""
    cfg = read_config(config_path)
    traps = read_traps(traps_path)
    data = read_captures(captures_path, traps, cfg.J)
    model = cfg.model_config()
    model.check_data(data)
    return traps, data, model


def write_truth(truth, path):
    ids, z, det, k, x, y = [], [], [], [], [], []
    detected = set(truth.observed.tolist())
    for i, c in enumerate(truth.centers):
        for j, (cx, cy) in enumerate(c):
            ids.append(str(i + 1))
            z.append(int(truth.z[i]))
            det.append(int(i in detected))
            k.append(j)
            x.append(cx)
            y.append(cy)
    write_table(path, ["individual_id", "z", "detected", "center", "x", "y"], [ids, z, det, k, x, y])


def read_truth(path):
    t = read_table(path, ["individual_id", "z", "detected", "center", "x", "y"])
    out = {}
    for i, z, d, x, y in zip(t["individual_id"], t["z"], t["detected"], t["x"], t["y"]):
        rec = out.setdefault(i, {"z": int(z), "detected": int(d), "centers": []})
        rec["centers"].append((float(x), float(y)))
    return out


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    """The single ``manifest.json`` of an output directory, updated stage by stage.

    Schema (version 1)::

        {"schema_version": 1, "software_version": str, "seed": int,
         "config": {...}, "stages": {name: {"argv", "seed", "threads",
         "started", "elapsed_s", "inputs": {file: sha256}, "outputs": [...]}}}
    """

    def __init__(self, out_dir):
        self.path = Path(out_dir) / MANIFEST_NAME
        if self.path.is_file():
            self.data = json.loads(self.path.read_text())
            if self.data.get("schema_version") != MANIFEST_SCHEMA:
                raise ValidationError(f"{self.path}: unsupported manifest schema")
        else:
            self.data = {"schema_version": MANIFEST_SCHEMA, "software_version": __version__, "stages": {}}

    def record(self, stage, argv, seed, threads, config, inputs, outputs, started, elapsed):
        self.data["software_version"] = __version__
        self.data["seed"] = int(seed)
        self.data["config"] = asdict(config)
        self.data["stages"][stage] = {
            "argv": list(argv), "seed": int(seed), "threads": int(threads),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "elapsed_s": round(float(elapsed), 3),
            "inputs": {os.path.basename(str(p)): sha256_file(p) for p in inputs if Path(p).is_file()},
            "outputs": sorted(os.path.relpath(str(p), self.path.parent) for p in outputs),
        }
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        tmp.replace(self.path)
