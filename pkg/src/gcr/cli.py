"""``gcr`` command line: each subcommand reads earlier stages' outputs from ``--out-dir``."""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import io
from .diagnostics import summarize_parameter
from .gp import FactorizationError, ThetaGrid, load_cache, precompute_theta_grid, save_cache
from .model import ValidationError
from .posthoc import (
    local_maxima_sites,
    make_grid,
    predict_maps,
    sample_abundance,
    summarize_draws,
    trap_bounds,
)
from .scr import fit_scr, scr_predict_map
from .simulate import simulate
from .stage1 import run_stage1
from .stage2 import run_stage2

logger = logging.getLogger("gcr")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

STAGE1_CSV = "stage1_chain.csv"
STAGE2_CSV = "stage2_chain.csv"
CACHE_NPZ = "theta_cache.npz"
RUN_CFG = "run.cfg"


class MissingInput(ValidationError):
    pass


class Context:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.seed = int(args.seed)
        self.threads = max(1, int(args.threads))
        self.inputs, self.outputs = [], []
        cfg_path = args.config
        if cfg_path is None and (self.out / RUN_CFG).is_file():
            cfg_path = self.out / RUN_CFG
        if cfg_path is not None:
            self.inputs.append(cfg_path)
        self.cfg = io.read_config(cfg_path)

    def path(self, name):
        return self.out / name

    def need(self, name, what):
        p = self.path(name)
        if not p.is_file():
            raise MissingInput(f"missing {what} ({p})")
        self.inputs.append(p)
        return p

    def emit(self, p):
        self.outputs.append(Path(p))
        return Path(p)

    def data(self):
        traps_path = Path(self.args.traps) if getattr(self.args, "traps", None) else self.path("traps.csv")
        caps_path = Path(self.args.captures) if getattr(self.args, "captures", None) else self.path("captures.csv")
        for p, what in ((traps_path, "trap file"), (caps_path, "capture file")):
            if not p.is_file():
                raise MissingInput(f"missing {what} ({p})")
            self.inputs.append(p)
        traps = io.read_traps(traps_path)
        data = io.read_captures(caps_path, traps, self.cfg.J)
        self.cfg.model_config().check_data(data)
        return traps, data

    def cache(self, traps):
        p = self.path(CACHE_NPZ)
        if p.is_file():
            cache = load_cache(p)
            if cache.traps.geometry_hash() != traps.geometry_hash():
                raise ValidationError(f"{p} was built for a different trap array; rerun precompute")
            self.inputs.append(p)
            return cache
        return build_cache(self, traps)


def build_cache(ctx, traps):
    cfg = ctx.cfg
    grid = ThetaGrid.from_traps(traps, cfg.theta_grid_size)
    cache = precompute_theta_grid(traps, grid, cfg.sigma2, cfg.n_crn, seed=ctx.seed,
                                  n_jobs=ctx.threads, link=cfg.link)
    save_cache(cache, ctx.emit(ctx.path(CACHE_NPZ)))
    return cache


# subcommands ---------------------------------------------------------------

def cmd_simulate(ctx):
    sim = ctx.cfg.sim_config(ctx.seed)
    traps, data, truth = simulate(sim)
    ctx.out.mkdir(parents=True, exist_ok=True)
    io.write_traps(traps, ctx.emit(ctx.path("traps.csv")))
    io.write_captures(data, traps, ctx.emit(ctx.path("captures.csv")))
    io.write_truth(truth, ctx.emit(ctx.path("truth.csv")))
    io.write_config(ctx.cfg, ctx.emit(ctx.path(RUN_CFG)))
    print(f"simulated N={truth.N}, detected n={data.n} on L={traps.L} traps")


def cmd_precompute(ctx):
    traps, _ = ctx.data()
    cache = build_cache(ctx, traps)
    print(f"theta grid of {len(cache)} values, B={cache.n_crn} CRN fields, key {cache.key()[:12]}")


def cmd_fit_stage1(ctx):
    traps, data = ctx.data()
    cache = ctx.cache(traps)
    cfg = ctx.cfg
    res = run_stage1(data, cache, cfg.model_config(), n_iter=cfg.stage1_iterations, seed=ctx.seed,
                     n_chains=cfg.n_chains, n_jobs=ctx.threads, warmup_frac=cfg.warmup_frac, s_mu=cfg.s_mu)
    io.write_table(ctx.emit(ctx.path(STAGE1_CSV)), ["iter", "chain", "mu", "theta", "psi", "loglik", "dbar"],
                   [res.iteration, res.chain, res.mu, res.theta, res.psi, res.loglik, res.dbar])
    meta = {"acceptance": res.acceptance, "proposal": res.proposal, "warmup": res.warmup,
            "n_iter": res.n_iter, "warnings": res.warnings}
    ctx.emit(ctx.path("stage1_meta.json")).write_text(json.dumps(meta, indent=2) + "\n")
    print(f"stage 1: {len(res)} pooled draws, acceptance {np.round(res.acceptance, 3).tolist()}")


def _read_stage1(ctx):
    t = io.read_table(ctx.need(STAGE1_CSV, "stage-1 chain"), ["iter", "chain", "mu", "theta", "psi", "loglik", "dbar"])
    if not t["mu"]:
        raise ValidationError("stage-1 chain is empty")
    return {k: np.array(v, dtype=float) for k, v in t.items()}


class _Chain:
    """Chain columns read back from CSV, with ``len()`` like the in-memory chains."""

    def __init__(self, **cols):
        self.__dict__.update(cols)

    def __len__(self):
        return self.mu.size


def _read_stage2(ctx, cache=None):
    t = io.read_table(ctx.need(STAGE2_CSV, "stage-2 chain"), ["iter", "mu", "theta", "psi", "lambda", "accepted"])
    if not t["mu"]:
        raise ValidationError("stage-2 chain is empty")
    cols = {k: np.array(v, dtype=float) for k, v in t.items()}
    cols["lam"] = cols.pop("lambda")
    if cache is not None:
        cols["theta_index"] = np.array([cache.grid.index_of(th) for th in cols["theta"]], dtype=np.int64)
    return _Chain(**cols)


def cmd_fit_stage2(ctx):
    s1 = _read_stage1(ctx)
    _, data = ctx.data()
    pool = SimpleNamespace(psi=s1["psi"], dbar=s1["dbar"], mu=s1["mu"], theta=s1["theta"])
    s2 = run_stage2(pool, data.n, ctx.cfg.M, ctx.cfg.K, ctx.seed)
    io.write_table(ctx.emit(ctx.path(STAGE2_CSV)), ["iter", "mu", "theta", "psi", "lambda", "accepted"],
                   [np.arange(len(s2)), s2.mu, s2.theta, s2.psi, s2.lam, s2.accepted.astype(int)])
    print(f"stage 2: {len(s2)} draws, acceptance {s2.acceptance_rate:.3f}")


def cmd_abundance(ctx):
    traps, data = ctx.data()
    fit_cache = ctx.cache(traps)
    s2 = _read_stage2(ctx, fit_cache)
    cfg = ctx.cfg
    # the reporting pass uses more common random fields than the fit
    cache = precompute_theta_grid(traps, fit_cache.grid, cfg.sigma2, cfg.n_crn_report, seed=ctx.seed,
                                  n_jobs=ctx.threads, link=cfg.link)
    ab = sample_abundance(s2, data.n, cfg.M, cache, cfg.J, ctx.seed, n_jobs=ctx.threads)
    io.write_table(ctx.emit(ctx.path("abundance.csv")), ["iter", "psi_bar", "N"],
                   [np.arange(ab.N.size), ab.psi_bar, ab.N])
    summary = {"n": data.n, "M": cfg.M, "n_crn": cache.n_crn, "N": ab.summary()}
    truth = _true_N(ctx)
    if truth is not None:
        summary["true_N"] = truth
    ctx.emit(ctx.path("abundance_summary.json")).write_text(json.dumps(summary, indent=2) + "\n")
    s = summary["N"]
    print(f"N: mean {s['mean']:.2f}, quartiles ({s['q25']:g}, {s['q75']:g}), "
          f"95% CI ({s['q025']:g}, {s['q975']:g})")


def _true_N(ctx):
    p = ctx.path("truth.csv")
    if not p.is_file():
        return None
    return sum(rec["z"] for rec in io.read_truth(p).values())


def _select(ctx, data):
    ids = ctx.cfg.selected_ids() or list(data.ids)
    unknown = [i for i in ids if i not in data.ids]
    if unknown:
        raise ValidationError(f"map_ids: unknown individual id(s) {', '.join(unknown)}")
    return ids


def _write_map(path, pred):
    io.write_table(path, ["x", "y", "mean_p", "sd_p", "utilization"],
                   [pred.sites[:, 0], pred.sites[:, 1], pred.mean_p, pred.sd_p, pred.utilization])


def cmd_predict_maps(ctx):
    traps, data = ctx.data()
    cache = ctx.cache(traps)
    s2 = _read_stage2(ctx, cache)
    cfg = ctx.cfg
    sites, shape = make_grid(trap_bounds(traps, cfg.map_buffer), cfg.map_resolution)
    out = ctx.path("maps")
    out.mkdir(exist_ok=True)
    maxima = {}
    for ind in _select(ctx, data):
        y = data.counts[data.ids.index(ind)]
        pred = predict_maps(y, s2, cache, cfg.J, sites, shape, n_draws=cfg.map_draws, n_iter=cfg.gibbs_iter,
                            seed=ctx.seed, key=ind, n_jobs=ctx.threads)
        _write_map(ctx.emit(out / f"map_{ind}.csv"), pred)
        maxima[ind] = local_maxima_sites(pred).tolist()
    ctx.emit(out / "maxima.json").write_text(json.dumps(maxima, indent=2) + "\n")
    print(f"wrote {len(maxima)} maps to {out}")


def cmd_fit_scr(ctx):
    traps, data = ctx.data()
    cfg = ctx.cfg
    ch = fit_scr(data, traps, cfg.buffer, cfg.M, cfg.scr_K, ctx.seed, prior_var=cfg.scr_prior_var,
                 prior_psi=(cfg.psi_a, cfg.psi_b), warmup_frac=cfg.warmup_frac)
    io.write_table(ctx.emit(ctx.path("scr_chain.csv")), ["iter", "alpha", "beta", "psi", "N"],
                   [np.arange(len(ch)), ch.alpha, ch.beta, ch.psi, ch.N])
    sites, shape = make_grid(trap_bounds(traps, cfg.map_buffer), cfg.map_resolution)
    out = ctx.path("scr_maps")
    out.mkdir(exist_ok=True)
    maxima = {}
    for ind in _select(ctx, data):
        pred = scr_predict_map(ch, data.ids.index(ind), sites, shape, n_draws=cfg.map_draws)
        _write_map(ctx.emit(out / f"map_{ind}.csv"), pred)
        maxima[ind] = local_maxima_sites(pred).tolist()
    ctx.emit(out / "maxima.json").write_text(json.dumps(maxima, indent=2) + "\n")
    summary = {"N": summarize_draws(ch.N), "acceptance": ch.acceptance}
    ctx.emit(ctx.path("scr_summary.json")).write_text(json.dumps(summary, indent=2) + "\n")
    print(f"SCR: N mean {summary['N']['mean']:.2f}, acceptance {ch.acceptance}")


SUMMARY_SOURCES = (
    ("stage1", STAGE1_CSV, ("mu", "theta", "psi", "dbar"), "chain"),
    ("stage2", STAGE2_CSV, ("mu", "theta", "psi", "lambda"), None),
    ("abundance", "abundance.csv", ("N", "psi_bar"), None),
    ("scr", "scr_chain.csv", ("alpha", "beta", "psi", "N"), None),
)


def summarize_dir(out_dir):
    """Per-parameter summaries of every chain file present in ``out_dir``."""
    out_dir = Path(out_dir)
    report = {}
    for name, fname, params, chain_col in SUMMARY_SOURCES:
        p = out_dir / fname
        if not p.is_file():
            continue
        t = io.read_table(p)
        if not t.get(params[0]):
            raise ValidationError(f"{p}: chain is empty")
        chain = np.array(t[chain_col], dtype=float) if chain_col else None
        block = {k: summarize_parameter(np.array(t[k], dtype=float), chain) for k in params}
        if "accepted" in t:
            block["acceptance"] = float(np.mean(np.array(t["accepted"], dtype=float)))
        report[name] = block
    meta = out_dir / "stage1_meta.json"
    if "stage1" in report and meta.is_file():
        report["stage1"]["acceptance"] = json.loads(meta.read_text())["acceptance"]
    if not report:
        raise MissingInput(f"no chain files found in {out_dir}")
    return report


def cmd_summary(ctx):
    report = summarize_dir(ctx.out)
    for name, fname, *_ in SUMMARY_SOURCES:
        if (ctx.out / fname).is_file():
            ctx.inputs.append(ctx.out / fname)
    caps = ctx.path("captures.csv")
    if caps.is_file() and ctx.path("traps.csv").is_file():
        _, data = ctx.data()
        report["n"] = data.n
    truth = _true_N(ctx)
    if truth is not None:
        report["true_N"] = truth
    ctx.emit(ctx.path("summary.json")).write_text(json.dumps(report, indent=2) + "\n")
    for name, block in report.items():
        if not isinstance(block, dict):
            print(f"{name}: {block}")
            continue
        for k, s in block.items():
            if isinstance(s, dict):
                print(f"{name}.{k}: mean {s['mean']:.4g} sd {s['sd']:.4g} "
                      f"q(2.5,25,50,75,97.5) = ({s['q025']:.4g}, {s['q25']:.4g}, {s['median']:.4g}, "
                      f"{s['q75']:.4g}, {s['q975']:.4g}) ess {s['ess']:.0f}")
            else:
                print(f"{name}.{k}: {s}")


COMMANDS = {
    "simulate": (cmd_simulate, "simulate traps, captures and truth"),
    "precompute": (cmd_precompute, "build the theta-grid covariance and CRN cache"),
    "fit-stage1": (cmd_fit_stage1, "stage-1 MCMC over (mu, theta)"),
    "fit-stage2": (cmd_fit_stage2, "stage-2 resampling correction for n"),
    "abundance": (cmd_abundance, "posterior draws of N"),
    "predict-maps": (cmd_predict_maps, "posterior detection and utilization maps"),
    "fit-scr": (cmd_fit_scr, "single-centre SCR baseline"),
    "summary": (cmd_summary, "chain summaries"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--out-dir", default=".", help="run directory (default .)")
    common.add_argument("--config", default=None, help="key = value run configuration")
    common.add_argument("--traps", default=None, help="trap CSV (default <out-dir>/traps.csv)")
    common.add_argument("--captures", default=None, help="capture CSV (default <out-dir>/captures.csv)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="gcr", description="Geostatistical capture-recapture pipeline.")
    parser.add_argument("--version", action="version", version=f"gcr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        ctx = Context(args)
        if args.command != "simulate" and not ctx.out.is_dir():
            raise MissingInput(f"output directory {ctx.out} does not exist")
        ctx.out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(1):
            COMMANDS[args.command][0](ctx)
        io.Manifest(ctx.out).record(args.command, argv, ctx.seed, ctx.threads, ctx.cfg,
                                    ctx.inputs, ctx.outputs, started, time.time() - started)
    except ValidationError as exc:
        print(f"gcr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FactorizationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gcr {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"gcr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
