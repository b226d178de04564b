"""Stage-1 MCMC over ``(mu, theta)`` given the detected individuals.

``psi`` does not enter the conditional data model, so its values are drawn
directly from the Beta prior alongside the chain.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from ._rng import substream
from .likelihood import integrated_loglik_batch

logger = logging.getLogger(__name__)

ACCEPT_BAND = (0.25, 0.45)
ACCEPT_WARN = (0.05, 0.95)
MAX_THETA_STEP = 3


def reflect_index(k, size):
    """Fold an integer onto ``0..size-1`` by reflection at both edges.

    The edge value is repeated (``-1 -> 0``, ``size -> size-1``), which keeps
    the induced walk symmetric.
    """
    period = 2 * size
    k = k % period
    return k if k < size else period - 1 - k


def theta_step_kernel(size, m):
    """Transition matrix of the reflected discrete random walk (for checks)."""
    Q = np.zeros((size, size))
    steps = [s for s in range(-m, m + 1) if s != 0]
    for i in range(size):
        for s in steps:
            Q[i, reflect_index(i + s, size)] += 1.0 / len(steps)
    return Q


def tune_proposals(accepted, s_mu, m, min_length=1):
    """Adjust the random-walk scale for ``mu`` and the maximum theta step.

    ``accepted`` is the boolean acceptance record of a pilot run. Scales
    grow when acceptance is above 45% and shrink below 25%; inside the band
    they are returned unchanged.
    """
    accepted = np.asarray(accepted, dtype=float)
    if accepted.size < min_length:
        raise ValueError(f"pilot must have at least {min_length} iterations")
    rate = float(accepted.mean())
    lo, hi = ACCEPT_BAND
    if rate > hi:
        return s_mu * 1.5, min(m + 1, MAX_THETA_STEP)
    if rate < lo:
        return s_mu / 1.5, max(m - 1, 1)
    return s_mu, m


@dataclass
class Stage1Chain:
    """Pooled post-warmup stage-1 draws, chain-major."""

    iteration: np.ndarray
    chain: np.ndarray
    mu: np.ndarray
    theta_index: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    loglik: np.ndarray
    dbar: np.ndarray
    acceptance: list
    seed: int
    warmup: int
    n_iter: int
    proposal: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __len__(self):
        return self.mu.size

    @property
    def acceptance_rate(self):
        return float(np.mean(self.acceptance))


def _canonical_rows(Y):
    # sorting makes the summed log-likelihood independent of individual order
    Y = np.asarray(Y)
    order = np.lexsort(Y.T[::-1])
    return Y[order]


def _run_chain(chain_id, Y, J, cache, prior_mu, prior_psi, n_iter, warmup, seed, s_mu, m, tune_every):
    rng = substream(seed, "stage1", chain_id, "mh")
    psi_rng = substream(seed, "stage1", chain_id, "psi")
    mu0, var0 = prior_mu
    G = len(cache)

    def log_target(mu, g):
        ll, dbar = integrated_loglik_batch(Y, cache[g], mu, J)
        total = float(np.sum(ll))
        return total - 0.5 * (mu - mu0) ** 2 / var0, total, dbar

    mu = mu0 + 0.5 * np.sqrt(var0) * rng.standard_normal()
    g = int(rng.integers(G))
    lt, ll, dbar = log_target(mu, g)
    keep = n_iter - warmup
    out = {k: np.empty(keep) for k in ("mu", "loglik", "dbar")}
    out["g"] = np.empty(keep, dtype=np.int64)
    accepted = np.zeros(n_iter, dtype=bool)
    batch_start = 0
    with threadpool_limits(1):
        for it in range(n_iter):
            step = int(rng.integers(1, m + 1)) * (1 if rng.random() < 0.5 else -1)
            mu_p = mu + s_mu * rng.standard_normal()
            g_p = reflect_index(g + step, G)
            lt_p, ll_p, dbar_p = log_target(mu_p, g_p)
            if np.isfinite(lt_p) and np.log(rng.random()) < lt_p - lt:
                mu, g, lt, ll, dbar = mu_p, g_p, lt_p, ll_p, dbar_p
                accepted[it] = True
            if it < warmup and it + 1 - batch_start >= tune_every:
                s_mu, m = tune_proposals(accepted[batch_start:it + 1], s_mu, m)
                batch_start = it + 1
            if it >= warmup:
                k = it - warmup
                out["mu"][k], out["g"][k], out["loglik"][k], out["dbar"][k] = mu, g, ll, dbar
    a, b = prior_psi
    out["psi"] = psi_rng.beta(a, b, size=keep)
    out["acceptance"] = float(accepted[warmup:].mean()) if keep else float("nan")
    out["proposal"] = (float(s_mu), int(m))
    return out


def run_stage1(data, cache, config, n_iter, seed, n_chains=4, n_jobs=1, warmup_frac=0.2,
               s_mu=0.25, m=1, tune_every=100):
    """Sample the stage-1 temporary posterior of ``(mu, theta)`` with ``psi`` from its prior.

    Parameters
    ----------
    data : CaptureData
        Detected individuals, each with at least one capture.
    cache : ThetaGridCache
        Precomputed covariance factors and CRN fields.
    config : ModelConfig
        Supplies the Normal prior for ``mu`` and Beta prior for ``psi``.
    n_iter : int
        Iterations per chain, including warmup.
    seed : int
        Root seed; chain ``c`` uses substream ``("stage1", c)``.
    n_chains, n_jobs : int
        Number of independent chains and parallel workers.
    warmup_frac : float
        Leading fraction of each chain used for tuning and discarded.

    Returns
    -------
    Stage1Chain
    """
    if data.n == 0:
        raise ValueError("stage 1 needs at least one detected individual")
    if np.any(np.asarray(data.counts).sum(axis=1) <= 0):
        raise ValueError("every individual must have at least one detection")
    if data.L != cache.traps.L:
        raise ValueError("capture matrix and trap cache disagree on the number of traps")
    warmup = int(round(warmup_frac * n_iter))
    if n_iter - warmup < 1:
        raise ValueError("n_iter too small to keep any post-warmup draws")
    Y = _canonical_rows(data.counts)
    runs = Parallel(n_jobs=n_jobs)(
        delayed(_run_chain)(c, Y, data.occasions, cache, config.prior_mu, config.prior_psi,
                            n_iter, warmup, seed, s_mu, m, tune_every)
        for c in range(n_chains)
    )
    keep = n_iter - warmup
    g = np.concatenate([r["g"] for r in runs])
    res = Stage1Chain(
        iteration=np.tile(np.arange(warmup, n_iter), n_chains),
        chain=np.repeat(np.arange(n_chains), keep),
        mu=np.concatenate([r["mu"] for r in runs]),
        theta_index=g,
        theta=np.asarray(cache.grid.values)[g],
        psi=np.concatenate([r["psi"] for r in runs]),
        loglik=np.concatenate([r["loglik"] for r in runs]),
        dbar=np.concatenate([r["dbar"] for r in runs]),
        acceptance=[r["acceptance"] for r in runs],
        seed=int(seed),
        warmup=warmup,
        n_iter=int(n_iter),
        proposal=[r["proposal"] for r in runs],
        config={"prior_mu": list(config.prior_mu), "prior_psi": list(config.prior_psi),
                "sigma2": config.sigma2, "n_chains": n_chains, "warmup_frac": warmup_frac},
    )
    lo, hi = ACCEPT_WARN
    for c, rate in enumerate(res.acceptance):
        if not lo <= rate <= hi:
            msg = f"stage-1 chain {c} acceptance {rate:.3f} outside [{lo}, {hi}]"
            res.warnings.append(msg)
            logger.warning(msg)
    return res
