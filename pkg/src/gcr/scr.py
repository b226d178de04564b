"""Classical SCR baseline: one activity centre per individual, cloglog link, PX-DA."""

from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .model import PROB_EPS, log_binom_coef
from .posthoc import PredictionGrid
from .stage1 import tune_proposals


@dataclass
class ScrChain:
    alpha: np.ndarray
    beta: np.ndarray
    psi: np.ndarray
    N: np.ndarray
    centers: np.ndarray
    detected_ids: tuple
    region: tuple
    acceptance: dict
    seed: int
    priors: dict = field(default_factory=dict)

    def __len__(self):
        return self.alpha.size


def _reflect(x, lo, hi):
    w = hi - lo
    if w <= 0:
        return np.full_like(x, lo)
    r = np.mod(x - lo, 2.0 * w)
    return lo + np.where(r > w, 2.0 * w - r, r)


def _log_probs(centers, traps, alpha, beta):
    d2 = ((centers[:, None, :] - traps[None, :, :]) ** 2).sum(axis=-1)
    eta = alpha + beta * d2
    p = np.clip(-np.expm1(-np.exp(eta)), PROB_EPS, 1.0 - PROB_EPS)
    # log(1 - p) = -exp(eta) exactly under cloglog
    return np.log(p), np.maximum(-np.exp(eta), np.log(PROB_EPS))


def _indiv_loglik(Y, J, centers, traps, alpha, beta):
    logp, log1mp = _log_probs(centers, traps, alpha, beta)
    return (Y * logp + (J - Y) * log1mp).sum(axis=1), J * log1mp.sum(axis=1)


def fit_scr(data, traps, buffer, M, K, seed, prior_var=100.0, prior_psi=(1.0, 1.0),
            warmup_frac=0.2, tune_every=100, init=(-1.0, -10.0)):
    """MH-within-Gibbs fit of the single-centre SCR model with data augmentation.

    Centres get reflected bivariate random-walk updates on the buffered
    rectangle, ``alpha`` and ``beta`` scalar random walks with
    ``Normal(0, prior_var)`` priors, membership indicators of undetected rows
    exact Bernoulli draws and ``psi`` its conjugate Beta draw.

    Returns an :class:`ScrChain` of the ``K - warmup`` retained draws.
    """
    Ynat = np.asarray(data.counts, dtype=float)
    n, L = Ynat.shape
    if M <= n:
        raise ValueError("M must exceed the number of detected individuals")
    J = data.occasions
    loc = traps.locations
    region = (loc[:, 0].min() - buffer, loc[:, 0].max() + buffer,
              loc[:, 1].min() - buffer, loc[:, 1].max() + buffer)
    rng = substream(seed, "scr")
    Y = np.vstack([Ynat, np.zeros((M - n, L))])
    detected = np.zeros(M, dtype=bool)
    detected[:n] = True
    const = log_binom_coef(Y, J).sum(axis=1)

    c = np.column_stack([rng.uniform(region[0], region[1], M), rng.uniform(region[2], region[3], M)])
    w = Ynat / Ynat.sum(axis=1, keepdims=True)
    c[:n] = w @ loc
    z = detected | (rng.random(M) < 0.5)
    psi = 0.5
    alpha, beta = init
    s_c, s_a, s_b = 0.05, 0.1, 1.0
    warmup = int(round(warmup_frac * K))
    keep = K - warmup
    out_a, out_b, out_psi = np.empty(keep), np.empty(keep), np.empty(keep)
    out_N = np.empty(keep, dtype=np.int64)
    out_c = np.empty((keep, n, 2))
    acc = {"alpha": [], "beta": [], "centers": []}

    ll, lq = _indiv_loglik(Y, J, c, loc, alpha, beta)
    ll = ll + const
    for it in range(K):
        # activity centres
        c_p = c + s_c * rng.standard_normal((M, 2))
        c_p[:, 0] = _reflect(c_p[:, 0], region[0], region[1])
        c_p[:, 1] = _reflect(c_p[:, 1], region[2], region[3])
        ll_p, lq_p = _indiv_loglik(Y, J, c_p, loc, alpha, beta)
        ll_p = ll_p + const
        ok = np.log(rng.random(M)) < np.where(z, ll_p - ll, 0.0)
        c[ok], ll[ok], lq[ok] = c_p[ok], ll_p[ok], lq_p[ok]
        acc["centers"].append(ok[z].mean() if z.any() else 1.0)

        # detection intercept and slope
        for name in ("alpha", "beta"):
            a_p, b_p = (alpha + s_a * rng.standard_normal(), beta) if name == "alpha" else \
                (alpha, beta + s_b * rng.standard_normal())
            ll_p, lq_p = _indiv_loglik(Y, J, c, loc, a_p, b_p)
            ll_p = ll_p + const
            old = (alpha if name == "alpha" else beta)
            new = (a_p if name == "alpha" else b_p)
            log_r = np.sum(ll_p[z] - ll[z]) - 0.5 * (new**2 - old**2) / prior_var
            take = np.log(rng.random()) < log_r
            if take:
                alpha, beta, ll, lq = a_p, b_p, ll_p, lq_p
            acc[name].append(take)

        # membership of undetected rows
        q = np.exp(lq[~detected])
        prob = psi * q / (psi * q + 1.0 - psi)
        z[~detected] = rng.random(prob.size) < prob
        psi = rng.beta(prior_psi[0] + z.sum(), prior_psi[1] + M - z.sum())

        if it < warmup and (it + 1) % tune_every == 0:
            lo = it + 1 - tune_every
            s_a, _ = tune_proposals(acc["alpha"][lo:], s_a, 1)
            s_b, _ = tune_proposals(acc["beta"][lo:], s_b, 1)
            s_c, _ = tune_proposals(acc["centers"][lo:], s_c, 1)
        if it >= warmup:
            k = it - warmup
            out_a[k], out_b[k], out_psi[k], out_N[k] = alpha, beta, psi, z.sum()
            out_c[k] = c[:n]
    rates = {k: float(np.mean(v[warmup:])) for k, v in acc.items()}
    return ScrChain(out_a, out_b, out_psi, out_N, out_c, tuple(data.ids), region, rates, int(seed),
                    {"alpha": [0.0, prior_var], "beta": [0.0, prior_var], "psi": list(prior_psi)})


def scr_predict_map(chain, individual, sites, shape, n_draws=None):
    """Posterior mean and sd of ``p(s) = 1 - exp(-exp(alpha + beta |c_i - s|^2))`` over ``sites``.

    ``individual`` is a row index into the detected individuals.
    """
    K = len(chain)
    ks = np.arange(K) if n_draws is None or n_draws >= K else \
        np.unique(np.linspace(0, K - 1, n_draws).round().astype(np.int64))
    c = chain.centers[ks, individual]
    d2 = ((c[:, None, :] - sites[None, :, :]) ** 2).sum(axis=-1)
    eta = chain.alpha[ks, None] + chain.beta[ks, None] * d2
    P = -np.expm1(-np.exp(eta))
    util = (P / P.sum(axis=1, keepdims=True)).mean(axis=0)
    return PredictionGrid(sites, tuple(shape), eta.mean(0), eta.std(0), P.mean(0), P.std(0), util, len(ks))
