"""Monte Carlo estimators for the integrated data model and the model for ``n``.

All averages over latent fields use the common random number (CRN) draws
stored in a :class:`~gcr.gp.ThetaEntry`, so every estimate is a
deterministic function of the parameters.
"""

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from .model import PROB_EPS, link_inverse, log_binom_coef


def field_log_probs(entry, mu):
    """Clamped ``log p`` and ``log(1 - p)`` for every CRN field, each ``(L, B)``."""
    p = link_inverse(mu + entry.fields, entry.link)
    np.clip(p, PROB_EPS, 1.0 - PROB_EPS, out=p)
    return np.log(p), np.log1p(-p)


def log_noncapture(log1mp, J):
    """``log prod_l (1 - p_l)^J`` per field, length ``B``."""
    return J * log1mp.sum(axis=0)


def _capture_from_log1mp(log1mp, J):
    return float(np.mean(-np.expm1(log_noncapture(log1mp, J))))


def capture_prob(entry, mu, J):
    """CRN estimate of the probability that an individual is detected at least once."""
    _, log1mp = field_log_probs(entry, mu)
    return _capture_from_log1mp(log1mp, J)


def _history_logliks(Y, logp, log1mp, J):
    # (n, B) matrix of log Binom(y_i | p^(b)) summed over traps
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    const = log_binom_coef(Y, J).sum(axis=1, keepdims=True)
    return const + Y @ logp + (J - Y) @ log1mp


def integrated_loglik_individual(y_i, entry, mu, J):
    """Log integrated likelihood of one capture history given at least one detection."""
    y_i = np.asarray(y_i)
    if y_i.sum() <= 0:
        raise ValueError("integrated likelihood is conditioned on at least one detection")
    logp, log1mp = field_log_probs(entry, mu)
    ll = _history_logliks(y_i, logp, log1mp, J)[0]
    return float(logsumexp(ll) - np.log(ll.size) - np.log(_capture_from_log1mp(log1mp, J)))


def integrated_loglik_batch(Y, entry, mu, J):
    """Per-individual integrated log-likelihoods and the shared capture probability.

    Returns ``(logliks, dbar)`` where ``logliks`` has one entry per row of ``Y``.
    """
    logp, log1mp = field_log_probs(entry, mu)
    dbar = _capture_from_log1mp(log1mp, J)
    ll = _history_logliks(Y, logp, log1mp, J)
    num = logsumexp(ll, axis=1) - np.log(ll.shape[1])
    return num - np.log(dbar), dbar


def poisson_logpmf(n, lam):
    lam = np.asarray(lam, dtype=float)
    return xlogy(n, lam) - lam - gammaln(n + 1.0)


def n_loglik(n, M, psi, dbar):
    """Poisson log-probability of ``n`` detected individuals, rate ``M * psi * dbar``."""
    if not 0 <= n <= M:
        raise ValueError("n must lie in [0, M]")
    return float(poisson_logpmf(n, M * psi * dbar))


def poisson_binomial_pmf(probs):
    """Exact Poisson-binomial pmf by sequential convolution, length ``len(probs) + 1``."""
    pmf = np.array([1.0])
    for p in np.asarray(probs, dtype=float):
        nxt = np.zeros(pmf.size + 1)
        nxt[:-1] = pmf * (1.0 - p)
        nxt[1:] += pmf * p
        pmf = nxt
    return pmf


def individual_capture_probs(psi, p_draws, J):
    """``psi * (1 - prod_l (1 - p_il)^J)`` for each row of ``p_draws`` (``M x L``)."""
    p_draws = np.atleast_2d(np.asarray(p_draws, dtype=float))
    q = np.exp(J * np.log1p(-np.clip(p_draws, 0.0, 1.0 - PROB_EPS)).sum(axis=1))
    return psi * (1.0 - q)


def n_loglik_poisbinom(n, psi, p_draws, J):
    """Exact Poisson-binomial log-probability of ``n`` over ``M = len(p_draws)`` individuals."""
    probs = individual_capture_probs(psi, p_draws, J)
    if not 0 <= n <= probs.size:
        raise ValueError("n must lie in [0, M]")
    with np.errstate(divide="ignore"):
        return float(np.log(poisson_binomial_pmf(probs)[n]))
