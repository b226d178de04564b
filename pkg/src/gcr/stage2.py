"""Stage-2 prior-proposal recursive Bayes (PPRB) correction through the model for ``n``."""

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln

from ._rng import substream
from .likelihood import poisson_logpmf


@dataclass
class Stage2Chain:
    index: np.ndarray
    accepted: np.ndarray
    psi: np.ndarray
    dbar: np.ndarray
    lam: np.ndarray
    mu: np.ndarray = None
    theta: np.ndarray = None
    theta_index: np.ndarray = None
    seed: int = None
    n: int = None
    M: int = None

    def __len__(self):
        return self.index.size

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted))


def run_stage2(pool, n, M, K, seed):
    """Resample the stage-1 pool with a Metropolis-Hastings correction for ``n``.

    Each iteration proposes a pooled draw uniformly with replacement and
    accepts with probability ``min(1, Pois(n; lam*) / Pois(n; lam))`` where
    ``lam = M * psi * dbar`` for that draw.
    """
    psi = np.asarray(pool.psi, dtype=float)
    dbar = np.asarray(pool.dbar, dtype=float)
    size = psi.size
    if size == 0:
        raise ValueError("stage-1 pool is empty")
    lam_pool = M * psi * dbar
    logw = poisson_logpmf(n, lam_pool)
    rng = substream(seed, "stage2")
    proposals = rng.integers(size, size=K)
    log_u = np.log(rng.random(K))
    cur = int(rng.integers(size))
    index = np.empty(K, dtype=np.int64)
    accepted = np.zeros(K, dtype=bool)
    for k in range(K):
        j = proposals[k]
        if j == cur or log_u[k] < logw[j] - logw[cur]:
            cur = j
            accepted[k] = True
        index[k] = cur
    gather = lambda name: None if getattr(pool, name, None) is None else np.asarray(getattr(pool, name))[index]
    return Stage2Chain(
        index=index, accepted=accepted, psi=psi[index], dbar=dbar[index], lam=lam_pool[index],
        mu=gather("mu"), theta=gather("theta"), theta_index=gather("theta_index"),
        seed=int(seed), n=int(n), M=int(M),
    )


@dataclass
class HomogeneousPool:
    p: np.ndarray
    psi: np.ndarray
    dbar: np.ndarray
    acceptance: float


@dataclass
class HomogeneousFit:
    stage1: HomogeneousPool
    stage2: Stage2Chain
    p: np.ndarray
    psi: np.ndarray
    N: np.ndarray


def ztbinom_loglik(y, p, J):
    """Zero-truncated binomial log-likelihood of per-individual totals."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return 0.0
    if p <= 0.0 or p >= 1.0:
        return -np.inf
    coef = gammaln(J + 1.0) - gammaln(y + 1.0) - gammaln(J - y + 1.0)
    log_det = np.log(-np.expm1(J * np.log1p(-p)))
    return float(np.sum(coef + y * np.log(p) + (J - y) * np.log1p(-p)) - y.size * log_det)


def _reflect_unit(x):
    x = x % 2.0
    return 2.0 - x if x > 1.0 else x


def fit_homogeneous_cr(y, n, M, J, prior_p=(1.0, 1.0), prior_psi=(1.0, 1.0), K1=100_000, K=100_000,
                       seed=0, s_p=0.1, p_fixed=None):
    """Two-stage fit of the non-spatial model with a single detection probability.

    Stage 1 targets the zero-truncated binomial likelihood of the observed
    totals for ``p`` (reflected random walk on (0, 1)) while ``psi`` comes
    from its prior; stage 2 applies the Poisson correction for ``n``.
    ``p_fixed`` pins ``p`` for degenerate checks.
    """
    y = np.asarray(y)
    if y.size != n:
        raise ValueError("one total per detected individual required")
    if np.any(y < 1) or np.any(y > J):
        raise ValueError("detected totals must lie in [1, J]")
    rng = substream(seed, "homogeneous", "stage1")
    a, b = prior_p

    def log_target(p):
        if p <= 0.0 or p >= 1.0:
            return -np.inf
        return ztbinom_loglik(y, p, J) + (a - 1) * np.log(p) + (b - 1) * np.log1p(-p) - betaln(a, b)

    if p_fixed is not None:
        ps = np.full(K1, float(p_fixed))
        acc = 1.0
    else:
        ps = np.empty(K1)
        p = 0.5
        lt = log_target(p)
        steps = s_p * rng.standard_normal(K1)
        log_u = np.log(rng.random(K1))
        n_acc = 0
        for k in range(K1):
            p_new = _reflect_unit(p + steps[k])
            lt_new = log_target(p_new)
            if log_u[k] < lt_new - lt:
                p, lt = p_new, lt_new
                n_acc += 1
            ps[k] = p
        acc = n_acc / K1
    psis = substream(seed, "homogeneous", "psi").beta(*prior_psi, size=K1)
    dbar = -np.expm1(J * np.log1p(-np.clip(ps, 0.0, 1.0 - 1e-16)))
    pool = HomogeneousPool(ps, psis, dbar, acc)
    s2 = run_stage2(pool, n, M, K, substream(seed, "homogeneous").integers(2**63))
    p2 = ps[s2.index]
    q = np.exp(J * np.log1p(-np.clip(p2, 0.0, 1.0 - 1e-16)))
    psi_bar = s2.psi * q / (s2.psi * q + 1.0 - s2.psi)
    N = n + substream(seed, "homogeneous", "abundance").poisson(psi_bar * (M - n))
    return HomogeneousFit(pool, s2, p2, s2.psi, N)
