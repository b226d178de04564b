"""Post-hoc quantities from the stage-2 chain: abundance, latent fields, space-use maps."""

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy import ndimage
from scipy.special import ndtr, ndtri
from threadpoolctl import threadpool_limits

from ._rng import substream
from .gp import EIG_DROP, Kriger
from .likelihood import field_log_probs, log_noncapture
from .model import link_inverse


def _psi_bar_from_logq(psi, logq):
    q = np.exp(logq)
    return float(np.mean(psi * q / (psi * q + 1.0 - psi)))


def psi_bar(params, cache, J):
    """CRN average of the membership probability of an undetected individual.

    ``params`` is a :class:`~gcr.model.GcrParams` (or any object with ``mu``,
    ``theta`` and ``psi``); ``theta`` must lie on the cache grid.
    """
    entry = cache[cache.grid.index_of(params.theta)]
    _, log1mp = field_log_probs(entry, params.mu)
    return _psi_bar_from_logq(params.psi, log_noncapture(log1mp, J))


def _psi_bar_group(cache, J, mu, g, psis):
    with threadpool_limits(1):
        _, log1mp = field_log_probs(cache[g], mu)
    logq = log_noncapture(log1mp, J)
    return [_psi_bar_from_logq(p, logq) for p in psis]


@dataclass
class AbundanceDraws:
    psi_bar: np.ndarray
    N0: np.ndarray
    N: np.ndarray
    n: int
    M: int

    def summary(self):
        return summarize_draws(self.N)


def summarize_draws(x):
    x = np.asarray(x, dtype=float)
    q = np.quantile(x, [0.025, 0.25, 0.5, 0.75, 0.975])
    return {
        "mean": float(x.mean()),
        "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
        "q025": float(q[0]), "q25": float(q[1]), "median": float(q[2]),
        "q75": float(q[3]), "q975": float(q[4]),
    }


def sample_abundance(stage2, n, M, cache, J, seed, n_jobs=1):
    """Draw ``N = n + Pois(psi_bar * (M - n))`` for every stage-2 draw.

    ``psi_bar`` is evaluated once per distinct ``(mu, theta)`` in the chain;
    stage-2 resampling repeats pooled draws heavily.
    """
    if len(stage2) == 0:
        raise ValueError("stage-2 chain is empty")
    groups = defaultdict(list)
    for k, (mu, g) in enumerate(zip(stage2.mu, stage2.theta_index)):
        groups[(float(mu), int(g))].append(k)
    keys = sorted(groups, key=lambda key: groups[key][0])
    vals = Parallel(n_jobs=n_jobs)(
        delayed(_psi_bar_group)(cache, J, mu, g, stage2.psi[groups[(mu, g)]]) for mu, g in keys
    )
    pb = np.empty(len(stage2))
    for key, v in zip(keys, vals):
        pb[groups[key]] = v
    N0 = substream(seed, "abundance").poisson(pb * (M - n))
    return AbundanceDraws(pb, N0, n + N0, int(n), int(M))


def rtruncnorm_sign(mean, positive, rng):
    """Unit-variance normal draws truncated to ``(0, inf)`` or ``(-inf, 0]``.

    Inverse-CDF sampling written on the side of the distribution that keeps
    precision; far-tail cases fall back to the exponential tail limit.
    """
    mean = np.asarray(mean, dtype=float)
    s = np.where(positive, 1.0, -1.0)
    u = 1.0 - rng.random(mean.shape)
    with np.errstate(divide="ignore", over="ignore"):
        z = mean - s * ndtri(u * ndtr(s * mean))
    bad = ~np.isfinite(z)
    if np.any(bad):
        d = np.abs(mean[bad])
        z[bad] = s[bad] * rng.exponential(size=d.shape) / np.maximum(d, 1.0)
    return z


def spectral_basis(entry, sigma2=None, mass=None):
    """Eigenvectors and prior variances for the field deviations ``v - mu``.

    Eigenpairs with eigenvalue below ``1e-10`` are dropped; ``mass`` (e.g.
    0.999) truncates further to that fraction of the total eigenvalue sum.
    """
    sigma2 = entry.sigma2 if sigma2 is None else sigma2
    lam = np.asarray(entry.eigvals)
    keep = lam > EIG_DROP
    if mass is not None:
        cum = np.cumsum(lam) / lam.sum()
        keep &= np.arange(lam.size) <= np.searchsorted(cum, mass)
    return entry.eigvecs[:, keep], sigma2 * lam[keep]


def disaggregate(y, J):
    """``L x J`` binary trials with the ``y_l`` successes placed first."""
    y = np.asarray(y)
    return np.arange(J)[None, :] < y[:, None]


def gibbs_field_chain(y, mu, entry, J, n_iter, rng, mass=None):
    """Auxiliary-variable probit Gibbs chain for one individual's field at the traps.

    Alternates truncated-normal draws of the latent trial variables with a
    conjugate Normal draw of the spectral coefficients. Returns the
    ``(n_iter, L)`` chain of ``v = mu + H alpha``.
    """
    H, lam = spectral_basis(entry, mass=mass)
    trials = disaggregate(y, J)
    prec = J + 1.0 / lam
    sd = 1.0 / np.sqrt(prec)
    alpha = np.zeros(lam.size)
    out = np.empty((n_iter, H.shape[0]))
    for it in range(n_iter):
        eta = mu + H @ alpha
        if J > 0:
            z = rtruncnorm_sign(np.repeat(eta[:, None], J, axis=1), trials, rng)
            b = H.T @ (z - mu).sum(axis=1)
        else:
            b = np.zeros(lam.size)
        alpha = b / prec + sd * rng.standard_normal(lam.size)
        out[it] = mu + H @ alpha
    return out


def gibbs_field_individual(y, mu, entry, J, n_iter=200, seed=0, mass=None):
    """One realization of the field at the traps: the last state of a short Gibbs chain."""
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "gibbs")
    return gibbs_field_chain(y, mu, entry, J, n_iter, rng, mass=mass)[-1]


@dataclass
class PredictionGrid:
    sites: np.ndarray
    shape: tuple
    mean_v: np.ndarray
    sd_v: np.ndarray
    mean_p: np.ndarray
    sd_p: np.ndarray
    utilization: np.ndarray = None
    n_draws: int = 0

    def as_image(self, values):
        """Reshape a per-site vector to ``(ny, nx)`` (rows index y)."""
        return np.asarray(values).reshape(self.shape[1], self.shape[0])


def make_grid(bounds, resolution=40):
    """Cell-centre sites of a regular grid over ``(xmin, xmax, ymin, ymax)``.

    ``resolution`` is an int or ``(nx, ny)``. Sites are ordered x-fastest.
    """
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nx < 2 or ny < 2:
        raise ValueError("grid resolution must be at least 2 per axis")
    xmin, xmax, ymin, ymax = bounds
    xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
    ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()]), (nx, ny)


def trap_bounds(traps, buffer=0.0):
    loc = traps.locations
    return (loc[:, 0].min() - buffer, loc[:, 0].max() + buffer,
            loc[:, 1].min() - buffer, loc[:, 1].max() + buffer)


def thin_indices(K, K_keep):
    if K_keep >= K:
        return np.arange(K)
    return np.unique(np.linspace(0, K - 1, K_keep).round().astype(np.int64))


def _predict_group(y, J, entry, trap_sites, sites, ks, mus, seed, key, n_iter, mass):
    out = np.empty((len(ks), sites.shape[0]))
    with threadpool_limits(1):
        kr = Kriger(trap_sites, sites, entry.sigma2, entry.theta)
        for row, (k, mu) in enumerate(zip(ks, mus)):
            rng = substream(seed, "maps", key, int(k))
            if y is None:
                v = mu + entry.chol @ rng.standard_normal(entry.chol.shape[0])
            else:
                v = gibbs_field_chain(y, mu, entry, J, n_iter, rng, mass=mass)[-1]
            out[row] = kr.draw(v, mu, rng)
    return out


def predict_maps(y, stage2, cache, J, sites, shape, n_draws=1000, n_iter=200, seed=0, key=0,
                 n_jobs=1, mass=None):
    """Posterior mean and sd maps of the field and detection probability for one individual.

    ``y`` is the individual's capture row (``None`` draws the field from the
    prior, as for an undetected individual). The stage-2 chain is thinned
    to ``n_draws`` evenly spaced draws; for each, a Gibbs realization of the
    field at the traps is kriged to ``sites`` by composition sampling.
    """
    if len(shape) != 2 or shape[0] * shape[1] != sites.shape[0]:
        raise ValueError("shape must be (nx, ny) with nx * ny equal to the number of sites")
    ks = thin_indices(len(stage2), n_draws)
    by_theta = defaultdict(list)
    for k in ks:
        by_theta[int(stage2.theta_index[k])].append(int(k))
    groups = sorted(by_theta)
    trap_sites = cache.traps.locations
    results = Parallel(n_jobs=n_jobs)(
        delayed(_predict_group)(y, J, cache[g], trap_sites, sites, by_theta[g],
                                stage2.mu[by_theta[g]], seed, key, n_iter, mass)
        for g in groups
    )
    V = np.empty((len(ks), sites.shape[0]))
    pos = {int(k): i for i, k in enumerate(ks)}
    for g, block in zip(groups, results):
        for k, row in zip(by_theta[g], block):
            V[pos[k]] = row
    P = link_inverse(V, cache.link)
    util = (P / P.sum(axis=1, keepdims=True)).mean(axis=0)
    return PredictionGrid(sites, tuple(shape), V.mean(0), V.std(0), P.mean(0), P.std(0), util, len(ks))


def local_maxima(image, smooth=True):
    """``(row, col)`` indices of strict local maxima over the 8-neighbourhood.

    The image is first smoothed with a 3 x 3 moving average when ``smooth``.
    """
    img = np.asarray(image, dtype=float)
    if smooth:
        img = ndimage.uniform_filter(img, size=3, mode="nearest")
    padded = np.pad(img, 1, mode="constant", constant_values=-np.inf)
    is_max = np.ones(img.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = padded[1 + dr:1 + dr + img.shape[0], 1 + dc:1 + dc + img.shape[1]]
            is_max &= img > nb
    return np.argwhere(is_max)


def local_maxima_sites(pred, values=None, smooth=True):
    values = pred.mean_p if values is None else values
    idx = local_maxima(pred.as_image(values), smooth=smooth)
    img_sites = pred.sites.reshape(pred.shape[1], pred.shape[0], 2)
    return np.array([img_sites[r, c] for r, c in idx]).reshape(-1, 2)
