"""Gaussian-process machinery: covariance, theta-grid cache, field draws, kriging."""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg
from scipy.spatial.distance import cdist
from threadpoolctl import threadpool_limits

from ._rng import substream
from .model import LatentField, LinkKind, TrapArray

CACHE_FORMAT_VERSION = 1
JITTER_START = 1e-8
JITTER_MAX = 1e-4
EIG_DROP = 1e-10


class FactorizationError(np.linalg.LinAlgError):
    pass


def squared_exponential(sq_dist, sigma2, theta):
    return sigma2 * np.exp(-sq_dist / theta**2)


def build_covariance(sites_a, sites_b, sigma2, theta, kernel=squared_exponential):
    """Covariance matrix ``sigma2 * exp(-|a - b|^2 / theta^2)`` between two site sets.

    ``kernel`` receives squared distances and may be swapped for another
    isotropic covariance (for example a Matern form).
    """
    if theta <= 0 or sigma2 <= 0:
        raise ValueError("theta and sigma2 must be positive")
    a = np.atleast_2d(np.asarray(sites_a, dtype=float))
    b = np.atleast_2d(np.asarray(sites_b, dtype=float))
    return kernel(cdist(a, b, "sqeuclidean"), sigma2, theta)


def jittered_cholesky(K, scale=1.0, label=""):
    """Lower Cholesky factor of ``K + jitter * I`` with escalating jitter.

    Returns ``(C, jitter)``. Jitter starts at ``1e-8 * scale`` and grows by
    10x up to ``1e-4 * scale``.
    """
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            C = linalg.cholesky(K + jitter * scale * eye, lower=True)
            return C, jitter * scale
        except linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(f"covariance not positive definite even with jitter {JITTER_MAX}{label}")


@dataclass(frozen=True)
class ThetaGrid:
    values: np.ndarray
    d_max: float

    @classmethod
    def from_traps(cls, traps, size=20):
        d_max = traps.max_distance
        if d_max <= 0:
            raise ValueError("theta grid needs at least two distinct traps")
        return cls(np.linspace(d_max / 20.0, d_max / 2.0, size), d_max)

    def __len__(self):
        return len(self.values)

    def index_of(self, theta):
        idx = int(np.argmin(np.abs(self.values - theta)))
        if not np.isclose(self.values[idx], theta, rtol=1e-9, atol=1e-12):
            raise ValueError(f"theta={theta} is not on the grid")
        return idx


@dataclass(frozen=True)
class ThetaEntry:
    """Precomputed quantities for one grid value of theta."""

    theta: float
    sigma2: float
    R: np.ndarray
    chol: np.ndarray
    jitter: float
    eigvecs: np.ndarray
    eigvals: np.ndarray
    fields: np.ndarray
    link: LinkKind = LinkKind.PROBIT

    @property
    def n_crn(self):
        return self.fields.shape[1]


@dataclass(frozen=True)
class ThetaGridCache:
    traps: TrapArray
    grid: ThetaGrid
    sigma2: float
    seed: int
    entries: tuple
    link: LinkKind = LinkKind.PROBIT

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    @property
    def n_crn(self):
        return self.entries[0].n_crn

    def key(self):
        payload = {
            "traps": self.traps.geometry_hash(),
            "grid": [float(v) for v in self.grid.values],
            "sigma2": float(self.sigma2),
            "B": int(self.n_crn),
            "seed": int(self.seed),
            "link": self.link.value,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _build_entry(locations, theta, sigma2, eps, link):
    R = build_covariance(locations, locations, 1.0, theta)
    with threadpool_limits(1):
        C, jitter = jittered_cholesky(sigma2 * R, scale=sigma2, label=f" (theta={theta:.6g})")
        lam, H = linalg.eigh(R)
        fields = C @ eps
    lam = np.clip(lam, 0.0, None)
    order = np.argsort(lam)[::-1]
    return ThetaEntry(
        theta=float(theta), sigma2=float(sigma2), R=R, chol=C, jitter=jitter,
        eigvecs=H[:, order], eigvals=lam[order], fields=fields, link=LinkKind(link),
    )


def precompute_theta_grid(traps, grid, sigma2=1.0, n_crn=4096, seed=0, n_jobs=1,
                          link=LinkKind.PROBIT):
    """Factorize the covariance at every grid theta and draw shared CRN fields.

    A single ``L x B`` matrix of standard normals is drawn from the
    ``"crn"`` substream and multiplied by every factor, so each theta sees
    the same underlying random numbers.
    """
    if n_crn < 1:
        raise ValueError("n_crn must be >= 1")
    eps = substream(seed, "crn").standard_normal((traps.L, n_crn))
    entries = Parallel(n_jobs=n_jobs)(
        delayed(_build_entry)(traps.locations, th, sigma2, eps, link) for th in grid.values
    )
    return ThetaGridCache(traps, grid, float(sigma2), int(seed), tuple(entries), LinkKind(link))


def sample_field(entry, mu, b):
    """Latent field ``mu + C eps_b`` for CRN index ``b``."""
    if not 0 <= b < entry.n_crn:
        raise IndexError(f"CRN index {b} out of range [0, {entry.n_crn})")
    return LatentField(mu + entry.fields[:, b], link=entry.link)


def draw_fields(entry, mu, size, rng):
    """``size`` fresh (non-CRN) field draws, shape ``(L, size)``."""
    eps = rng.standard_normal((entry.R.shape[0], size))
    return mu + entry.chol @ eps


def save_cache(cache, path):
    meta = {
        "version": CACHE_FORMAT_VERSION,
        "key": cache.key(),
        "sigma2": cache.sigma2,
        "seed": cache.seed,
        "link": cache.link.value,
        "d_max": cache.grid.d_max,
        "trap_ids": list(cache.traps.ids),
        "jitter": [e.jitter for e in cache.entries],
    }
    arrays = {
        "locations": cache.traps.locations,
        "grid": cache.grid.values,
        "R": np.stack([e.R for e in cache.entries]),
        "chol": np.stack([e.chol for e in cache.entries]),
        "eigvecs": np.stack([e.eigvecs for e in cache.entries]),
        "eigvals": np.stack([e.eigvals for e in cache.entries]),
        "fields": np.stack([e.fields for e in cache.entries]),
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_cache(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CACHE_FORMAT_VERSION:
            raise ValueError(f"unsupported cache format version {meta.get('version')}")
        traps = TrapArray(z["locations"], tuple(meta["trap_ids"]))
        grid = ThetaGrid(np.array(z["grid"]), float(meta["d_max"]))
        link = LinkKind(meta["link"])
        R, chol, H, lam, fields = (z[k] for k in ("R", "chol", "eigvecs", "eigvals", "fields"))
        entries = tuple(
            ThetaEntry(float(th), float(meta["sigma2"]), R[g], chol[g], float(meta["jitter"][g]),
                       H[g], lam[g], fields[g], link)
            for g, th in enumerate(grid.values)
        )
    cache = ThetaGridCache(traps, grid, float(meta["sigma2"]), int(meta["seed"]), entries, link)
    if cache.key() != meta["key"]:
        raise ValueError("cache key mismatch; file is corrupt or was edited")
    return cache


@dataclass(frozen=True)
class KrigingResult:
    mean: np.ndarray
    cov: np.ndarray
    sample: np.ndarray = None

    @property
    def sd(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


class Kriger:
    """Reusable kriging operator from trap sites to a fixed set of prediction sites.

    The trap covariance carries the same diagonal jitter used by the cache.
    Prediction sites that coincide with a trap receive that jitter in their
    cross- and self-covariance too, so interpolation at traps is exact.
    """

    def __init__(self, trap_sites, pred_sites, sigma2, theta):
        trap_sites = np.atleast_2d(np.asarray(trap_sites, dtype=float))
        pred_sites = np.atleast_2d(np.asarray(pred_sites, dtype=float))
        S = build_covariance(trap_sites, trap_sites, sigma2, theta)
        C, jitter = jittered_cholesky(S, scale=sigma2, label=f" (theta={theta:.6g})")
        cross = build_covariance(pred_sites, trap_sites, sigma2, theta)
        coincide = cdist(pred_sites, trap_sites) < 1e-12
        cross = cross + jitter * coincide
        pp = build_covariance(pred_sites, pred_sites, sigma2, theta)
        on_trap = coincide.any(axis=1)
        pp[np.diag_indices_from(pp)] += jitter * on_trap
        W = linalg.cho_solve((C, True), cross.T).T
        cov = pp - W @ cross.T
        cov = 0.5 * (cov + cov.T)
        d = np.diag(cov).copy()
        cov[np.diag_indices_from(cov)] = np.clip(d, 0.0, None)
        self.weights = W
        self.cov = cov
        self._factor = None

    def mean(self, v_obs, mu):
        return mu + self.weights @ (np.asarray(v_obs, dtype=float) - mu)

    @property
    def factor(self):
        if self._factor is None:
            self._factor = psd_factor(self.cov)
        return self._factor

    def draw(self, v_obs, mu, rng):
        F = self.factor
        return self.mean(v_obs, mu) + F @ rng.standard_normal(F.shape[1])


def psd_factor(cov):
    """Square-root factor ``F`` with ``F F' ~ cov`` for a PSD matrix.

    Tries a jittered Cholesky first and falls back to a clipped
    eigendecomposition for rank-deficient matrices.
    """
    scale = max(float(np.max(np.diag(cov))), 1e-300)
    try:
        C, _ = jittered_cholesky(cov, scale=scale)
        return C
    except FactorizationError:
        lam, U = linalg.eigh(cov)
        keep = lam > EIG_DROP * scale
        return U[:, keep] * np.sqrt(lam[keep])


def krige(v_obs, mu, sigma2, theta, trap_sites, pred_sites, rng=None):
    """Gaussian conditional of the field at ``pred_sites`` given ``v_obs`` at traps.

    If ``rng`` is given, one draw from the conditional is attached.
    """
    k = Kriger(trap_sites, pred_sites, sigma2, theta)
    mean = k.mean(v_obs, mu)
    sample = None if rng is None else k.draw(v_obs, mu, rng)
    return KrigingResult(mean, k.cov, sample)
