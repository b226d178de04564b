"""Synthetic SCR data from a multi-activity-centre model with cloglog detection."""

from dataclasses import asdict, dataclass, field

import numpy as np

from ._rng import substream
from .model import CaptureData, TrapArray


@dataclass(frozen=True)
class SimConfig:
    M: int = 200
    psi: float = 0.2
    trap_rows: int = 8
    trap_cols: int = 8
    trap_spacing: float = 1.0 / 7.0
    trap_origin: tuple = (0.0, 0.0)
    trap_coords: tuple = None
    buffer: float = 0.5
    ac_lambda: float = 0.5
    alpha: float = -1.0
    beta: float = -50.0
    J: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.ac_lambda <= 0:
            raise ValueError("activity-centre intensity must be positive")
        if self.buffer < 0:
            raise ValueError("buffer must be nonnegative")
        if not 0.0 <= self.psi <= 1.0:
            raise ValueError("psi must lie in [0, 1]")
        if self.beta >= 0:
            raise ValueError("beta must be negative for decaying detection")

    def traps(self):
        if self.trap_coords is not None:
            return TrapArray(np.asarray(self.trap_coords, dtype=float))
        ox, oy = self.trap_origin
        xs = ox + self.trap_spacing * np.arange(self.trap_cols)
        ys = oy + self.trap_spacing * np.arange(self.trap_rows)
        X, Y = np.meshgrid(xs, ys)
        return TrapArray(np.column_stack([X.ravel(), Y.ravel()]))

    def as_dict(self):
        d = asdict(self)
        d["trap_origin"] = list(self.trap_origin)
        d["trap_coords"] = None if self.trap_coords is None else [list(c) for c in self.trap_coords]
        return d


@dataclass
class SimTruth:
    z: np.ndarray
    centers: list
    p: np.ndarray
    counts: np.ndarray
    observed: np.ndarray
    region: tuple
    config: SimConfig = field(default=None)

    @property
    def N(self):
        return int(self.z.sum())


def cloglog_detection(centers, traps, alpha, beta):
    """Detection probability at each trap: max over centres of ``1 - exp(-exp(a + b d^2))``."""
    c = np.atleast_2d(centers)
    d2 = ((c[:, None, :] - traps[None, :, :]) ** 2).sum(axis=-1)
    return (-np.expm1(-np.exp(alpha + beta * d2))).max(axis=0)


def ztpois_sample(lam, rng, size=None):
    """Zero-truncated Poisson draws by inverse CDF on the conditional tail.

    For ``lam -> 0`` the distribution degenerates at 1.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    rng = rng if isinstance(rng, np.random.Generator) else substream(rng, "ztpois")
    u = rng.random(size)
    # P(X <= k | X >= 1) = (F(k) - e^-lam) / (1 - e^-lam); walk the pmf
    norm = -np.expm1(-lam)
    target = np.asarray(u * norm)
    k = np.ones(target.shape, dtype=np.int64)
    pmf = np.full(target.shape, lam * np.exp(-lam))
    cdf = pmf.copy()
    while True:
        todo = cdf < target
        if not np.any(todo):
            break
        k[todo] += 1
        pmf[todo] *= lam / k[todo]
        cdf[todo] += pmf[todo]
        if np.all(pmf[todo] == 0):
            break
    return int(k) if size is None else k


def simulate(config):
    """Simulate capture counts; return the detected rows and the full truth.

    Membership ``z_i ~ Bern(psi)``, centre counts zero-truncated Poisson,
    centres uniform on the trap bounding box buffered by ``config.buffer``.
    """
    traps = config.traps()
    loc = traps.locations
    region = (loc[:, 0].min() - config.buffer, loc[:, 0].max() + config.buffer,
              loc[:, 1].min() - config.buffer, loc[:, 1].max() + config.buffer)
    rng = substream(config.seed, "simulate")
    z = rng.random(config.M) < config.psi
    n_centers = ztpois_sample(config.ac_lambda, rng, size=config.M)
    centers, P = [], np.zeros((config.M, traps.L))
    for i in range(config.M):
        c = np.column_stack([rng.uniform(region[0], region[1], n_centers[i]),
                             rng.uniform(region[2], region[3], n_centers[i])])
        centers.append(c)
        P[i] = cloglog_detection(c, loc, config.alpha, config.beta)
    Y = rng.binomial(config.J, P) * z[:, None]
    observed = np.flatnonzero(Y.sum(axis=1) > 0)
    data = CaptureData(Y[observed], config.J, ids=tuple(str(i + 1) for i in observed))
    truth = SimTruth(z.astype(np.int64), centers, P, Y, observed, region, config)
    return traps, data, truth


def multimodal_individuals(truth, traps, min_separation=0.4, min_detections=2):
    """Superpopulation indices of detected individuals with two well-separated, detected centres.

    Each detection is attributed to the nearest of the individual's centres;
    an individual qualifies when two centres at least ``min_separation``
    apart each collect ``min_detections`` or more detections.
    """
    loc = traps.locations
    hits = []
    for i in truth.observed:
        c = truth.centers[i]
        if len(c) < 2:
            continue
        nearest = np.argmin(((loc[:, None, :] - c[None, :, :]) ** 2).sum(-1), axis=1)
        per_center = np.bincount(nearest, weights=truth.counts[i], minlength=len(c))
        good = np.flatnonzero(per_center >= min_detections)
        for a in range(len(good)):
            for b in range(a + 1, len(good)):
                if np.linalg.norm(c[good[a]] - c[good[b]]) >= min_separation:
                    hits.append(int(i))
                    break
            else:
                continue
            break
    return hits
