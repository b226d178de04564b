"""Domain types, link functions and elementary likelihood kernels."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import gammaln, ndtr
from scipy.spatial.distance import pdist, squareform

PROB_EPS = 1e-12


class LinkKind(str, Enum):
    PROBIT = "probit"
    LOGIT = "logit"
    CLOGLOG = "cloglog"


class ValidationError(ValueError):
    """Raised when input data or configuration violate a model invariant."""


def _freeze(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrapArray:
    """Ordered detector coordinates (``L x 2``)."""

    locations: np.ndarray
    ids: tuple = None

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim != 2 or loc.shape[1] != 2 or loc.shape[0] < 1:
            raise ValidationError("trap locations must be an (L, 2) array with L >= 1")
        if not np.all(np.isfinite(loc)):
            raise ValidationError("trap coordinates must be finite")
        if loc.shape[0] > 1 and np.min(pdist(loc)) <= 0.0:
            raise ValidationError("two traps share identical coordinates")
        ids = self.ids
        if ids is None:
            ids = tuple(str(i + 1) for i in range(loc.shape[0]))
        ids = tuple(str(i) for i in ids)
        if len(ids) != loc.shape[0] or len(set(ids)) != len(ids):
            raise ValidationError("trap ids must be unique and one per trap")
        object.__setattr__(self, "locations", _freeze(loc))
        object.__setattr__(self, "ids", ids)

    @property
    def L(self):
        return self.locations.shape[0]

    def distances(self):
        return squareform(pdist(self.locations))

    @property
    def max_distance(self):
        if self.L < 2:
            return 0.0
        return float(np.max(pdist(self.locations)))

    def geometry_hash(self):
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.locations).tobytes()).hexdigest()


@dataclass(frozen=True)
class CaptureData:
    """Per-individual per-trap detection counts for the ``n`` observed individuals."""

    counts: np.ndarray
    occasions: int
    ids: tuple = None

    def __post_init__(self):
        y = np.asarray(self.counts)
        if y.ndim != 2:
            raise ValidationError("counts must be an (n, L) matrix")
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValidationError("counts must be integers")
        y = y.astype(np.int64)
        J = int(self.occasions)
        if J < 1:
            raise ValidationError("occasions J must be a positive integer")
        if np.any(y < 0) or np.any(y > J):
            i, l = np.argwhere((y < 0) | (y > J))[0]
            raise ValidationError(f"count at row {i}, trap column {l} outside [0, {J}]")
        ids = self.ids
        if ids is None:
            ids = tuple(str(i + 1) for i in range(y.shape[0]))
        ids = tuple(str(i) for i in ids)
        if len(ids) != y.shape[0]:
            raise ValidationError("one id per capture row required")
        empty = np.flatnonzero(y.sum(axis=1) == 0)
        if empty.size:
            raise ValidationError(f"individual {ids[empty[0]]} has an all-zero capture history")
        object.__setattr__(self, "counts", _freeze(y))
        object.__setattr__(self, "occasions", J)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self):
        return self.counts.shape[0]

    @property
    def L(self):
        return self.counts.shape[1]


@dataclass(frozen=True)
class ModelConfig:
    M: int = 200
    prior_mu: tuple = (0.0, 4.0)
    prior_psi: tuple = (1.0, 1.0)
    sigma2: float = 1.0
    theta_grid_size: int = 20
    link: LinkKind = LinkKind.PROBIT

    def __post_init__(self):
        object.__setattr__(self, "link", LinkKind(self.link))
        object.__setattr__(self, "prior_mu", tuple(float(v) for v in self.prior_mu))
        object.__setattr__(self, "prior_psi", tuple(float(v) for v in self.prior_psi))
        if self.prior_mu[1] <= 0:
            raise ValidationError("prior variance of mu must be positive")
        if min(self.prior_psi) <= 0:
            raise ValidationError("Beta prior parameters for psi must be positive")
        if self.sigma2 <= 0:
            raise ValidationError("sigma2 must be positive")
        if self.theta_grid_size < 2:
            raise ValidationError("theta_grid_size must be at least 2")

    def check_data(self, data):
        if self.M <= data.n:
            raise ValidationError(f"superpopulation M={self.M} must exceed n={data.n}")


@dataclass(frozen=True)
class GcrParams:
    mu: float
    sigma2: float
    theta: float
    psi: float

    def __post_init__(self):
        if not 0.0 < self.psi < 1.0:
            raise ValidationError("psi must lie in (0, 1)")
        if self.sigma2 <= 0 or self.theta <= 0:
            raise ValidationError("sigma2 and theta must be positive")


@dataclass(frozen=True)
class LatentField:
    v: np.ndarray
    p: np.ndarray = field(default=None)
    link: LinkKind = LinkKind.PROBIT

    def __post_init__(self):
        v = _freeze(np.asarray(self.v, dtype=float))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "p", _freeze(link_inverse(v, self.link)))


def link_inverse(v, link=LinkKind.PROBIT):
    """Map a linear predictor to a probability, elementwise."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("link_inverse requires finite input")
    link = LinkKind(link)
    if link is LinkKind.PROBIT:
        return ndtr(v)
    if link is LinkKind.LOGIT:
        return 1.0 / (1.0 + np.exp(-v))
    return -np.expm1(-np.exp(v))


def _clip(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def log_binom_coef(y, J):
    y = np.asarray(y, dtype=float)
    return gammaln(J + 1.0) - gammaln(y + 1.0) - gammaln(J - y + 1.0)


def binom_count_loglik(y, p, J):
    """Sum over traps of ``log Binom(y_l; J, p_l)``.

    Exact 0/1 probabilities are honoured (a contradiction gives ``-inf``);
    interior probabilities are clamped away from the boundary before logs.
    """
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise ValueError("y and p must have the same shape")
    if np.any(y < 0) or np.any(y > J):
        raise ValueError("counts must lie in [0, J]")
    fail = J - y
    if np.any((p <= 0.0) & (y > 0)) or np.any((p >= 1.0) & (fail > 0)):
        return -np.inf
    pc = _clip(p)
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(y > 0, y * np.log(np.where(p >= 1.0, 1.0, pc)), 0.0) \
            + np.where(fail > 0, fail * np.log1p(-np.where(p <= 0.0, 0.0, pc)), 0.0)
    return float(np.sum(log_binom_coef(y, J) + terms))


def noncapture_prob(p, J):
    """Probability of an all-zero capture history, ``prod_l (1 - p_l)^J``."""
    p = np.asarray(p, dtype=float)
    if J == 0:
        return 1.0
    if np.any(p >= 1.0):
        return 0.0
    return float(np.exp(J * np.sum(np.log1p(-p))))
