"""Estimator-style wrappers around the two-stage GCR fit and the SCR baseline."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from .gp import ThetaGrid, precompute_theta_grid
from .model import CaptureData, ModelConfig, TrapArray
from .posthoc import predict_maps, sample_abundance, summarize_draws
from .scr import fit_scr, scr_predict_map
from .stage1 import run_stage1
from .stage2 import run_stage2


def _seed_from(random_state):
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(check_random_state(random_state).randint(2**31 - 1))


def _validate_inputs(X, traps, J, ids=None):
    Y = check_array(X, dtype=None, ensure_min_samples=1)
    if not np.all(np.equal(np.mod(Y, 1), 0)):
        raise ValueError("capture counts must be integers")
    loc = check_array(traps, dtype=float)
    if loc.shape[1] != 2:
        raise ValueError("traps must be an (L, 2) coordinate array")
    if Y.shape[1] != loc.shape[0]:
        raise ValueError(f"X has {Y.shape[1]} trap columns but {loc.shape[0]} traps were given")
    trap_array = TrapArray(loc)
    return trap_array, CaptureData(Y.astype(np.int64), int(J), ids=ids)


def _sites(sites):
    return check_array(sites, dtype=float)


class GCRAbundance(BaseEstimator):
    """Two-stage geostatistical capture-recapture fit.

    ``fit(X, traps, J)`` takes the ``n x L`` matrix of detection counts of
    the detected individuals. After fitting, ``abundance_`` holds posterior
    draws of ``N`` and ``predict`` returns posterior-mean detection
    probabilities at new sites for one individual.

    Parameters
    ----------
    M : int
        Superpopulation size for data augmentation.
    prior_mu : tuple
        Mean and variance of the Normal prior on the field mean.
    prior_psi : tuple
        Beta prior on the inclusion probability.
    theta_grid_size, n_crn : int
        Range-parameter grid size and number of common random fields.
    K1, K : int
        Stage-1 draws (total across chains, warmup included) and stage-2 length.
    n_jobs : int
        Worker processes; results do not depend on it.
    random_state : int or None
    """

    def __init__(self, M=200, prior_mu=(0.0, 4.0), prior_psi=(1.0, 1.0), sigma2=1.0, theta_grid_size=20,
                 n_crn=4096, K1=20_000, K=20_000, n_chains=4, warmup_frac=0.2, s_mu=0.25, link="probit",
                 n_jobs=1, random_state=0):
        self.M = M
        self.prior_mu = prior_mu
        self.prior_psi = prior_psi
        self.sigma2 = sigma2
        self.theta_grid_size = theta_grid_size
        self.n_crn = n_crn
        self.K1 = K1
        self.K = K
        self.n_chains = n_chains
        self.warmup_frac = warmup_frac
        self.s_mu = s_mu
        self.link = link
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, traps, J, ids=None):
        traps_, data = _validate_inputs(X, traps, J, ids)
        config = ModelConfig(M=self.M, prior_mu=self.prior_mu, prior_psi=self.prior_psi, sigma2=self.sigma2,
                             theta_grid_size=self.theta_grid_size, link=self.link)
        config.check_data(data)
        seed = _seed_from(self.random_state)
        grid = ThetaGrid.from_traps(traps_, self.theta_grid_size)
        self.cache_ = precompute_theta_grid(traps_, grid, self.sigma2, self.n_crn, seed=seed,
                                            n_jobs=self.n_jobs, link=self.link)
        n_iter = int(np.ceil(self.K1 / self.n_chains))
        self.stage1_ = run_stage1(data, self.cache_, config, n_iter=n_iter, seed=seed, n_chains=self.n_chains,
                                  n_jobs=self.n_jobs, warmup_frac=self.warmup_frac, s_mu=self.s_mu)
        self.stage2_ = run_stage2(self.stage1_, data.n, self.M, self.K, seed)
        self.abundance_ = sample_abundance(self.stage2_, data.n, self.M, self.cache_, data.occasions, seed,
                                           n_jobs=self.n_jobs)
        self.data_, self.traps_, self.seed_ = data, traps_, seed
        self.n_features_in_ = traps_.L
        return self

    def abundance_summary(self):
        check_is_fitted(self, "abundance_")
        return self.abundance_.summary()

    def predict_map(self, individual, sites, shape=None, n_draws=1000, n_iter=200):
        """Posterior maps for detected row ``individual`` (or ``None`` for an undetected one)."""
        check_is_fitted(self, "stage2_")
        sites = _sites(sites)
        shape = (sites.shape[0], 1) if shape is None else shape
        y = None if individual is None else self.data_.counts[individual]
        key = "prior" if individual is None else self.data_.ids[individual]
        return predict_maps(y, self.stage2_, self.cache_, self.data_.occasions, sites, shape, n_draws=n_draws,
                            n_iter=n_iter, seed=self.seed_, key=key, n_jobs=self.n_jobs)

    def predict(self, sites, individual=0, n_draws=1000, n_iter=200):
        """Posterior-mean detection probability at ``sites``."""
        return self.predict_map(individual, sites, n_draws=n_draws, n_iter=n_iter).mean_p


class SCRAbundance(BaseEstimator):
    """Single-activity-centre SCR with a cloglog detection kernel, fit by data augmentation."""

    def __init__(self, M=200, buffer=0.5, K=20_000, prior_var=100.0, prior_psi=(1.0, 1.0), warmup_frac=0.2,
                 random_state=0):
        self.M = M
        self.buffer = buffer
        self.K = K
        self.prior_var = prior_var
        self.prior_psi = prior_psi
        self.warmup_frac = warmup_frac
        self.random_state = random_state

    def fit(self, X, traps, J, ids=None):
        traps_, data = _validate_inputs(X, traps, J, ids)
        self.chain_ = fit_scr(data, traps_, self.buffer, self.M, self.K, _seed_from(self.random_state),
                              prior_var=self.prior_var, prior_psi=self.prior_psi, warmup_frac=self.warmup_frac)
        self.data_, self.traps_ = data, traps_
        self.n_features_in_ = traps_.L
        return self

    def abundance_summary(self):
        check_is_fitted(self, "chain_")
        return summarize_draws(self.chain_.N)

    def predict_map(self, individual, sites, shape=None, n_draws=None):
        check_is_fitted(self, "chain_")
        sites = _sites(sites)
        shape = (sites.shape[0], 1) if shape is None else shape
        return scr_predict_map(self.chain_, individual, sites, shape, n_draws=n_draws)

    def predict(self, sites, individual=0):
        return self.predict_map(individual, sites).mean_p
