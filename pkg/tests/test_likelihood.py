import dataclasses
import itertools

import numpy as np
import pytest
from scipy.stats import binom, norm, poisson

from gcr.gp import ThetaGrid, precompute_theta_grid
from gcr.likelihood import (
    capture_prob,
    field_log_probs,
    integrated_loglik_batch,
    integrated_loglik_individual,
    n_loglik,
    n_loglik_poisbinom,
    poisson_binomial_pmf,
)
from gcr.model import TrapArray

from .oracles import binom_pmf_rows, gauss_hermite_expect, probit_capture


@pytest.fixture(scope="module")
def pair_cache():
    traps = TrapArray([[0.0, 0.0], [0.3, 0.1]])
    return precompute_theta_grid(traps, ThetaGrid.from_traps(traps, 20), 1.0, 50_000, seed=2)


@pytest.fixture(scope="module")
def single_cache():
    # a single trap has no distances; use a one-point grid built by hand
    traps = TrapArray([[0.0, 0.0]])
    grid = ThetaGrid(np.array([0.5, 1.0]), 1.0)
    return precompute_theta_grid(traps, grid, 1.0, 20_000, seed=4)


def test_capture_prob_limits(pair_cache):
    e = pair_cache[10]
    assert capture_prob(e, 40.0, 2) == pytest.approx(1.0, abs=1e-12)
    assert capture_prob(e, -40.0, 2) == pytest.approx(0.0, abs=1e-9)


def test_capture_prob_monotone_in_mu_and_J(pair_cache):
    e = pair_cache[10]
    mus = np.linspace(-3, 3, 25)
    d = [capture_prob(e, m, 2) for m in mus]
    assert np.all(np.diff(d) >= 0)
    assert all(capture_prob(e, 0.3, J + 1) >= capture_prob(e, 0.3, J) for J in range(1, 5))


def test_capture_prob_matches_quadrature(pair_cache):
    e = pair_cache[10]
    for mu in (-1.0, 0.0, 0.8):
        exact = gauss_hermite_expect(lambda v: probit_capture(v, 2), [mu, mu], e.R)
        assert capture_prob(e, mu, 2) == pytest.approx(exact, rel=0.01)


def test_single_trap_single_occasion_identity(single_cache):
    for mu in (-2.0, 0.0, 1.5):
        assert integrated_loglik_individual([1], single_cache[0], mu, 1) == pytest.approx(0.0, abs=1e-12)


def test_integrated_loglik_matches_quadrature(pair_cache):
    e = pair_cache[10]
    y = np.array([1, 0])
    for mu in (-1.0, 0.0):
        num = gauss_hermite_expect(lambda v: binom_pmf_rows(y, norm.cdf(v), 2), [mu, mu], e.R)
        den = gauss_hermite_expect(lambda v: probit_capture(v, 2), [mu, mu], e.R)
        assert integrated_loglik_individual(y, e, mu, 2) == pytest.approx(np.log(num / den), abs=0.01)


def test_zero_history_rejected(pair_cache):
    with pytest.raises(ValueError):
        integrated_loglik_individual([0, 0], pair_cache[3], 0.0, 2)


def test_never_detecting_trap_leaves_value_unchanged(pair_cache):
    e = pair_cache[6]
    base = integrated_loglik_individual([2, 1], e, -0.5, 2)
    # forced p = 0 at an extra trap: a latent value far below any clamp
    fields = np.vstack([e.fields, np.full((1, e.n_crn), -1e6)])
    extra = dataclasses.replace(e, fields=fields)
    assert integrated_loglik_individual([2, 1, 0], extra, -0.5, 2) == pytest.approx(base, abs=1e-9)


def test_permuting_traps_jointly_is_invariant():
    rng = np.random.default_rng(8)
    traps = TrapArray(rng.uniform(0, 1, (4, 2)))
    cache = precompute_theta_grid(traps, ThetaGrid.from_traps(traps, 5), 1.0, 3000, seed=1)
    e = cache[2]
    y = np.array([0, 2, 1, 0])
    perm = np.array([2, 0, 3, 1])
    pe = dataclasses.replace(e, fields=e.fields[perm])
    assert integrated_loglik_individual(y[perm], pe, 0.1, 3) == pytest.approx(
        integrated_loglik_individual(y, e, 0.1, 3), abs=1e-12)


def test_numerator_sums_to_capture_prob(pair_cache):
    e = pair_cache[12]
    mu, J = -0.3, 1
    logp, l1 = field_log_probs(e, mu)
    total = 0.0
    for y in itertools.product(range(J + 1), repeat=2):
        if sum(y) == 0:
            continue
        ll = (np.array(y)[:, None] * logp + (J - np.array(y))[:, None] * l1).sum(0)
        total += np.mean(np.exp(ll))
    assert total == pytest.approx(capture_prob(e, mu, J), rel=1e-9)


def test_batch_agrees_with_individual(pair_cache):
    e = pair_cache[8]
    Y = np.array([[1, 0], [2, 2], [0, 1]])
    ll, dbar = integrated_loglik_batch(Y, e, 0.2, 2)
    assert dbar == pytest.approx(capture_prob(e, 0.2, 2))
    for i in range(3):
        assert ll[i] == pytest.approx(integrated_loglik_individual(Y[i], e, 0.2, 2), abs=1e-12)


def test_n_loglik_examples():
    assert n_loglik(1, 2, 0.5, 1.0) == pytest.approx(poisson.logpmf(1, 1.0))
    assert n_loglik(0, 10, 0.0, 0.5) == 0.0
    with pytest.raises(ValueError):
        n_loglik(11, 10, 0.5, 0.5)


def test_poisson_binomial_edge_cases():
    assert np.allclose(poisson_binomial_pmf([0.3]), [0.7, 0.3])
    pmf = poisson_binomial_pmf(np.full(12, 0.17))
    assert np.allclose(pmf, binom.pmf(np.arange(13), 12, 0.17))
    p_draws = np.full((12, 3), 0.1)
    q = 0.9**6
    assert n_loglik_poisbinom(4, 0.5, p_draws, 2) == pytest.approx(binom.logpmf(4, 12, 0.5 * (1 - q)))
    assert n_loglik_poisbinom(0, 0.5, np.full((1, 2), 0.2), 1) == pytest.approx(np.log(1 - 0.5 * (1 - 0.64)))
