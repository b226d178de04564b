import numpy as np
import pytest

from gcr.posthoc import make_grid
from gcr.scr import ScrChain, _reflect, fit_scr, scr_predict_map
from gcr.simulate import SimConfig, simulate


def test_reflect_stays_inside():
    x = np.array([-0.3, 0.5, 1.2, 2.7])
    r = _reflect(x, 0.0, 1.0)
    assert np.all((r >= 0) & (r <= 1))
    assert np.allclose(r, [0.3, 0.5, 0.8, 0.7])


@pytest.fixture(scope="module")
def single_center_fit():
    cfg = SimConfig(seed=3, ac_lambda=1e-9)
    traps, data, truth = simulate(cfg)
    return traps, data, truth, fit_scr(data, traps, 0.5, 200, 4000, seed=1)


def test_scr_chain_shapes_and_bounds(single_center_fit):
    traps, data, truth, ch = single_center_fit
    assert len(ch) == 3200 and ch.centers.shape == (3200, data.n, 2)
    assert np.all(ch.N >= data.n) and np.all(ch.N <= 200)
    lo_x, hi_x, lo_y, hi_y = ch.region
    assert np.all((ch.centers[..., 0] >= lo_x) & (ch.centers[..., 0] <= hi_x))
    assert np.all(ch.beta < 0)
    for k, v in ch.acceptance.items():
        assert 0.05 < v < 0.95, k


def test_scr_recovers_centres(single_center_fit):
    traps, data, truth, ch = single_center_fit
    est = ch.centers.mean(axis=0)
    true = np.array([truth.centers[i][0] for i in truth.observed])
    assert np.median(np.linalg.norm(est - true, axis=1)) < 0.1


def test_scr_psi_conditional_is_conjugate(single_center_fit):
    *_, ch = single_center_fit
    # E[psi | N] = (1 + N) / (2 + M) under a uniform prior
    assert ch.psi.mean() == pytest.approx(((1 + ch.N) / 202).mean(), abs=0.01)


def test_scr_flat_map_without_distance_effect():
    K = 10
    ch = ScrChain(np.full(K, -1.0), np.zeros(K), np.full(K, 0.2), np.full(K, 5),
                  np.random.default_rng(0).uniform(0, 1, (K, 1, 2)), ("1",), (0, 1, 0, 1), {}, 0)
    sites, shape = make_grid((0, 1, 0, 1), 5)
    m = scr_predict_map(ch, 0, sites, shape)
    assert np.allclose(m.mean_p, 1 - np.exp(-np.exp(-1.0)))
    assert np.allclose(m.utilization, 1 / 25)


def test_scr_deterministic():
    traps, data, _ = simulate(SimConfig(seed=5))
    a = fit_scr(data, traps, 0.5, 100, 300, seed=2)
    b = fit_scr(data, traps, 0.5, 100, 300, seed=2)
    assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.centers, b.centers)
    with pytest.raises(ValueError):
        fit_scr(data, traps, 0.5, data.n, 10, seed=0)


@pytest.mark.slow
def test_scr_abundance_coverage():
    hits = 0
    for rep in range(20):
        cfg = SimConfig(seed=1000 + rep, ac_lambda=1e-9, M=150)
        traps, data, truth = simulate(cfg)
        ch = fit_scr(data, traps, 0.5, 150, 3000, seed=rep)
        lo, hi = np.quantile(ch.N, [0.025, 0.975])
        hits += lo <= truth.N <= hi
    assert hits >= 16
