import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gcr import GCRAbundance, SCRAbundance
from gcr.simulate import SimConfig, simulate


@pytest.fixture(scope="module")
def sim():
    traps, data, truth = simulate(SimConfig(seed=112))
    return traps.locations, np.asarray(data.counts), truth


def test_params_roundtrip():
    est = GCRAbundance(M=150, K=1000)
    assert est.get_params()["M"] == 150
    c = clone(est).set_params(K1=800)
    assert c.K1 == 800 and c.M == 150


def test_gcr_fit_and_predict(sim):
    traps, Y, _ = sim
    est = GCRAbundance(n_crn=128, theta_grid_size=4, K1=400, K=500, random_state=3).fit(Y, traps, 5)
    s = est.abundance_summary()
    assert s["q025"] >= Y.shape[0]
    p = est.predict(traps[:5], individual=0, n_draws=4, n_iter=10)
    assert p.shape == (5,) and np.all((p >= 0) & (p <= 1))
    again = GCRAbundance(n_crn=128, theta_grid_size=4, K1=400, K=500, random_state=3).fit(Y, traps, 5)
    assert np.array_equal(est.abundance_.N, again.abundance_.N)


def test_gcr_input_validation(sim):
    traps, Y, _ = sim
    with pytest.raises(ValueError):
        GCRAbundance().fit(Y[:, :10], traps, 5)
    with pytest.raises(ValueError):
        GCRAbundance().fit(Y + 0.5, traps, 5)
    with pytest.raises(NotFittedError):
        GCRAbundance().abundance_summary()


def test_scr_estimator(sim):
    traps, Y, _ = sim
    est = SCRAbundance(K=300, random_state=1).fit(Y, traps, 5)
    assert est.predict(traps, individual=2).shape == (64,)
    assert est.abundance_summary()["mean"] >= Y.shape[0]
