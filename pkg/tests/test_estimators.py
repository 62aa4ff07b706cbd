import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mixshift.core import Memorization, PowerLaw
from mixshift.estimators import NumericMixer, PowerLawMixer, TransferMixer, WaterFillingMixer


def test_params_and_clone():
    est = PowerLawMixer(A=2.0, alpha=0.5, N=500)
    params = est.get_params()
    assert params["A"] == 2.0 and params["alpha"] == 0.5 and params["N"] == 500
    c = clone(est).set_params(N=10)
    assert c.N == 10 and est.N == 500


def test_not_fitted():
    with pytest.raises(NotFittedError):
        WaterFillingMixer().transform([[0.5, 0.5]])


def test_powerlaw_fit():
    est = PowerLawMixer(B=1e-6, N=10**5).fit([[0.9, 0.1]])
    np.testing.assert_allclose(est.q_star_, [0.75, 0.25], atol=1e-3)
    assert est.loss_ratio_ == pytest.approx(0.8, abs=1e-3)
    assert est.lambda_ > 0


def test_fit_averages_one_hot_rows():
    X = np.zeros((10, 2))
    X[:9, 0] = 1
    X[9, 1] = 1
    a = WaterFillingMixer(N=3).fit(X)
    b = WaterFillingMixer(N=3).fit([0.9, 0.1])
    np.testing.assert_allclose(a.q_star_, b.q_star_)


def test_water_filling_transform_and_predict():
    est = WaterFillingMixer(N=3).fit([[0.6, 0.3, 0.1]])
    assert est.K_N_ == 2
    Q = est.transform([[0.6, 0.3, 0.1], [1 / 3, 1 / 3, 1 / 3]])
    np.testing.assert_allclose(Q[1], [1 / 3] * 3)
    losses = est.predict([est.q_star_, [0.6, 0.3, 0.1]])
    assert losses[0] == pytest.approx(est.L_star_)
    assert losses[1] == pytest.approx(est.L_same_)
    with pytest.raises(ValueError):
        est.predict([[0.5, 0.5]])


def test_fit_transform():
    Q = WaterFillingMixer(N=2).fit_transform([[0.5, 0.5]])
    np.testing.assert_allclose(Q, [[0.5, 0.5]])


def test_transfer_mixer():
    est = TransferMixer(A0=1, B0=1, A1=1, B1=1e-6, alpha=1, N=10**5).fit([0.9, 0.1])
    np.testing.assert_allclose(est.q_star_, [0.75, 0.25], atol=1e-3)
    assert est.transfer_offset_ == pytest.approx(1 / (1e5 + 1))


def test_numeric_mixer_matches_water_fill():
    num = NumericMixer(curves=[Memorization()] * 3, N=3).fit([0.6, 0.3, 0.1])
    wf = WaterFillingMixer(N=3).fit([0.6, 0.3, 0.1])
    np.testing.assert_allclose(num.q_star_, wf.q_star_, atol=1e-3)
    assert num.L_star_ <= wf.L_star_ + 1e-6


def test_numeric_mixer_mixed_curves():
    est = NumericMixer(curves=[PowerLaw(1, 1, 1), Memorization()], N=50).fit([0.8, 0.2])
    assert est.L_star_ <= est.L_same_
