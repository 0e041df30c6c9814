import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from qif.estimator import CPMGFilter, InvariantFilter


def test_params_roundtrip_and_clone():
    est = InvariantFilter(f0=2.0, cutoff=0.2)
    assert est.get_params()["f0"] == 2.0
    c = clone(est).set_params(peak=0.5)
    assert c.peak == 0.5 and est.peak == 0.9


def test_not_fitted():
    with pytest.raises(NotFittedError):
        InvariantFilter().transform(np.zeros((1, 4000)))


def test_transform_and_predict():
    est = InvariantFilter(dt=2e-3).fit()
    t = est.step_times()
    X = np.stack([np.zeros_like(t), 0.05 * np.cos(2 * np.pi * 1.35 * (t - 2))])
    out = est.transform(X)
    assert out.shape == (2, 3)
    assert est.predict(X)[0] == pytest.approx(1.0, abs=1e-12)
    d = est.deficit(X)[1]
    assert d == pytest.approx(est.frequency_response([1.35], 0.05)[0], rel=5e-3)


def test_fit_transform_shape_check():
    est = InvariantFilter(dt=4e-3)
    with pytest.raises(ValueError):
        est.fit_transform(np.zeros((2, 17)))
    with pytest.raises(ValueError):
        est.fit().transform(np.full((1, 1000), np.nan))


def test_invalid_params():
    with pytest.raises(ValueError):
        InvariantFilter(aux_mode="x").fit()
    with pytest.raises(ValueError):
        InvariantFilter(peak=1.0).fit()
    with pytest.raises(ValueError):
        CPMGFilter(n_pulses=0).fit()


def test_cpmg_estimator():
    est = CPMGFilter(n_pulses=4, dt=1e-3).fit()
    X = np.zeros(est.n_steps_)
    assert est.predict(X)[0] == pytest.approx(1.0, abs=1e-12)
    tf = est.frequency_response(np.linspace(0, 2, 41))
    assert tf.magnitude.shape == (41,)


def test_kernel_spectrum_peak():
    est = InvariantFilter(f0=1.8).fit()
    f = np.arange(0, 4.0001, 0.01)
    assert est.kernel_spectrum(f).peak_frequency() == pytest.approx(1.8, abs=0.01)
