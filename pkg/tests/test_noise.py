import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qif.noise import NoiseModel, NoiseTrace, psd_estimate, synthesize, synthesize_batch


def test_one_over_f_rms_and_slope():
    m = NoiseModel("one_over_f", 0.7, seed=11)
    traces = [synthesize(m, 4.0, 1e-3, k) for k in range(300)]
    rms = np.sqrt(np.mean([np.mean(t.values ** 2) for t in traces]))
    assert rms == pytest.approx(0.7, rel=0.05)
    psd = psd_estimate(traces)
    sel = (psd.frequencies >= 0.5) & (psd.frequencies <= 10)
    slope = np.polyfit(np.log(psd.frequencies[sel]), np.log(psd.values[sel]), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.15)


def test_ou_autocorrelation():
    m = NoiseModel("ornstein_uhlenbeck", 1.0, correlation_time=0.5, seed=2)
    x = synthesize_batch(m, 20.0, 0.01, range(200))
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0, rel=0.05)
    lag = 50  # one correlation time
    c = np.mean(x[:, :-lag] * x[:, lag:])
    assert c == pytest.approx(np.exp(-1), abs=0.05)


def test_white_trials_uncorrelated():
    m = NoiseModel("white", 1.0, seed=5)
    a, b = synthesize(m, 4.0, 1e-3, 0).values, synthesize(m, 4.0, 1e-3, 1).values
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.06


def test_streams_are_reproducible_and_distinct():
    m = NoiseModel("one_over_f", 1.0, seed=9)
    a = synthesize(m, 2.0, 1e-3, 3).values
    np.testing.assert_array_equal(a, synthesize(m, 2.0, 1e-3, 3).values)
    assert not np.array_equal(a, synthesize(m, 2.0, 1e-3, 4).values)
    assert not np.array_equal(a, synthesize(m, 2.0, 1e-3, 3, seed=10).values)


def test_zero_rms_is_zero():
    t = synthesize(NoiseModel("one_over_f", 0.0), 1.0, 1e-3)
    assert not np.any(t.values)


def test_unresolvable_band_rejected():
    with pytest.raises(ValueError):
        synthesize(NoiseModel("one_over_f", 1.0, f_high=10), 1.0, 0.1)


@pytest.mark.parametrize("kw", [dict(kind="pink"), dict(rms_amplitude=-1), dict(f_low=5, f_high=1),
                                dict(kind="ornstein_uhlenbeck", correlation_time=0)])
def test_model_validation(kw):
    with pytest.raises(ValueError):
        NoiseModel(**kw)


def test_model_dict_roundtrip():
    m = NoiseModel("white", 0.2, seed=3)
    assert NoiseModel.from_dict(m.to_dict()) == m
    with pytest.raises(ValueError):
        NoiseModel.from_dict({"kind": "white", "colour": 1})


def test_psd_needs_ten_traces():
    with pytest.raises(ValueError):
        psd_estimate([NoiseTrace(np.arange(4.0), np.zeros(4))] * 9)


@settings(max_examples=15, deadline=None)
@given(rms=st.floats(0.01, 5.0), k=st.integers(0, 1000))
def test_linear_in_rms(rms, k):
    base = synthesize(NoiseModel("one_over_f", 1.0, seed=1), 1.0, 1e-2, k).values
    got = synthesize(NoiseModel("one_over_f", rms, seed=1), 1.0, 1e-2, k).values
    np.testing.assert_allclose(got, rms * base, rtol=1e-12, atol=1e-15)
