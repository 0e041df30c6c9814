import warnings

import numpy as np
import pytest

from qif.dynamics import simulate_protocol
from qif.filters import FilterSpec, ImpulseResponse, design, design_lowpass, modulate_bandpass
from qif.invariant import aux_from_impulse, fields_from_aux, lr_phase
from qif.response import (SignalSpec, SlowCarrierWarning, convolution_amplitude, deficit_spectrum,
                          first_order, magnus_predict, phase_law, second_order_amplitude,
                          second_order_deficit)


def test_first_order_vanishes_for_alpha_pi(qif_default):
    _, aux, f = qif_default
    p = first_order(aux, lr_phase(aux, f), SignalSpec("cosine", 1.35, 0, 0.05))
    assert p.A1 == 0.0 and p.sigma_z_shift == 0.0
    assert p.sz == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("freq", [0.9, 1.2, 1.35, 1.6])
def test_second_order_matches_simulation(qif_default, freq):
    _, aux, f = qif_default
    sig = SignalSpec("cosine", freq, 0.0, 0.02)
    exact = simulate_protocol(f, sig).sz - 1.0
    pred = second_order_deficit(aux, sig)
    assert pred == pytest.approx(exact, rel=2e-3, abs=1e-10)


def test_arcsin_amplitude_is_kernel_overlap(qif_default):
    # cos(beta) = h in arcsin mode, so A is the plain overlap with the kernel
    h, aux, _ = qif_default
    sig = SignalSpec("cosine", 1.35, 0.0, 1.0)
    a = second_order_amplitude(aux, sig)
    t = h.grid
    assert a == pytest.approx(np.trapezoid(sig.shape(t, 4.0) * h.samples, t), rel=1e-6)
    assert convolution_amplitude(h, sig) == pytest.approx(a, rel=1e-6)


def test_convolution_warns_for_asymmetric():
    h = design(FilterSpec())
    s = h.samples.copy()
    s[300] += 0.01
    with pytest.warns(UserWarning):
        convolution_amplitude(ImpulseResponse(s, h.duration), SignalSpec("cosine", 1.0, 0, 1.0))


def test_deficit_spectrum_vectorised(qif_default):
    _, aux, _ = qif_default
    fr = np.array([0.5, 1.35, 2.0])
    loop = [-second_order_deficit(aux, SignalSpec("cosine", x, 0, 0.05)) for x in fr]
    np.testing.assert_allclose(deficit_spectrum(aux, fr, 0.05), loop, rtol=1e-12, atol=1e-20)


def test_magnus_tracks_exact_amplitude_sweep(qif_default):
    _, aux, f = qif_default
    for d in (0.1, 0.5, 1.0, 1.5, 2.0):
        sig = SignalSpec("cosine", 1.35, 0.0, d)
        ex = 1 - simulate_protocol(f, sig).sz
        mg = magnus_predict(aux, sig).deficit
        assert mg == pytest.approx(ex, rel=0.02)


def test_magnus_zero_signal(qif_default):
    _, aux, _ = qif_default
    p = magnus_predict(aux, SignalSpec("cosine", 1.0, 0.0, 0.0))
    assert p.sz == 1.0 and p.magnus_z_abs == 0.0
    flat = SignalSpec("samples", amplitude=1.0, samples=np.zeros(5), duration=4.0)
    assert magnus_predict(aux, flat).magnus_gamma == 0.0


def test_phase_law_matches_simulation():
    spec = FilterSpec.make(1.35)
    theta = design_lowpass(spec)
    for phi in (0.3, 1.2, 2.0):
        mod = modulate_bandpass(theta, 1.35, phi)
        k = 0.9 / mod.peak
        h = ImpulseResponse(mod.samples * k, 4.0)
        aux = aux_from_impulse(h, dt=1e-3)
        sig = SignalSpec("sine", 1.35, 0.0, 0.03)
        exact = 1 - simulate_protocol(fields_from_aux(aux), sig).sz
        law = 0.5 * phase_law(ImpulseResponse(theta.samples * k, 4.0), 1.35, [phi], sig)[0]
        assert law == pytest.approx(exact, rel=5e-3)


def test_phase_law_slow_carrier_warns():
    theta = design_lowpass(FilterSpec())
    with pytest.warns(SlowCarrierWarning):
        phase_law(theta, 0.3, [0.5], SignalSpec("sine", 0.3, 0.0, 0.1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(ValueError):
            phase_law(theta, 1.0, [0.5], SignalSpec("cosine", 1.0, 0.0, 0.1))


def test_signal_spec_validation():
    with pytest.raises(ValueError):
        SignalSpec("square")
    with pytest.raises(ValueError):
        SignalSpec("cosine", 1.0, 0.0, -1.0)
    s = SignalSpec("samples", amplitude=2.0, samples=[0.0, 1.0], duration=2.0)
    assert s.value(1.0, 2.0) == pytest.approx(1.0)
    assert s.with_(amplitude=1.0).amplitude == 1.0
