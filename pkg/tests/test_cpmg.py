import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bloch, expm_propagate, rotation
from qif.cpmg import (PulseSequence, build_cpmg, cpmg_filter_response, sequence_to_trace,
                      simulate_sequence, toggling_function)
from qif.dynamics import propagate


def test_pulse_times():
    seq = build_cpmg(4, 4.0)
    np.testing.assert_allclose(seq.pulse_times, [0.5, 1.5, 2.5, 3.5])


def ideal_oracle(n, t_f, z, scale=1.0):
    """Explicit product of free evolution and rotation matrices."""
    seq = build_cpmg(n, t_f)
    m = len(z)
    dt = t_f / m
    t = (np.arange(m) + 0.5) * dt
    psi = rotation(scale * np.pi / 2) @ np.array([1, 0], complex)
    edges = [0.0, *seq.pulse_times, t_f]
    for k in range(n + 1):
        sel = (t > edges[k]) & (t < edges[k + 1])
        psi = expm_propagate(0.0, 0.0, z[sel], dt, psi)
        if k < n:
            psi = rotation(scale * np.pi) @ psi
    close = -np.pi / 2 if n % 2 == 0 else np.pi / 2
    return bloch(rotation(scale * close) @ psi)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_ideal_sequence_matches_oracle(n):
    rng = np.random.default_rng(n)
    z = rng.normal(scale=0.5, size=400)
    got = simulate_sequence(build_cpmg(n, 4.0), z[None, :], 0.01)[0]
    np.testing.assert_allclose(got, ideal_oracle(n, 4.0, z), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 8])
def test_noise_free_returns_ground(n):
    assert simulate_sequence(build_cpmg(n, 4.0))[0, 2] == pytest.approx(1.0, abs=1e-13)


def test_static_detuning_refocused():
    z = np.full((1, 4000), 0.7)
    assert simulate_sequence(build_cpmg(2, 4.0), z)[0, 2] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("s", [0.8, 0.9, 1.1])
def test_scale_error_accumulates(s):
    # with all-x pulses the rotations add up to s*n*pi
    got = simulate_sequence(build_cpmg(8, 4.0, scale=s))[0, 2]
    assert got == pytest.approx(np.cos(s * 8 * np.pi), abs=1e-12)


def test_finite_width_converges_to_ideal():
    z = 0.3 * np.cos(2 * np.pi * 0.5 * (np.arange(4000) + 0.5) * 1e-3)[None, :]
    ideal = simulate_sequence(build_cpmg(4, 4.0), z)[0]
    narrow = simulate_sequence(build_cpmg(4, 4.0, width=0.004), z)[0]
    wide = simulate_sequence(build_cpmg(4, 4.0, width=0.04), z)[0]
    assert np.linalg.norm(narrow - ideal) < np.linalg.norm(wide - ideal) < 0.05


def test_cpmg32_finite_width_at_reduced_drive():
    assert simulate_sequence(build_cpmg(32, 4.0, width=0.02, scale=0.8))[0, 2] < 0.9


def test_trace_path_matches_batch():
    seq = build_cpmg(3, 2.0, width=0.02)
    res = propagate(sequence_to_trace(seq, 1e-3))
    np.testing.assert_allclose(res.expectations, simulate_sequence(seq)[0], atol=1e-12)


def test_toggling_function_signs():
    seq = build_cpmg(2, 4.0)
    np.testing.assert_allclose(toggling_function(seq, [0.5, 2.0, 3.5]), [1, -1, 1], atol=1e-15)


def test_filter_response_matches_toggling_transform():
    seq = build_cpmg(4, 4.0)
    f = np.linspace(0, 3, 61)
    tf = cpmg_filter_response(seq, f, 1e-3)
    np.testing.assert_allclose(tf.magnitude, np.abs(tf.reference), atol=1e-6)
    # frozen from the analytic transform: the CPMG-4 lobe sits at 0.52 MHz
    fine = np.arange(0, 4.0001, 0.0005)
    t = (np.arange(4000) + 0.5) * 1e-3
    y = toggling_function(seq, t)
    mag = np.abs(np.exp(-2j * np.pi * fine[:, None] * (t - 2.0)) @ y) * 1e-3
    assert fine[np.argmax(mag)] == pytest.approx(0.5205, abs=0.001)


@pytest.mark.parametrize("kw", [dict(n=0, t_f=4.0), dict(n=4, t_f=4.0, width=1.0)])
def test_build_validation(kw):
    with pytest.raises(ValueError):
        build_cpmg(**kw)


def test_sequence_roundtrip():
    seq = build_cpmg(5, 3.0, width=0.01, scale=0.9)
    back = PulseSequence.from_json(seq.to_json())
    np.testing.assert_array_equal(back.pulse_times, seq.pulse_times)
    assert back.amplitude_scale == 0.9 and back.pulse_width == 0.01


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 16), dz=st.floats(-2, 2))
def test_static_detuning_refocused_property(n, dz):
    # any pi-pulse train refocuses a constant detuning when pulses are equally spaced
    seq = build_cpmg(n, 1.6)
    assert simulate_sequence(seq, np.full((1, 1600), dz))[0, 2] == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(n=st.sampled_from([2, 4, 8, 16, 32]), e1=st.floats(0, 1), e2=st.floats(0, 1),
       sign=st.sampled_from([-1, 1]))
def test_fidelity_degrades_monotonically_near_nominal(n, e1, e2, sign):
    # within |1 - s| <= 1/n the accumulated over-rotation stays below pi
    a, b = sorted((e1 / n, e2 / n))
    za = simulate_sequence(build_cpmg(n, 1.6, scale=1 + sign * a), None, 0.01)[0, 2]
    zb = simulate_sequence(build_cpmg(n, 1.6, scale=1 + sign * b), None, 0.01)[0, 2]
    assert zb <= za + 1e-12
