"""Analytic predictions of the perturbed final state.

The probe enters as ``V(t) = (delta/2) f_in(t) sz``. In the ``alpha == pi``
regime the first-order response vanishes and the leading effect is the
second-order deficit ``<sz> - 1 = -(delta^2/2) A^2`` with
``A = int f_in(s) cos(beta(s)) ds``; a first-order Magnus resummation
extends this to larger amplitudes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .filters import ImpulseResponse
from .invariant import AuxiliaryFields, LRPhase

__all__ = [
    "SignalSpec",
    "ResponsePrediction",
    "SlowCarrierWarning",
    "first_order",
    "second_order_amplitude",
    "second_order_deficit",
    "convolution_amplitude",
    "phase_law",
    "magnus_predict",
    "deficit_spectrum",
]

WAVEFORMS = ("cosine", "sine", "samples")


class SlowCarrierWarning(UserWarning):
    """The carrier completes too few cycles for the phase-law averaging to hold."""


@dataclass(frozen=True, eq=False)
class SignalSpec:
    """Deterministic probe ``delta * f_in(t)`` along z.

    Periodic probes are ``cos`` or ``sin`` of ``2 pi f t' + phase`` where
    ``t' = t - duration/2`` when ``centered`` (the default) and ``t' = t``
    otherwise. ``samples`` probes are given on a uniform grid spanning the
    protocol and interpolated linearly.
    """

    waveform: str = "cosine"
    frequency: float = 0.0
    phase: float = 0.0
    amplitude: float = 0.0
    samples: np.ndarray | None = None
    centered: bool = True
    duration: float | None = None

    def __post_init__(self):
        if self.waveform not in WAVEFORMS:
            raise ValueError(f"waveform must be one of {WAVEFORMS}")
        if not self.amplitude >= 0:
            raise ValueError("signal amplitude must be >= 0")
        if self.frequency < 0:
            raise ValueError("signal frequency must be >= 0")
        if self.waveform == "samples":
            if self.samples is None or self.duration is None:
                raise ValueError("sampled signals need both samples and duration")
            v = np.asarray(self.samples, dtype=float)
            if v.ndim != 1 or v.size < 2 or not np.all(np.isfinite(v)):
                raise ValueError("signal samples must be a finite 1-D array")
            object.__setattr__(self, "samples", v)

    def shape(self, t, duration: float) -> np.ndarray:
        """Unit-amplitude waveform ``f_in(t)``."""
        t = np.asarray(t, dtype=float)
        if self.waveform == "samples":
            grid = np.linspace(0.0, self.duration, self.samples.size)
            return np.interp(t, grid, self.samples)
        ts = t - 0.5 * duration if self.centered else t
        arg = 2 * np.pi * self.frequency * ts + self.phase
        return np.cos(arg) if self.waveform == "cosine" else np.sin(arg)

    def value(self, t, duration: float) -> np.ndarray:
        """Field ``delta * f_in(t)`` in rad/us."""
        return self.amplitude * self.shape(t, duration)

    def with_(self, **kw) -> "SignalSpec":
        d = dict(waveform=self.waveform, frequency=self.frequency, phase=self.phase,
                 amplitude=self.amplitude, samples=self.samples, centered=self.centered,
                 duration=self.duration)
        d.update(kw)
        return SignalSpec(**d)


@dataclass(frozen=True)
class ResponsePrediction:
    A1: float = 0.0
    A2: float = 0.0
    sigma_x_shift: float = 0.0
    sigma_y_shift: float = 0.0
    sigma_z_shift: float = 0.0
    magnus_z_abs: float = 0.0
    magnus_gamma: float = 0.0
    A_tilde: float = 0.0
    sz: float = 1.0

    @property
    def deficit(self) -> float:
        return 1.0 - self.sz


def _sin_alpha(aux: AuxiliaryFields) -> np.ndarray:
    return np.where(aux.alpha == np.pi, 0.0, np.sin(aux.alpha))


def _require_pi(aux: AuxiliaryFields, what: str):
    if not aux.alpha_is_pi:
        raise ValueError(f"{what} needs alpha == pi; use first_order with the propagator")


def first_order(aux: AuxiliaryFields, lr: LRPhase, signal: SignalSpec) -> ResponsePrediction:
    """First-order expectation shifts at the final time.

    ``A1 = int f_in sin(a) cos(b) ds`` drives the y and z shifts, so it is
    exactly zero when ``alpha == pi``.
    """
    t = aux.grid
    f = signal.shape(t, aux.duration)
    d = signal.amplitude
    sa, cb = _sin_alpha(aux), np.cos(aux.beta)
    a1 = float(trapezoid(f * sa * cb, t))
    dphi = lr.delta_phi - lr.delta_phi[0]
    root = np.sqrt(np.clip(1.0 - (sa * cb) ** 2, 0.0, None))
    sx = -d * float(trapezoid(f * root * np.sin(dphi), t))
    sy = d * a1 * np.cos(dphi[-1])
    sz = d * a1 * np.sin(dphi[-1])
    return ResponsePrediction(A1=a1, sigma_x_shift=sx, sigma_y_shift=float(sy),
                              sigma_z_shift=float(sz), sz=float(np.cos(dphi[-1]) + sz))


def second_order_amplitude(aux: AuxiliaryFields, signal: SignalSpec) -> float:
    """``A = int f_in(s) cos(beta(s)) ds`` (unit-amplitude probe)."""
    _require_pi(aux, "second-order amplitude")
    f = signal.shape(aux.grid, aux.duration)
    return float(trapezoid(f * np.cos(aux.beta), aux.grid))


def second_order_deficit(aux: AuxiliaryFields, signal: SignalSpec) -> float:
    """Predicted shift ``<sz> - 1 = -(delta^2/2) A^2`` (a non-positive number)."""
    a = second_order_amplitude(aux, signal)
    return -0.5 * signal.amplitude ** 2 * a * a


def convolution_amplitude(h: ImpulseResponse, signal: SignalSpec) -> float:
    """Filtered amplitude ``delta (f_in * h)(t_f)``.

    For a kernel symmetric about ``t_f/2`` this equals ``delta * A`` and the
    deficit is ``-conv^2 / 2``. Asymmetric kernels fall back to the direct
    integral ``delta int f_in h`` with a warning.
    """
    t = h.grid
    f = signal.shape(t, h.duration)
    if h.is_symmetric(atol=1e-12 * max(h.peak, 1e-300)):
        kern = h.samples[::-1]  # h(t_f - s) on the same grid
    else:
        warnings.warn("kernel is not time-symmetric; returning the direct overlap integral",
                      stacklevel=2)
        kern = h.samples
    return signal.amplitude * float(trapezoid(f * kern, t))


def phase_law(h_envelope: ImpulseResponse, f0: float, phases, signal: SignalSpec) -> np.ndarray:
    """Squared response ``delta^2 A(phi)^2`` of a sine probe versus filter phase.

    With kernel ``theta(t) cos(a + phi)``, ``a = 2 pi f0 t'``, and a probe
    ``sin(a)``, a symmetric envelope gives
    ``A(phi) = -sin(phi)/2 * (int theta - int theta cos 2a)``; the second
    integral averages away when the carrier is fast, leaving
    ``(delta/2 int theta)^2 sin^2 phi``.
    """
    phases = np.asarray(phases, dtype=float)
    dur = h_envelope.duration
    if f0 * dur < 2:
        warnings.warn(f"slow carrier (f0*t_f = {f0 * dur:.3g} < 2); the sin^2 law is approximate",
                      SlowCarrierWarning, stacklevel=2)
    if signal.waveform != "sine" or abs(signal.frequency - f0) > 1e-12:
        raise ValueError("phase law needs a sine probe at the filter centre frequency")
    t = h_envelope.grid
    a = 2 * np.pi * f0 * (t - 0.5 * dur)
    th = h_envelope.samples
    i0 = trapezoid(th, t)
    i2 = trapezoid(th * np.cos(2 * a), t)
    amp = -0.5 * np.sin(phases) * (i0 - i2)
    return signal.amplitude ** 2 * amp ** 2


def magnus_predict(aux: AuxiliaryFields, signal: SignalSpec) -> ResponsePrediction:
    """First-order Magnus resummation of the final ``<sz>``.

    ``|z| = (delta/2) sqrt(A^2 + At^2)``, ``gamma = atan2(A, At)`` and
    ``<sz> = 1 - (1 - cos 2 gamma) sin^2 |z|`` with ``At = int f_in sin(beta)``.
    """
    _require_pi(aux, "Magnus prediction")
    t = aux.grid
    f = signal.shape(t, aux.duration)
    a = float(trapezoid(f * np.cos(aux.beta), t))
    at = float(trapezoid(f * np.sin(aux.beta), t))
    z = 0.5 * signal.amplitude * np.hypot(a, at)
    g = 0.0 if a == 0.0 and at == 0.0 else float(np.arctan2(a, at))
    sz = 1.0 - (1.0 - np.cos(2 * g)) * np.sin(z) ** 2
    return ResponsePrediction(A2=a, A_tilde=at, magnus_z_abs=float(z), magnus_gamma=g,
                              sz=float(sz), sigma_z_shift=float(sz - 1.0))


def deficit_spectrum(aux: AuxiliaryFields, frequencies, amplitude: float,
                     waveform: str = "cosine", phase: float = 0.0) -> np.ndarray:
    """Second-order deficit ``(delta^2/2) A(f)^2`` for many probe frequencies at once."""
    _require_pi(aux, "deficit spectrum")
    t = aux.grid
    fr = np.asarray(frequencies, dtype=float)
    arg = 2 * np.pi * fr[:, None] * (t - 0.5 * aux.duration)[None, :] + phase
    shape = np.cos(arg) if waveform == "cosine" else np.sin(arg)
    a = trapezoid(shape * np.cos(aux.beta)[None, :], t, axis=1)
    return 0.5 * amplitude ** 2 * a * a
