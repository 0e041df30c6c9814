"""Estimator-style wrappers around the filter protocols.

Both classes follow the scikit-learn conventions: constructor arguments are
stored verbatim, :meth:`fit` builds the protocol, and :meth:`transform` maps
a batch of z-perturbation traces (rows sampled at step midpoints) to final
Bloch vectors. ``predict`` returns the final ``<sz>``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_choice, check_is_fitted, check_positive, check_signals
from .cpmg import build_cpmg, cpmg_filter_response, simulate_sequence
from .dynamics import StepConfig, simulate_batch
from .filters import FilterSpec, design, transfer_function
from .invariant import MODES, aux_from_impulse, fields_from_aux
from .response import deficit_spectrum

__all__ = ["InvariantFilter", "CPMGFilter"]


class _ProtocolMixin:
    def _steps(self):
        n = int(round(self.duration / self.dt))
        if n < 1 or abs(n * self.dt - self.duration) > 1e-9 * self.duration:
            raise ValueError("dt must divide duration")
        return n

    def step_times(self) -> np.ndarray:
        """Midpoints of the propagation steps, where ``X`` is sampled."""
        n = self._steps()
        return (np.arange(n) + 0.5) * (self.duration / n)

    def predict(self, X) -> np.ndarray:
        return self.transform(X)[:, 2]

    def deficit(self, X) -> np.ndarray:
        """``1 - <sz>`` for each row of ``X``."""
        return 1.0 - self.predict(X)


class InvariantFilter(_ProtocolMixin, TransformerMixin, BaseEstimator):
    """Single- or multi-band invariant-based filter.

    Parameters
    ----------
    f0 : float or sequence of float
        Pass-band centre(s) in MHz.
    cutoff : float
        Low-pass envelope cutoff in MHz.
    duration : float
        Protocol length in microseconds.
    phase : float
        Carrier phase in radians.
    peak : float
        Kernel peak after normalisation, strictly inside (0, 1).
    aux_mode : {'exact_arcsin', 'simplified'}
    dt : float
        Propagation step in microseconds.
    scale : float
        Multiplier on the transverse drive (1 is nominal).
    """

    def __init__(self, f0=1.35, cutoff=0.125, duration=4.0, phase=0.0, peak=0.9,
                 aux_mode="exact_arcsin", window="tukey", dt=1e-3, scale=1.0):
        self.f0 = f0
        self.cutoff = cutoff
        self.duration = duration
        self.phase = phase
        self.peak = peak
        self.aux_mode = aux_mode
        self.window = window
        self.dt = dt
        self.scale = scale

    def fit(self, X=None, y=None):
        check_choice(self.aux_mode, "aux_mode", MODES)
        check_positive(self.duration, "duration")
        check_positive(self.dt, "dt")
        check_positive(self.scale, "scale")
        if not 0 < self.peak < 1:
            raise ValueError("peak must lie in (0, 1)")
        self.spec_ = FilterSpec.make(self.f0, phase=self.phase, cutoff=self.cutoff,
                                     duration=self.duration, window=self.window)
        self.kernel_ = design(self.spec_, self.peak)
        self.aux_ = aux_from_impulse(self.kernel_, self.aux_mode, dt=self.dt)
        self.fields_ = fields_from_aux(self.aux_)
        self.n_steps_ = self._steps()
        if X is not None:
            check_signals(X, self.n_steps_)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "fields_")
        X = check_signals(X, self.n_steps_)
        return simulate_batch(self.fields_, X, StepConfig(dt=self.dt), scale=self.scale)

    def frequency_response(self, frequencies, amplitude: float = 0.05) -> np.ndarray:
        """Predicted second-order deficit for a cosine probe at each frequency."""
        check_is_fitted(self, "aux_")
        return deficit_spectrum(self.aux_, frequencies, amplitude)

    def kernel_spectrum(self, frequencies):
        check_is_fitted(self, "kernel_")
        return transfer_function(self.kernel_, frequencies)


class CPMGFilter(_ProtocolMixin, TransformerMixin, BaseEstimator):
    """Equally spaced pi-pulse train framed by pi/2 rotations.

    Parameters
    ----------
    n_pulses : int
    duration : float
        Total length in microseconds.
    width : float
        Pulse width in microseconds (0 for instantaneous pulses).
    scale : float
        Multiplier on every rotation angle.
    dt : float
        Propagation step in microseconds.
    """

    def __init__(self, n_pulses=8, duration=4.0, width=0.0, scale=1.0, dt=1e-3):
        self.n_pulses = n_pulses
        self.duration = duration
        self.width = width
        self.scale = scale
        self.dt = dt

    def fit(self, X=None, y=None):
        if isinstance(self.n_pulses, bool) or int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ValueError("n_pulses must be a positive integer")
        check_positive(self.dt, "dt")
        check_positive(self.width, "width", allow_zero=True)
        self.sequence_ = build_cpmg(int(self.n_pulses), self.duration, self.width, self.scale)
        self.n_steps_ = self._steps()
        if X is not None:
            check_signals(X, self.n_steps_)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "sequence_")
        X = check_signals(X, self.n_steps_)
        return simulate_sequence(self.sequence_, X, self.duration / self.n_steps_)

    def frequency_response(self, frequencies, probe_amplitude: float = 0.01):
        check_is_fitted(self, "sequence_")
        return cpmg_filter_response(self.sequence_, frequencies, probe_amplitude, self.dt)
