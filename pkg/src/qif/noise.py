"""Seeded dephasing noise along z.

Three models are available: band-limited ``1/f^alpha`` noise from spectral
synthesis, Ornstein-Uhlenbeck noise from its exact discrete update, and white
noise. Trace ``k`` of a model is drawn from the stream
``SeedSequence([seed, k])``, so traces never depend on which worker made them.
Values hold one sample per propagation step (piecewise constant).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .filters import TransferFunction

__all__ = ["NoiseModel", "NoiseTrace", "synthesize", "synthesize_batch", "psd_estimate", "KINDS"]

KINDS = ("one_over_f", "ornstein_uhlenbeck", "white")


@dataclass(frozen=True)
class NoiseModel:
    """Parameters of a stationary dephasing process.

    ``rms_amplitude`` is in rad/us; ``f_low``/``f_high`` (MHz) bound the
    synthesised band of 1/f noise; ``correlation_time`` (us) applies to OU.
    """

    kind: str = "one_over_f"
    rms_amplitude: float = 0.0
    exponent: float = 1.0
    f_low: float = 0.01
    f_high: float = 10.0
    correlation_time: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"noise kind must be one of {KINDS}")
        if not self.rms_amplitude >= 0:
            raise ValueError("rms_amplitude must be >= 0")
        if self.kind == "one_over_f" and not (0 < self.f_low < self.f_high):
            raise ValueError("1/f noise needs 0 < f_low < f_high")
        if self.kind == "ornstein_uhlenbeck" and not self.correlation_time > 0:
            raise ValueError("correlation_time must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown noise fields: {sorted(unknown)}")
        return cls(**known)


@dataclass(frozen=True, eq=False)
class NoiseTrace:
    grid: np.ndarray
    values: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_us", "noise_rad_per_us"])
        for t, v in zip(self.grid, self.values):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()


def _rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def _one_over_f(model: NoiseModel, n: int, dt: float, rng) -> np.ndarray:
    # synthesise on a record long enough to contain f_low, then keep the head
    m = max(n, math.ceil(2.0 / (model.f_low * dt)))
    m += m % 2
    f = np.fft.rfftfreq(m, dt)
    amp = np.zeros_like(f)
    band = (f >= model.f_low) & (f <= model.f_high)
    band[0] = band[-1] = False
    amp[band] = f[band] ** (-model.exponent / 2)
    var = 2.0 * np.sum(amp ** 2) / m ** 2
    if var == 0:
        raise ValueError("no frequency bins between f_low and f_high for this record")
    spec = np.zeros(f.size, dtype=complex)
    spec[band] = amp[band] * np.exp(1j * rng.uniform(0.0, 2 * np.pi, int(band.sum())))
    x = np.fft.irfft(spec, m)
    return x[:n] * (model.rms_amplitude / math.sqrt(var))


def _ou(model: NoiseModel, n: int, dt: float, rng) -> np.ndarray:
    # x[j] = r x[j-1] + sqrt(1 - r^2) xi[j], started from the stationary law
    xi = rng.standard_normal(n)
    r = math.exp(-dt / model.correlation_time)
    u = math.sqrt(1.0 - r * r) * xi
    u[0] = xi[0]
    return model.rms_amplitude * lfilter([1.0], [1.0, -r], u)


def synthesize(model: NoiseModel, duration: float, dt: float, trial: int = 0,
               seed: int | None = None) -> NoiseTrace:
    """One noise realisation with ``round(duration/dt)`` samples.

    ``seed`` overrides ``model.seed``. The trace is linear in
    ``rms_amplitude`` for a fixed stream.

    Raises
    ------
    ValueError
        If the step cannot resolve ``f_high`` (``2 dt > 1/f_high``).
    """
    n = int(round(duration / dt))
    if n < 1:
        raise ValueError("duration must span at least one step")
    if model.kind == "one_over_f" and 2 * dt * model.f_high > 1 + 1e-12:
        raise ValueError(f"dt={dt} us cannot resolve f_high={model.f_high} MHz (need 2 dt f_high <= 1)")
    grid = dt * np.arange(n)
    if model.rms_amplitude == 0:
        return NoiseTrace(grid, np.zeros(n))
    rng = _rng(model.seed if seed is None else seed, trial)
    if model.kind == "one_over_f":
        v = _one_over_f(model, n, dt, rng)
    elif model.kind == "ornstein_uhlenbeck":
        v = _ou(model, n, dt, rng)
    else:
        v = model.rms_amplitude * rng.standard_normal(n)
    return NoiseTrace(grid, v)


def synthesize_batch(model: NoiseModel, duration: float, dt: float, trials: Sequence[int],
                     seed: int | None = None) -> np.ndarray:
    """Stack of traces for the given trial indices, shape ``(len(trials), n)``."""
    return np.stack([synthesize(model, duration, dt, k, seed).values for k in trials])


def psd_estimate(traces: Sequence[NoiseTrace]) -> TransferFunction:
    """Averaged one-sided periodogram (units of value^2 per MHz).

    Needs at least ten traces of equal length and step.
    """
    traces = list(traces)
    if len(traces) < 10:
        raise ValueError("psd_estimate needs at least 10 traces")
    n = traces[0].values.size
    if any(tr.values.size != n for tr in traces):
        raise ValueError("traces must share a length")
    dt = float(traces[0].grid[1] - traces[0].grid[0])
    x = np.stack([tr.values for tr in traces])
    p = np.abs(np.fft.rfft(x, axis=1)) ** 2 * (2.0 * dt / n)
    return TransferFunction(np.fft.rfftfreq(n, dt), p.mean(axis=0))
