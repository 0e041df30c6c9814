"""FIR impulse-response design for invariant-based filters.

Kernels live on a uniform grid over ``[0, duration]`` (microseconds) and
always vanish at both edges, which is what the invariant boundary
conditions need. Frequencies are in MHz (cycles per microsecond).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.signal import windows as _windows

__all__ = [
    "Center",
    "FilterSpec",
    "ImpulseResponse",
    "TransferFunction",
    "WINDOWS",
    "DEFAULT_PEAK",
    "design_lowpass",
    "modulate_bandpass",
    "combine_multiband",
    "normalize_kernel",
    "design",
    "evaluate",
    "derivative",
    "transfer_function",
    "design_from_spectrum",
]

DEFAULT_PEAK = 0.9
DEFAULT_SAMPLE_RATE = 250.0  # samples/us, 4 ns grid
DEFAULT_TAPER = 0.5

KINDS = ("lowpass", "bandpass", "multiband")
# Hamming is deliberately absent: its 0.08 pedestal leaves the kernel edges
# nonzero, which the invariant boundary conditions cannot tolerate.
WINDOWS = ("tukey", "hann", "blackman", "cosine")


def _window(name: str, n: int, taper: float = DEFAULT_TAPER) -> np.ndarray:
    if name == "tukey":
        w = _windows.tukey(n, taper, sym=True)
    elif name == "hann":
        w = _windows.hann(n, sym=True)
    elif name == "blackman":
        w = _windows.blackman(n, sym=True)
    elif name == "cosine":
        w = np.concatenate(([0.0], np.sin(np.pi * np.arange(1, n - 1) / (n - 1)), [0.0]))
    else:
        raise ValueError(f"unknown window {name!r}; expected one of {WINDOWS}")
    w = 0.5 * (w + w[::-1])
    if abs(w[0]) > 1e-12:
        raise ValueError(f"window {name!r} does not vanish at its edges")
    w[0] = w[-1] = 0.0
    return w


@dataclass(frozen=True)
class Center:
    """One pass band: carrier frequency (MHz), carrier phase (rad), weight."""

    f0: float
    phase: float = 0.0
    weight: float = 1.0


@dataclass(frozen=True)
class FilterSpec:
    """Parameters of an FIR filter design.

    ``duration`` must equal ``(taps - 1) / sample_rate`` to within one grid
    step; the grid itself is built from ``duration`` and ``taps`` so that the
    last sample sits exactly at ``duration``.
    """

    kind: str = "bandpass"
    centers: tuple[Center, ...] = (Center(1.35),)
    cutoff: float = 0.125
    duration: float = 4.0
    taps: int = 1001
    sample_rate: float = DEFAULT_SAMPLE_RATE
    window: str = "tukey"

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(
            c if isinstance(c, Center) else
            (Center(float(c)) if np.isscalar(c) else Center(*c)) for c in self.centers))
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.window not in WINDOWS:
            raise ValueError(f"window must be one of {WINDOWS}, got {self.window!r}")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("duration and sample_rate must be positive")
        if int(self.taps) != self.taps or self.taps < 3 or self.taps % 2 == 0:
            raise ValueError(f"taps must be an odd integer >= 3, got {self.taps}")
        if any(c.f0 < 0 for c in self.centers):
            raise ValueError("center frequencies must be non-negative")
        if abs(self.duration - (self.taps - 1) / self.sample_rate) > 1.0 / self.sample_rate:
            raise ValueError(
                f"duration {self.duration} us inconsistent with taps={self.taps} "
                f"at sample_rate={self.sample_rate}/us")
        if self.kind == "bandpass" and len(self.centers) != 1:
            raise ValueError("bandpass filters take exactly one center")
        if self.kind == "multiband" and len(self.centers) < 1:
            raise ValueError("multiband filters need at least one center")

    @classmethod
    def make(cls, centers: float | Sequence = 1.35, *, phase: float = 0.0,
             cutoff: float = 0.125, duration: float = 4.0,
             sample_rate: float = DEFAULT_SAMPLE_RATE, window: str = "tukey",
             kind: str | None = None) -> "FilterSpec":
        """Build a spec from a duration, deriving an odd tap count."""
        if np.isscalar(centers):
            cs = (Center(float(centers), phase),)
        else:
            cs = tuple(c if isinstance(c, Center) else
                       (Center(*c) if isinstance(c, (tuple, list)) else Center(float(c), phase))
                       for c in centers)
        taps = int(round(duration * sample_rate)) + 1
        if taps % 2 == 0:
            taps += 1
        sample_rate = (taps - 1) / duration
        if kind is None:
            kind = "bandpass" if len(cs) == 1 else "multiband"
        return cls(kind=kind, centers=cs, cutoff=cutoff, duration=duration,
                   taps=taps, sample_rate=sample_rate, window=window)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.taps)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "centers": [{"f0_mhz": c.f0, "phase_rad": c.phase, "weight": c.weight}
                        for c in self.centers],
            "cutoff_mhz": self.cutoff,
            "duration_us": self.duration,
            "taps": self.taps,
            "sample_rate_per_us": self.sample_rate,
            "window": self.window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterSpec":
        centers = tuple(Center(float(c["f0_mhz"]), float(c.get("phase_rad", 0.0)),
                               float(c.get("weight", 1.0)))
                        for c in d.get("centers", []))
        duration = float(d.get("duration_us", 4.0))
        sample_rate = float(d.get("sample_rate_per_us", DEFAULT_SAMPLE_RATE))
        taps = d.get("taps")
        if taps is None:
            taps = int(round(duration * sample_rate)) + 1
            taps += 1 - taps % 2
        kind = d.get("kind", "bandpass" if len(centers) == 1 else "multiband")
        return cls(kind=kind, centers=centers, cutoff=float(d.get("cutoff_mhz", 0.125)),
                   duration=duration, taps=int(taps), sample_rate=sample_rate,
                   window=d.get("window", "tukey"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FilterSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    """A real filter kernel sampled on ``linspace(0, duration, len(samples))``."""

    samples: np.ndarray
    duration: float
    spec: FilterSpec | None = None
    warnings: tuple[str, ...] = ()
    _interp: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        s.setflags(write=False)
        if s.ndim != 1 or s.size < 3:
            raise ValueError("samples must be a 1-D array of at least 3 values")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        if s[0] != 0.0 or s[-1] != 0.0:
            raise ValueError("impulse response must vanish at both endpoints")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "_interp", PchipInterpolator(self.grid, s, extrapolate=False))

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.samples.size)

    @property
    def dt(self) -> float:
        return self.duration / (self.samples.size - 1)

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def is_symmetric(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.samples - self.samples[::-1]) <= atol))

    def __call__(self, t):
        return evaluate(self, t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_us", "h"])
        for t, h in zip(self.grid, self.samples):
            w.writerow([repr(float(t)), repr(float(h))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ImpulseResponse":
        rows = list(csv.DictReader(io.StringIO(text)))
        t = np.array([float(r["t_us"]) for r in rows])
        return cls(np.array([float(r["h"]) for r in rows]), float(t[-1]))


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Complex spectrum on a frequency grid (MHz).

    ``values`` is the Fourier transform taken about the kernel midpoint, so a
    time-symmetric kernel gives a real spectrum. ``cosine`` holds the cosine
    projection when it was computed. ``reference`` carries an independent
    cross-check curve (e.g. an analytic filter function) when one exists.
    """

    frequencies: np.ndarray
    values: np.ndarray
    cosine: np.ndarray | None = None
    reference: np.ndarray | None = None

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def magnitude_squared(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def peak_frequency(self) -> float:
        return float(self.frequencies[np.argmax(np.abs(self.values))])


def _lowpass_taps(spec: FilterSpec, taper: float = DEFAULT_TAPER) -> np.ndarray:
    n = spec.taps
    k = np.abs(np.arange(n) - (n - 1) // 2)
    dt = spec.duration / (n - 1)
    fc = spec.cutoff
    h = 2.0 * fc * dt * np.sinc(2.0 * fc * dt * k) * _window(spec.window, n, taper)
    h[0] = h[-1] = 0.0
    return h / h.sum()


def design_lowpass(spec: FilterSpec) -> ImpulseResponse:
    """Windowed-sinc low-pass prototype with unit DC gain.

    Raises
    ------
    ValueError
        If the cutoff is at or above the Nyquist frequency of the grid.
    """
    nyquist = 0.5 * (spec.taps - 1) / spec.duration
    if spec.cutoff >= nyquist:
        raise ValueError(f"cutoff {spec.cutoff} MHz must be below Nyquist ({nyquist} MHz)")
    lp = replace(spec, kind="lowpass", centers=())
    return ImpulseResponse(_lowpass_taps(lp), spec.duration, lp)


def _carrier(duration: float, n: int, f0: float, phase: float) -> np.ndarray:
    k = np.arange(n) - (n - 1) // 2
    a = 2.0 * np.pi * f0 * (k * (duration / (n - 1)))
    # expand the phase so that phi = 0 or pi keeps exact time symmetry
    c, s = np.cos(phase), np.sin(phase)
    c = 0.0 if abs(c) < 1e-15 else c
    s = 0.0 if abs(s) < 1e-15 else s
    out = c * np.cos(a)
    if s:
        out = out - s * np.sin(a)
    return out


def modulate_bandpass(theta: ImpulseResponse, f0: float, phase: float = 0.0) -> ImpulseResponse:
    """Shift a low-pass prototype to ``f0`` with a cosine carrier centred in time."""
    h = theta.samples * _carrier(theta.duration, theta.samples.size, f0, phase)
    spec = None
    if theta.spec is not None:
        spec = replace(theta.spec, kind="bandpass", centers=(Center(f0, phase),))
    return ImpulseResponse(h, theta.duration, spec)


def combine_multiband(spec: FilterSpec) -> ImpulseResponse:
    """Sum of weighted carriers over one shared low-pass envelope, divided by
    the number of bands. Bands closer than twice the cutoff are flagged in
    ``warnings`` rather than rejected."""
    if not spec.centers:
        raise ValueError("multiband design needs at least one center")
    theta = design_lowpass(spec)
    n = theta.samples.size
    carriers = sum(c.weight * _carrier(spec.duration, n, c.f0, c.phase) for c in spec.centers)
    h = theta.samples * carriers / len(spec.centers)
    notes = []
    f = sorted(c.f0 for c in spec.centers)
    for a, b in zip(f, f[1:]):
        if 0 < b - a < 2 * spec.cutoff:
            notes.append(f"overlapping bands at {a} and {b} MHz")
    return ImpulseResponse(h, spec.duration, replace(spec, kind="multiband"), tuple(notes))


def normalize_kernel(h: ImpulseResponse, target_peak: float = DEFAULT_PEAK) -> ImpulseResponse:
    """Rescale so that ``max |h| == target_peak`` exactly."""
    if not 0.0 < target_peak < 1.0:
        raise ValueError("target_peak must lie in (0, 1)")
    s = h.samples
    i = int(np.argmax(np.abs(s)))
    if s[i] == 0.0:
        raise ValueError("cannot normalize an all-zero kernel")
    out = s * (target_peak / abs(s[i]))
    # pin every sample that attained the peak so the maximum is exact
    hit = np.abs(np.abs(s) - abs(s[i])) == 0.0
    out[hit] = np.sign(s[hit]) * target_peak
    out = np.clip(out, -target_peak, target_peak)
    return ImpulseResponse(out, h.duration, h.spec, h.warnings)


def design(spec: FilterSpec, peak: float = DEFAULT_PEAK) -> ImpulseResponse:
    """Full pipeline: prototype, modulation (single or multi band), normalisation."""
    if spec.kind == "lowpass":
        return normalize_kernel(design_lowpass(spec), peak)
    if spec.kind == "bandpass":
        c = spec.centers[0]
        h = modulate_bandpass(design_lowpass(spec), c.f0, c.phase)
        h = ImpulseResponse(h.samples * c.weight, h.duration, spec)
        return normalize_kernel(h, peak)
    return normalize_kernel(combine_multiband(spec), peak)


def evaluate(h: ImpulseResponse, t) -> np.ndarray | float:
    """Monotone-cubic interpolant of the kernel; zero outside ``[0, duration]``."""
    t_arr = np.asarray(t, dtype=float)
    v = h._interp(t_arr)
    v = np.where(np.isnan(v), 0.0, v)
    return float(v) if v.ndim == 0 else v


def derivative(h: ImpulseResponse, t) -> np.ndarray | float:
    """Time derivative of :func:`evaluate` (1/us)."""
    t_arr = np.asarray(t, dtype=float)
    v = h._interp.derivative()(t_arr)
    v = np.where(np.isnan(v), 0.0, v)
    return float(v) if v.ndim == 0 else v


def transfer_function(h: ImpulseResponse, f_grid: Iterable[float]) -> TransferFunction:
    """Fourier transform and cosine projection about the kernel midpoint.

    Uses the trapezoid rule on the sample grid; since the kernel vanishes at
    both ends this coincides with the plain Riemann sum times ``dt``.
    """
    f = np.asarray(f_grid, dtype=float)
    if f.ndim != 1 or np.any(f < 0) or np.any(np.diff(f) < 0):
        raise ValueError("f_grid must be a sorted, non-negative 1-D array")
    s = h.samples
    n = s.size
    k = np.arange(n) - (n - 1) // 2
    t_sym = k * h.dt
    phase = 2.0 * np.pi * np.outer(f, t_sym)
    cos_part = np.cos(phase) @ s * h.dt
    sin_part = np.sin(phase) @ s * h.dt
    return TransferFunction(f, cos_part - 1j * sin_part, cosine=cos_part)


def design_from_spectrum(target: TransferFunction, duration: float, *,
                         sample_rate: float = DEFAULT_SAMPLE_RATE,
                         window: str = "tukey", taper: float = 0.2) -> ImpulseResponse:
    """Kernel from a target spectrum by inverse Fourier summation.

    The target is read as a one-sided spectrum of a real kernel, referenced to
    the kernel midpoint, on a uniform grid starting at 0 MHz. The result is
    windowed (so its edges vanish) but *not* normalised; pass it through
    :func:`normalize_kernel` before building fields.
    """
    f = np.asarray(target.frequencies, dtype=float)
    v = np.asarray(target.values, dtype=complex)
    if f.size < 2 or f[0] != 0.0:
        raise ValueError("target must be sampled on a uniform grid starting at 0 MHz")
    df = np.diff(f)
    if not np.allclose(df, df[0], rtol=1e-9, atol=0.0):
        raise ValueError("target frequency grid must be uniform")
    df = df[0]
    if df * duration > 1.0:
        raise ValueError("frequency step too coarse for the requested duration "
                         f"(need df <= 1/duration = {1.0 / duration} MHz)")
    taps = int(round(duration * sample_rate)) + 1
    taps += 1 - taps % 2
    nyquist = 0.5 * (taps - 1) / duration
    if np.any(np.abs(v[f > nyquist]) > 0):
        raise ValueError(f"target has energy above the Nyquist frequency {nyquist} MHz")
    k = np.arange(taps) - (taps - 1) // 2
    t_sym = k * (duration / (taps - 1))
    wts = np.full(f.size, df)
    wts[0] *= 0.5
    wts[-1] *= 0.5
    # real kernel: h(t) = 2 Re sum_f T(f) exp(i 2 pi f t) df
    h = 2.0 * np.real(np.exp(2j * np.pi * np.outer(t_sym, f)) @ (v * wts))
    h = h * _window(window, taps, taper)
    h[0] = h[-1] = 0.0
    return ImpulseResponse(h, duration)
