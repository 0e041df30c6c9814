"""Pulsed dynamical decoupling baselines (Hahn echo / CPMG).

A sequence is framed by two ideal pi/2 rotations about the pulse axis so
that, like the invariant protocols, an undisturbed run returns the qubit to
``|0>``. The closing rotation undoes the opening one for an even number of
pi pulses and completes a full turn for an odd number. Every rotation,
including the framing ones, is multiplied by ``amplitude_scale``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dynamics import HamiltonianTrace, Kick, QubitState, GROUND, propagate_batch
from .filters import TransferFunction

__all__ = [
    "PulseSequence",
    "build_cpmg",
    "sequence_to_trace",
    "toggling_function",
    "simulate_sequence",
    "cpmg_filter_response",
]


@dataclass(frozen=True, eq=False)
class PulseSequence:
    n_pulses: int
    t_f: float
    pulse_times: np.ndarray
    pulse_width: float = 0.0
    pulse_amplitude: float = 0.0
    amplitude_scale: float = 1.0
    axis: str = "x"
    caps: bool = True

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ValueError("pulse axis must be 'x' or 'y'")
        if self.n_pulses < 1 or self.t_f <= 0 or self.pulse_width < 0:
            raise ValueError("need n_pulses >= 1, t_f > 0 and pulse_width >= 0")
        t = np.asarray(self.pulse_times, dtype=float)
        if t.shape != (self.n_pulses,):
            raise ValueError("pulse_times must hold one time per pulse")
        half = 0.5 * self.pulse_width
        if np.any(t - half <= 0) or np.any(t + half >= self.t_f):
            raise ValueError("pulses must lie strictly inside (0, t_f)")
        if np.any(np.diff(t) <= self.pulse_width):
            raise ValueError("pulses overlap")
        object.__setattr__(self, "pulse_times", t)

    @property
    def rotation_angle(self) -> float:
        return self.amplitude_scale * np.pi

    def cap_angles(self) -> tuple[float, float]:
        s = self.amplitude_scale
        close = -0.5 * np.pi if self.n_pulses % 2 == 0 else 0.5 * np.pi
        return s * 0.5 * np.pi, s * close

    def to_dict(self) -> dict:
        return {
            "n_pulses": self.n_pulses,
            "t_f_us": self.t_f,
            "pulse_times_us": [float(v) for v in self.pulse_times],
            "pulse_width_us": self.pulse_width,
            "pulse_amplitude_rad_per_us": self.pulse_amplitude,
            "amplitude_scale": self.amplitude_scale,
            "axis": self.axis,
            "caps": self.caps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSequence":
        return cls(int(d["n_pulses"]), float(d["t_f_us"]), np.asarray(d["pulse_times_us"], float),
                   float(d.get("pulse_width_us", 0.0)), float(d.get("pulse_amplitude_rad_per_us", 0.0)),
                   float(d.get("amplitude_scale", 1.0)), d.get("axis", "x"), bool(d.get("caps", True)))

    @classmethod
    def from_json(cls, text: str) -> "PulseSequence":
        return cls.from_dict(json.loads(text))


def build_cpmg(n: int, t_f: float, width: float = 0.0, scale: float = 1.0,
               axis: str = "x", caps: bool = True) -> PulseSequence:
    """Equally spaced pi pulses at ``t_k = t_f (2k - 1) / (2n)``.

    Finite pulses are rectangular with calibrated amplitude ``pi/width``
    multiplied by ``scale``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if width < 0 or n * width >= t_f:
        raise ValueError(f"{n} pulses of width {width} us do not fit in {t_f} us")
    times = t_f * (2 * np.arange(1, n + 1) - 1) / (2 * n)
    amp = scale * np.pi / width if width > 0 else 0.0
    return PulseSequence(n, t_f, times, width, amp, scale, axis, caps)


def _overlap(seq: PulseSequence, n_steps: int) -> np.ndarray:
    """Fraction of each step covered by a pulse."""
    dt = seq.t_f / n_steps
    edges = dt * np.arange(n_steps + 1)
    cover = np.zeros(n_steps)
    for c in seq.pulse_times:
        lo, hi = c - 0.5 * seq.pulse_width, c + 0.5 * seq.pulse_width
        cover += np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None) / dt
    return cover


def _fields_and_kicks(seq: PulseSequence, n_steps: int):
    dt = seq.t_f / n_steps
    drive = np.zeros(n_steps)
    kicks = []
    if seq.pulse_width > 0:
        drive = seq.pulse_amplitude * _overlap(seq, n_steps)
        if abs(seq.pulse_width / dt - round(seq.pulse_width / dt)) > 1e-9:
            raise ValueError("dt must divide the pulse width")
    else:
        kicks += [Kick(float(t), seq.rotation_angle, seq.axis) for t in seq.pulse_times]
    if seq.caps:
        a0, a1 = seq.cap_angles()
        kicks = [Kick(0.0, a0, seq.axis)] + kicks + [Kick(seq.t_f, a1, seq.axis)]
    x = drive if seq.axis == "x" else np.zeros(n_steps)
    y = drive if seq.axis == "y" else np.zeros(n_steps)
    return x, y, tuple(kicks)


def sequence_to_trace(seq: PulseSequence, dt: float = 1e-3) -> HamiltonianTrace:
    """Piecewise-constant drive plus instantaneous rotations for ``propagate``."""
    n = int(round(seq.t_f / dt))
    if n < 1 or abs(n * dt - seq.t_f) > 1e-9 * seq.t_f:
        raise ValueError("dt must divide t_f")
    x, y, kicks = _fields_and_kicks(seq, n)
    grid = np.linspace(0.0, seq.t_f, n + 1)
    return HamiltonianTrace(grid, np.zeros(n), x, y, piecewise=True, kicks=kicks)


def toggling_function(seq: PulseSequence, t) -> np.ndarray:
    """Sign-switching function ``cos(pulse angle accumulated by time t)``.

    Framing rotations are excluded; finite pulses ramp the angle linearly.
    """
    t = np.asarray(t, dtype=float)
    ang = np.zeros_like(t)
    for c in seq.pulse_times:
        if seq.pulse_width > 0:
            lo = c - 0.5 * seq.pulse_width
            ang += seq.rotation_angle * np.clip((t - lo) / seq.pulse_width, 0.0, 1.0)
        else:
            ang += seq.rotation_angle * (t >= c)
    return np.cos(ang)


def simulate_sequence(seq: PulseSequence, z_extra=None, dt: float = 1e-3,
                      initial: QubitState = GROUND) -> np.ndarray:
    """Final Bloch vectors for z-perturbations of shape ``(batch, n_steps)``."""
    n = int(round(seq.t_f / dt))
    if abs(n * dt - seq.t_f) > 1e-9 * seq.t_f:
        raise ValueError("dt must divide t_f")
    x, y, kicks = _fields_and_kicks(seq, n)
    z = np.zeros((1, n)) if z_extra is None else np.atleast_2d(np.asarray(z_extra, float))
    if z.shape[-1] != n:
        raise ValueError(f"z perturbation has {z.shape[-1]} samples, expected {n}")
    return propagate_batch(x, y, z, seq.t_f / n, kicks, initial)


def cpmg_filter_response(seq: PulseSequence, f_grid, probe_amplitude: float = 0.01,
                         dt: float = 1e-3, chunk: int = 256) -> TransferFunction:
    """Weak-probe response of a sequence across ``f_grid`` (MHz).

    Each frequency is simulated with a cosine and a sine probe (time measured
    from ``t_f/2``); the accumulated phase ``atan2(sx, sz)/delta`` of each
    gives the real and (negated) imaginary parts of ``values``. ``reference``
    holds the toggling-frame transform ``int y(t) exp(-2 pi i f t') dt`` and
    ``cosine`` the cosine-probe phase.
    """
    f = np.asarray(f_grid, dtype=float)
    if f.ndim != 1 or np.any(np.diff(f) < 0):
        raise ValueError("f_grid must be sorted")
    if probe_amplitude <= 0:
        raise ValueError("probe_amplitude must be positive")
    n = int(round(seq.t_f / dt))
    t = (np.arange(n) + 0.5) * (seq.t_f / n)
    ts = t - 0.5 * seq.t_f
    out_c = np.empty(f.size)
    out_s = np.empty(f.size)
    for lo in range(0, f.size, chunk):
        fc = f[lo:lo + chunk, None]
        arg = 2 * np.pi * fc * ts[None, :]
        bc = simulate_sequence(seq, probe_amplitude * np.cos(arg), dt)
        bs = simulate_sequence(seq, probe_amplitude * np.sin(arg), dt)
        out_c[lo:lo + chunk] = np.arctan2(bc[:, 0], bc[:, 2]) / probe_amplitude
        out_s[lo:lo + chunk] = np.arctan2(bs[:, 0], bs[:, 2]) / probe_amplitude
    y = toggling_function(seq, t)
    w = seq.t_f / n
    ref = (np.cos(2 * np.pi * f[:, None] * ts) @ y - 1j * (np.sin(2 * np.pi * f[:, None] * ts) @ y)) * w
    return TransferFunction(f, out_c - 1j * out_s, cosine=out_c, reference=ref)
