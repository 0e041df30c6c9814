"""Exact two-level propagation.

The Hamiltonian is ``H = (x sx + y sy + z sz) / 2`` with coefficients in
rad/us. Each step uses the closed-form SU(2) exponential of a constant
field, so evolution is unitary by construction. Step unitaries are stored as
Cayley-Klein pairs ``(a, b)`` with ``U = [[a, -conj(b)], [b, conj(a)]]``, and
the ordered product is formed by a pairwise reduction that only uses
elementwise arithmetic; results therefore do not depend on how many
protocols are batched together.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .invariant import ControlFields

__all__ = [
    "QubitState",
    "Kick",
    "HamiltonianTrace",
    "StepConfig",
    "PropagationResult",
    "propagate",
    "propagate_batch",
    "simulate_protocol",
    "simulate_batch",
    "ensemble_average",
    "EnsembleResult",
    "GROUND",
]


@dataclass(frozen=True)
class QubitState:
    c0: complex
    c1: complex

    def __post_init__(self):
        n = abs(self.c0) ** 2 + abs(self.c1) ** 2
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"state not normalised (|c|^2 = {n})")

    @classmethod
    def from_vector(cls, v, normalize: bool = False) -> "QubitState":
        v = np.asarray(v, dtype=complex)
        if normalize:
            v = v / np.linalg.norm(v)
        return cls(complex(v[0]), complex(v[1]))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.c0, self.c1], dtype=complex)

    def expectations(self) -> tuple[float, float, float]:
        return _bloch(np.array([self.c0]), np.array([self.c1]))[0]

    def fidelity(self, other: "QubitState") -> float:
        """Overlap ``|<other|self>|^2``; insensitive to global phase."""
        return float(abs(np.vdot(other.vector, self.vector)) ** 2)


GROUND = QubitState(1.0, 0.0)


@dataclass(frozen=True)
class Kick:
    """Instantaneous rotation by ``angle`` about ``axis`` at ``time`` (us from the start)."""

    time: float
    angle: float
    axis: str = "x"


@dataclass(frozen=True, eq=False)
class HamiltonianTrace:
    """Field coefficients on a uniform grid.

    With ``piecewise=False`` the arrays hold samples at the ``N+1`` grid
    nodes and are interpolated (monotone cubic) onto the propagation points.
    With ``piecewise=True`` they hold one constant value per interval (length
    ``N``), which suits rectangular pulses.
    """

    grid: np.ndarray
    z_coeff: np.ndarray
    x_coeff: np.ndarray
    y_coeff: np.ndarray | None = None
    piecewise: bool = False
    kicks: tuple[Kick, ...] = ()

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2:
            raise ValueError("grid must be 1-D with at least two nodes")
        d = np.diff(g)
        if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
            raise ValueError("HamiltonianTrace grid must be uniform")
        want = g.size - 1 if self.piecewise else g.size
        for name in ("z_coeff", "x_coeff", "y_coeff"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.shape[-1] != want:
                raise ValueError(f"{name} has {v.shape[-1]} entries, expected {want}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def duration(self) -> float:
        return float(self.grid[-1] - self.grid[0])


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1e-3
    sampling: str = "midpoint"
    trajectory_store: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.sampling not in ("midpoint", "left"):
            raise ValueError("sampling must be 'midpoint' or 'left'")


@dataclass(frozen=True, eq=False)
class PropagationResult:
    final_state: QubitState
    expectations: tuple[float, float, float]
    trajectory: np.ndarray | None = None
    times: np.ndarray | None = None

    @property
    def sz(self) -> float:
        return self.expectations[2]

    def fidelity(self, reference: QubitState = GROUND) -> float:
        return self.final_state.fidelity(reference)

    def to_dict(self) -> dict:
        s = self.final_state
        return {
            "final_state": {"re": [s.c0.real, s.c1.real], "im": [s.c0.imag, s.c1.imag]},
            "expectations": {"sx": self.expectations[0], "sy": self.expectations[1],
                             "sz": self.expectations[2]},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def trajectory_csv(self) -> str:
        if self.trajectory is None:
            raise ValueError("no trajectory was stored")
        lines = ["t_us,sx,sy,sz"]
        for t, (x, y, z) in zip(self.times, self.trajectory):
            lines.append(f"{t!r},{x!r},{y!r},{z!r}")
        return "\n".join(lines) + "\n"


def _bloch(c0, c1):
    sx = 2.0 * np.real(np.conj(c0) * c1)
    sy = 2.0 * np.imag(np.conj(c0) * c1)
    sz = np.abs(c0) ** 2 - np.abs(c1) ** 2
    return np.stack([sx, sy, sz], axis=-1)


def _step_pairs(x, y, z, dt):
    """Cayley-Klein pair of exp(-i dt (x sx + y sy + z sz) / 2)."""
    mag = np.sqrt(x * x + y * y + z * z)
    half = 0.5 * dt * mag
    c = np.cos(half)
    k = 0.5 * dt * np.sinc(half / np.pi)  # sin(half)/mag without dividing by zero
    a = c - 1j * k * z
    b = -1j * k * (x + 1j * y)
    return a, b


def _kick_pair(angle, axis):
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if axis == "x":
        return complex(c), complex(-1j * s)
    if axis == "y":
        return complex(c), complex(s)
    if axis == "z":
        return complex(c - 1j * s), 0j
    raise ValueError(f"unknown rotation axis {axis!r}")


def _reduce(a, b):
    """Ordered product U[n-1] ... U[1] U[0] along the last axis."""
    while a.shape[-1] > 1:
        if a.shape[-1] % 2:
            pad = [(0, 0)] * (a.ndim - 1) + [(0, 1)]
            a = np.pad(a, pad, constant_values=1.0)
            b = np.pad(b, pad, constant_values=0.0)
        a1, b1 = a[..., 0::2], b[..., 0::2]   # earlier
        a2, b2 = a[..., 1::2], b[..., 1::2]   # later
        a, b = a2 * a1 - np.conj(b2) * b1, b2 * a1 + np.conj(a2) * b1
    return a[..., 0], b[..., 0]


def _apply(a, b, c0, c1):
    return a * c0 - np.conj(b) * c1, b * c0 + np.conj(a) * c1


def _n_steps(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 1 or abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"dt={dt} does not divide the protocol duration {duration}")
    return n


def _sample_points(duration: float, cfg: StepConfig):
    n = _n_steps(duration, cfg.dt)
    j = np.arange(n)
    t = (j + 0.5) * (duration / n) if cfg.sampling == "midpoint" else j * (duration / n)
    return n, t


def _resample(trace: HamiltonianTrace, values, t_pts, n_steps):
    if values is None:
        return 0.0
    v = np.asarray(values, dtype=float)
    if trace.piecewise:
        ratio = n_steps // (trace.grid.size - 1)
        if ratio * (trace.grid.size - 1) != n_steps:
            raise ValueError("propagation dt must divide the piecewise trace step")
        return np.repeat(v, ratio, axis=-1)
    if v.shape[-1] == trace.grid.size and np.all(v == 0):
        return np.zeros(v.shape[:-1] + (n_steps,))
    return PchipInterpolator(trace.grid, v, axis=-1)(t_pts)


def _merge_kicks(a, b, x, y, z, dt, kicks):
    """Fold instantaneous rotations into the steps that contain them.

    A kick at fraction ``p`` of step ``j`` turns that step into
    ``U((1-p) dt) K U(p dt)``, using the step's own field for both pieces.
    """
    n = a.shape[-1]
    by_step: dict[int, list] = {}
    for k in sorted(kicks, key=lambda k: k.time):
        pos = k.time / dt
        if pos < -1e-9 or pos > n + 1e-9:
            raise ValueError(f"kick at t={k.time} lies outside the protocol")
        j = min(max(int(np.floor(pos + 1e-9)), 0), n - 1)
        frac = min(max(pos - j, 0.0), 1.0)
        if abs(frac - round(frac)) < 1e-9:
            frac = float(round(frac))
        by_step.setdefault(j, []).append((frac, k))
    a, b = a.copy(), b.copy()
    for j, items in by_step.items():
        xs, ys, zs = x[..., j], y[..., j], z[..., j]
        ua, ub = np.ones_like(a[..., j]), np.zeros_like(b[..., j])
        last = 0.0
        for frac, k in items:
            if frac > last:
                sa, sb = _step_pairs(xs, ys, zs, (frac - last) * dt)
                ua, ub = sa * ua - np.conj(sb) * ub, sb * ua + np.conj(sa) * ub
            ka, kb = _kick_pair(k.angle, k.axis)
            ua, ub = ka * ua - np.conj(kb) * ub, kb * ua + np.conj(ka) * ub
            last = frac
        if last < 1.0:
            sa, sb = _step_pairs(xs, ys, zs, (1.0 - last) * dt)
            ua, ub = sa * ua - np.conj(sb) * ub, sb * ua + np.conj(sa) * ub
        a[..., j], b[..., j] = ua, ub
    return a, b


def _propagate_arrays(x, y, z, dt, kicks, c0, c1, store=False):
    """Core propagation on per-step coefficient arrays (broadcast over a batch)."""
    x, y, z = np.broadcast_arrays(x, y, z)
    a, b = _step_pairs(x, y, z, dt)
    if kicks:
        a, b = _merge_kicks(a, b, x, y, z, dt, kicks)
    if store:
        m = a.shape[-1]
        traj = np.empty(a.shape[:-1] + (m + 1, 2), dtype=complex)
        s0 = np.broadcast_to(c0, a.shape[:-1]).astype(complex)
        s1 = np.broadcast_to(c1, a.shape[:-1]).astype(complex)
        traj[..., 0, 0], traj[..., 0, 1] = s0, s1
        for j in range(m):
            s0, s1 = _apply(a[..., j], b[..., j], s0, s1)
            traj[..., j + 1, 0], traj[..., j + 1, 1] = s0, s1
        return s0, s1, traj
    ua, ub = _reduce(a, b)
    f0, f1 = _apply(ua, ub, c0, c1)
    return f0, f1, None


def _result(f0, f1, traj=None, times=None):
    norm = np.sqrt(abs(f0) ** 2 + abs(f1) ** 2)
    state = QubitState(complex(f0 / norm), complex(f1 / norm))
    bl = None
    if traj is not None:
        bl = _bloch(traj[:, 0], traj[:, 1])
    return PropagationResult(state, tuple(float(v) for v in _bloch(np.array([f0]), np.array([f1]))[0]),
                             bl, times)


def propagate(trace: HamiltonianTrace, initial: QubitState = GROUND,
              cfg: StepConfig = StepConfig()) -> PropagationResult:
    """Time-ordered evolution of ``initial`` under ``trace``."""
    if cfg.dt > trace.step * (1 + 1e-9):
        raise ValueError("propagation dt must not exceed the trace grid step")
    n, t = _sample_points(trace.duration, cfg)
    t = t + trace.grid[0]
    x = _resample(trace, trace.x_coeff, t, n)
    y = _resample(trace, trace.y_coeff, t, n)
    z = _resample(trace, trace.z_coeff, t, n)
    f0, f1, traj = _propagate_arrays(x + np.zeros(n), y + np.zeros(n), z + np.zeros(n),
                                     trace.duration / n, trace.kicks,
                                     initial.c0, initial.c1, cfg.trajectory_store)
    times = None
    if traj is not None:
        times = trace.grid[0] + trace.duration / n * np.arange(n + 1)
    return _result(f0, f1, traj, times)


def propagate_batch(x, y, z, dt: float, kicks=(), initial: QubitState = GROUND) -> np.ndarray:
    """Final Bloch vectors for a batch of per-step coefficient arrays.

    ``x``, ``y``, ``z`` broadcast to ``(batch, n_steps)``. Returns an array of
    shape ``(batch, 3)``.
    """
    f0, f1, _ = _propagate_arrays(np.asarray(x, float), np.asarray(y, float),
                                  np.asarray(z, float), dt, tuple(kicks),
                                  initial.c0, initial.c1)
    return _bloch(f0, f1)


# ---------------------------------------------------------------------------
# protocols

def _control_steps(control: ControlFields, t_pts) -> tuple[np.ndarray, np.ndarray]:
    g = control.grid
    if np.array_equal(g, t_pts):
        return -control.epsilon, control.delta
    x = -PchipInterpolator(g, control.epsilon)(t_pts)
    if np.any(control.delta != 0):
        z = PchipInterpolator(g, control.delta)(t_pts)
    else:
        z = np.zeros_like(t_pts)
    return x, z


def _noise_steps(noise_values, n):
    v = np.asarray(noise_values, dtype=float)
    if v.shape[-1] != n:
        raise ValueError(f"noise trace has {v.shape[-1]} samples, protocol needs {n}")
    return v


def simulate_protocol(control: ControlFields, signal=None, noise_trace=None,
                      cfg: StepConfig = StepConfig(), initial: QubitState = GROUND,
                      scale: float = 1.0) -> PropagationResult:
    """Evolve under ``H0`` plus an optional signal and noise along z.

    ``z = Delta + delta * f_in(t) + noise(t)`` and ``x = -scale * eps(t)``.
    The noise trace holds one value per propagation step.
    """
    duration = control.duration
    if signal is not None and signal.duration is not None and \
            abs(signal.duration - duration) > 1e-9:
        raise ValueError("signal and control durations differ")
    n, t = _sample_points(duration, cfg)
    x, z = _control_steps(control, t)
    x = scale * x
    if signal is not None:
        z = z + signal.value(t, duration)
    if noise_trace is not None:
        values = getattr(noise_trace, "values", noise_trace)
        z = z + _noise_steps(values, n)
    if cfg.trajectory_store:
        f0, f1, traj = _propagate_arrays(x, 0.0, z, duration / n, (), initial.c0,
                                         initial.c1, True)
        return _result(f0, f1, traj, duration / n * np.arange(n + 1))
    f0, f1, _ = _propagate_arrays(x, 0.0, z, duration / n, (), initial.c0, initial.c1)
    return _result(f0, f1)


def simulate_batch(control: ControlFields, z_extra, cfg: StepConfig = StepConfig(),
                   initial: QubitState = GROUND, scale: float = 1.0) -> np.ndarray:
    """Final Bloch vectors for many z-perturbations sharing one control field.

    ``z_extra`` has shape ``(batch, n_steps)`` and is added to ``Delta``.
    """
    n, t = _sample_points(control.duration, cfg)
    x, z = _control_steps(control, t)
    z_all = z + np.asarray(z_extra, dtype=float)
    return propagate_batch(scale * x, 0.0, z_all, control.duration / n, (), initial)


@dataclass(frozen=True)
class EnsembleResult:
    mean: tuple[float, float, float]
    sem: tuple[float, float, float]
    trials: int
    per_trial: np.ndarray = field(repr=False, default=None)

    @property
    def sz(self) -> float:
        return self.mean[2]


def ensemble_average(control: ControlFields, signal=None, noise_model=None, trials: int = 1,
                     seed: int = 0, cfg: StepConfig = StepConfig(), scale: float = 1.0,
                     chunk: int = 64) -> EnsembleResult:
    """Average final expectations over independent noise realisations.

    Trial ``k`` draws its noise from the stream ``(seed, k)``, so results are
    reproducible and independent of chunking.
    """
    from .noise import synthesize

    if trials < 1:
        raise ValueError("trials must be >= 1")
    n, t = _sample_points(control.duration, cfg)
    base = np.zeros(n) if signal is None else signal.value(t, control.duration)
    out = np.empty((trials, 3))
    for start in range(0, trials, chunk):
        ks = range(start, min(trials, start + chunk))
        if noise_model is None:
            z = np.broadcast_to(base, (len(ks), n))
        else:
            z = np.stack([base + synthesize(noise_model, control.duration, cfg.dt, k,
                                            seed=seed).values for k in ks])
        out[start:start + len(ks)] = simulate_batch(control, z, cfg, scale=scale)
    mean = out.mean(axis=0)
    sem = out.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(3)
    return EnsembleResult(tuple(map(float, mean)), tuple(map(float, sem)), trials, out)
