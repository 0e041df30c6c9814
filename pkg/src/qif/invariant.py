"""SU(2) dynamical-invariant machinery.

The invariant is parametrised by two angles, ``alpha`` and ``beta``::

    I(t) = 1/2 (-cos a, sin a sin b, sin a cos b) . sigma/2

and the control Hamiltonian is ``H0 = (Delta/2) sz - (eps/2) sx``. Choosing
``alpha == pi`` keeps ``Delta == 0`` and ``eps == d(beta)/dt``; that regime is
what every shipped protocol uses, but the general formulas are kept.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp

from .filters import ImpulseResponse, derivative, evaluate

__all__ = [
    "AuxiliaryFields",
    "ControlFields",
    "InvariantVector",
    "LRPhase",
    "InvariantReport",
    "SingularFieldError",
    "aux_from_impulse",
    "aux_from_angles",
    "fields_from_aux",
    "invariant_vector",
    "lr_phase",
    "eigenstates",
    "verify_invariant",
]

MODES = ("exact_arcsin", "simplified")


class SingularFieldError(ArithmeticError):
    """The field equations hit a vanishing denominator with a nonzero numerator."""


def _uniform_grid(duration: float, dt: float) -> np.ndarray:
    n = int(round(duration / dt))
    if n < 2 or abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"dt={dt} does not divide duration={duration}")
    return np.linspace(0.0, duration, n + 1)


@dataclass(frozen=True, eq=False)
class AuxiliaryFields:
    grid: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    alpha_dot: np.ndarray
    beta_dot: np.ndarray
    mode: str = "exact_arcsin"

    @property
    def duration(self) -> float:
        return float(self.grid[-1] - self.grid[0])

    @property
    def alpha_is_pi(self) -> bool:
        return bool(np.all(self.alpha == np.pi) and np.all(self.alpha_dot == 0.0))

    def boundary_ok(self, atol: float = 1e-12) -> bool:
        ends = [0, -1]
        return bool(np.allclose(self.alpha[ends], np.pi, atol=atol, rtol=0)
                    and np.allclose(self.alpha_dot[ends], 0.0, atol=atol, rtol=0)
                    and np.allclose(self.beta[ends], -np.pi / 2, atol=atol, rtol=0))


@dataclass(frozen=True, eq=False)
class ControlFields:
    """Drive amplitudes (rad/us) on a uniform time grid."""

    grid: np.ndarray
    epsilon: np.ndarray
    delta: np.ndarray
    source: AuxiliaryFields | None = None

    @property
    def duration(self) -> float:
        return float(self.grid[-1] - self.grid[0])

    def scaled(self, s: float) -> "ControlFields":
        return ControlFields(self.grid, s * self.epsilon, s * self.delta, self.source)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_us", "epsilon_rad_per_us", "delta_rad_per_us"])
        for row in zip(self.grid, self.epsilon, self.delta):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ControlFields":
        rows = list(csv.DictReader(io.StringIO(text)))
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        return cls(col("t_us"), col("epsilon_rad_per_us"), col("delta_rad_per_us"))


@dataclass(frozen=True, eq=False)
class InvariantVector:
    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.I1, self.I2, self.I3], axis=-1)

    @property
    def norm(self) -> np.ndarray:
        return np.sqrt(self.I1 ** 2 + self.I2 ** 2 + self.I3 ** 2)


@dataclass(frozen=True, eq=False)
class LRPhase:
    grid: np.ndarray
    phi_plus: np.ndarray
    phi_minus: np.ndarray

    @property
    def delta_phi(self) -> np.ndarray:
        return self.phi_plus - self.phi_minus


@dataclass(frozen=True)
class InvariantReport:
    max_deviation: float
    max_norm_drift: float
    endpoint_mismatch: float


def aux_from_impulse(h: ImpulseResponse, mode: str = "exact_arcsin",
                     dt: float | None = None) -> AuxiliaryFields:
    """Auxiliary angles encoding the kernel ``h``.

    ``exact_arcsin`` uses ``beta = -pi/2 + arcsin h`` (needs ``|h| < 1``);
    ``simplified`` uses ``beta = -pi/2 + h``. Derivatives come from the
    kernel's cubic interpolant via the chain rule. ``dt`` picks the output
    grid; the kernel's own grid is used when omitted.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    t = h.grid if dt is None else _uniform_grid(h.duration, dt)
    hv = np.asarray(evaluate(h, t))
    hd = np.asarray(derivative(h, t))
    hv[0] = hv[-1] = 0.0
    if mode == "exact_arcsin":
        if max(h.peak, float(np.max(np.abs(hv)))) >= 1.0:
            raise ValueError("kernel amplitude must stay strictly inside (-1, 1) for arcsin mode")
        beta = -np.pi / 2 + np.arcsin(hv)
        beta_dot = hd / np.sqrt(1.0 - hv ** 2)
    else:
        beta = -np.pi / 2 + hv
        beta_dot = hd
    beta[0] = beta[-1] = -np.pi / 2
    alpha = np.full_like(t, np.pi)
    return AuxiliaryFields(t, alpha, beta, np.zeros_like(t), beta_dot, mode)


def aux_from_angles(grid, alpha, beta, alpha_dot=None, beta_dot=None) -> AuxiliaryFields:
    """General auxiliary fields from sampled angles.

    Missing derivatives are taken by centred differences (one-sided at the
    edges).
    """
    grid = np.asarray(grid, dtype=float)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), grid.shape).copy()
    beta = np.broadcast_to(np.asarray(beta, dtype=float), grid.shape).copy()
    if alpha_dot is None:
        alpha_dot = np.gradient(alpha, grid, edge_order=2)
    if beta_dot is None:
        beta_dot = np.gradient(beta, grid, edge_order=2)
    return AuxiliaryFields(grid, alpha, beta, np.asarray(alpha_dot, float),
                           np.asarray(beta_dot, float), "general")


def fields_from_aux(aux: AuxiliaryFields, rtol: float = 1e-12) -> ControlFields:
    """Invert the invariant condition for ``(epsilon, Delta)``.

    ``eps = b' - a' / (tan a tan b)`` and ``Delta = -a' / sin b``. Wherever
    ``a' == 0`` the correction terms are dropped exactly, so the ``alpha == pi``
    regime returns ``Delta == 0`` and ``eps == b'`` identically.

    Raises
    ------
    SingularFieldError
        If a denominator vanishes at a point where ``a' != 0``.
    """
    a, b, ad, bd = aux.alpha, aux.beta, aux.alpha_dot, aux.beta_dot
    moving = ad != 0.0
    eps = np.array(bd, dtype=float)
    delta = np.zeros_like(eps)
    if np.any(moving):
        sb = np.sin(b[moving])
        tt = np.tan(a[moving]) * np.tan(b[moving])
        bad = (np.abs(sb) < rtol) | (np.abs(tt) < rtol) | ~np.isfinite(tt)
        if np.any(bad):
            where = aux.grid[moving][bad]
            raise SingularFieldError(
                f"field equations singular at t = {where[0]:.6g} us "
                f"({bad.sum()} grid point(s))")
        eps[moving] = bd[moving] - ad[moving] / tt
        delta[moving] = -ad[moving] / sb
    if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(delta))):
        raise SingularFieldError("non-finite control field")
    return ControlFields(aux.grid.copy(), eps, delta, aux)


def invariant_vector(aux: AuxiliaryFields) -> InvariantVector:
    sa = np.where(aux.alpha == np.pi, 0.0, np.sin(aux.alpha))
    return InvariantVector(-0.5 * np.cos(aux.alpha), 0.5 * sa * np.sin(aux.beta),
                           0.5 * sa * np.cos(aux.beta))


def _unit(aux: AuxiliaryFields):
    """Unit invariant vector and its time derivative."""
    sa = np.where(aux.alpha == np.pi, 0.0, np.sin(aux.alpha))
    ca = np.cos(aux.alpha)
    sb, cb = np.sin(aux.beta), np.cos(aux.beta)
    n = np.stack([-ca, sa * sb, sa * cb], axis=-1)
    ad, bd = aux.alpha_dot, aux.beta_dot
    nd = np.stack([sa * ad, ca * ad * sb + sa * cb * bd, ca * ad * cb - sa * sb * bd], axis=-1)
    return n, nd


def lr_phase(aux: AuxiliaryFields, fields: ControlFields) -> LRPhase:
    """Lewis-Riesenfeld phases of the two invariant eigenstates.

    Rates follow ``(n1 n2' - n2 n1') / (2 (1 -+ n3)) -+ h.n / 2`` with ``n``
    the unit invariant vector and ``h = (-eps, 0, Delta)``; phases are
    cumulative Simpson integrals starting from zero. When ``alpha == pi`` and
    ``eps == beta'`` the integral is taken in closed form.
    """
    if fields.grid.shape != aux.grid.shape or not np.allclose(fields.grid, aux.grid):
        raise ValueError("auxiliary and control grids differ")
    n, _ = _unit(aux)
    if np.any(np.abs(1.0 - np.abs(n[:, 2])) < 1e-12):
        raise SingularFieldError("invariant vector hits the pole n3 = +-1")
    t = aux.grid
    if aux.alpha_is_pi and not np.any(fields.delta) and \
            np.array_equal(fields.epsilon, aux.beta_dot):
        # rates are +-beta'/2, whose antiderivative is known exactly
        half = 0.5 * (aux.beta - aux.beta[0])
        return LRPhase(t, half, -half)
    rate_p, rate_m = lr_rates(aux, fields)
    return LRPhase(t, cumulative_simpson(rate_p, x=t, initial=0.0),
                   cumulative_simpson(rate_m, x=t, initial=0.0))


def lr_rates(aux: AuxiliaryFields, fields: ControlFields) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise LR phase rates (the integrands used by :func:`lr_phase`)."""
    n, nd = _unit(aux)
    h = np.stack([-fields.epsilon, np.zeros_like(fields.epsilon), fields.delta], axis=-1)
    geo = n[:, 0] * nd[:, 1] - n[:, 1] * nd[:, 0]
    hn = np.sum(h * n, axis=-1)
    return geo / (2.0 * (1.0 - n[:, 2])) - 0.5 * hn, geo / (2.0 * (1.0 + n[:, 2])) + 0.5 * hn


def eigenstates(iv: InvariantVector, t_index: int = 0):
    """Eigenvectors ``(|phi+>, |phi->)`` of ``I = Ivec . sigma / 2`` at one time.

    Raises
    ------
    ValueError
        At the poles ``I3/|I| = +-1`` where the closed form breaks down.
    """
    v = iv.stack()[t_index]
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("zero invariant vector")
    n1, n2, n3 = v / norm
    if abs(1.0 - abs(n3)) < 1e-12:
        raise ValueError("invariant eigenbasis undefined at the poles I3/|I| = +-1")
    c = n1 - 1j * n2
    plus = np.array([c / np.sqrt(2.0 * (1.0 - n3)), np.sqrt(0.5 * (1.0 - n3))], dtype=complex)
    minus = np.array([-c / np.sqrt(2.0 * (1.0 + n3)), np.sqrt(0.5 * (1.0 + n3))], dtype=complex)
    return plus, minus


def invariant_operator(iv: InvariantVector, t_index: int = 0) -> np.ndarray:
    i1, i2, i3 = iv.stack()[t_index]
    return 0.5 * np.array([[i3, i1 - 1j * i2], [i1 + 1j * i2, -i3]], dtype=complex)


def verify_invariant(fields: ControlFields, iv: InvariantVector, *,
                     rtol: float = 1e-10, atol: float = 1e-12) -> InvariantReport:
    """Integrate the invariant's equation of motion under ``fields`` and compare.

    The vector obeys ``dI/dt = h x I`` with ``h = (-eps, 0, Delta)``, starting
    from ``I(0)``; fields are interpolated linearly between grid points.
    Reports the largest deviation from ``iv``, the largest norm drift and the
    mismatch between the propagated endpoint and ``I(0)``.
    """
    t = fields.grid
    i0 = iv.stack()[0]

    def rhs(tt, y):
        e = np.interp(tt, t, fields.epsilon)
        d = np.interp(tt, t, fields.delta)
        return np.cross(np.array([-e, 0.0, d]), y)

    step = float(t[1] - t[0])
    sol = solve_ivp(rhs, (t[0], t[-1]), i0, t_eval=t, method="DOP853",
                    rtol=rtol, atol=atol, max_step=step)
    y = sol.y.T
    ref = iv.stack()
    return InvariantReport(
        max_deviation=float(np.max(np.linalg.norm(y - ref, axis=1))),
        max_norm_drift=float(np.max(np.abs(np.linalg.norm(y, axis=1) - np.linalg.norm(i0)))),
        endpoint_mismatch=float(np.linalg.norm(y[-1] - i0)),
    )
