import numpy as np
import pytest
from scipy.linalg import expm

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def expm_propagate(x, y, z, dt, psi0=(1.0, 0.0)):
    """Reference propagator: ordered product of 2x2 matrix exponentials."""
    psi = np.asarray(psi0, dtype=complex)
    n = len(z)
    x = np.broadcast_to(x, (n,))
    y = np.broadcast_to(y, (n,))
    for j in range(n):
        h = 0.5 * (x[j] * SX + y[j] * SY + z[j] * SZ)
        psi = expm(-1j * h * dt) @ psi
    return psi


def bloch(psi):
    return np.array([np.real(np.conj(psi) @ (s @ psi)) for s in (SX, SY, SZ)])


def rotation(angle, axis="x"):
    s = {"x": SX, "y": SY, "z": SZ}[axis]
    return expm(-0.5j * angle * s)


@pytest.fixture(scope="session")
def qif_default():
    from qif import FilterSpec, aux_from_impulse, design, fields_from_aux
    spec = FilterSpec()
    h = design(spec)
    aux = aux_from_impulse(h, dt=1e-3)
    return h, aux, fields_from_aux(aux)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, TITLES
    except ImportError:
        return
    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(TITLES):
        parts = RESULTS.get(n)
        if not parts:
            tr.write_line(f"criterion {n:2d}: NOT RUN  {TITLES[n]}")
            continue
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{name}: {'ok' if ok else 'FAIL'} ({d})" for name, ok, d in parts)
        tr.write_line(f"criterion {n:2d}: {verdict}  {TITLES[n]} | {detail}")
