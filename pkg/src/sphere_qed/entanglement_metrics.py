"""Entanglement and nonlocality measures for two-qubit atomic states.

Basis order is ``|UU>, |UL>, |LU>, |LL>`` with U the upper atomic level and
the first factor atom A.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "StateValidationError",
    "TwoQubitState",
    "build_mixed_state",
    "concurrence",
    "eof_from_concurrence",
    "entanglement_of_formation",
    "ppt_min_eigenvalue",
    "sigma_theta",
    "bell_correlation",
    "chsh",
    "bell_parameter",
    "write_density_dump",
    "read_density_dump",
]

HERM_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

_SY = np.array([[0, -1j], [1j, 0]])
_YY = np.kron(_SY, _SY)


class StateValidationError(ValueError):
    """Matrix is not a valid two-qubit density operator."""


def _validate(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise StateValidationError(f"expected a 4x4 matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > HERM_TOL:
        raise StateValidationError("matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise StateValidationError(f"trace is {tr:.15g}, expected 1")
    lam = np.linalg.eigvalsh(rho).min()
    if lam < -PSD_TOL:
        raise StateValidationError(f"negative eigenvalue {lam:.3g}")
    return rho


@dataclass(frozen=True)
class TwoQubitState:
    """Validated two-qubit density matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _validate(self.matrix))

    @property
    def populations(self) -> np.ndarray:
        return np.diag(self.matrix).real.copy()


def _as_matrix(rho) -> np.ndarray:
    if isinstance(rho, TwoQubitState):
        return rho.matrix
    return _validate(rho)


def build_mixed_state(p: float, sign: int = +1) -> TwoQubitState:
    """``p |psi><psi| + (1 - p) |LL><LL|`` with ``|psi> = (|UL> + sign |LU>)/sqrt2``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    rho = np.zeros((4, 4), dtype=complex)
    rho[1, 1] = rho[2, 2] = 0.5 * p
    rho[1, 2] = rho[2, 1] = 0.5 * sign * p
    rho[3, 3] = 1.0 - p
    return TwoQubitState(rho)


def concurrence(rho) -> float:
    """Wootters concurrence ``max(0, l1 - l2 - l3 - l4)``."""
    m = _as_matrix(rho)
    rt = _YY @ m.conj() @ _YY
    ev = np.sqrt(np.clip(np.sort(np.linalg.eigvals(m @ rt).real)[::-1], 0.0, None))
    return float(max(0.0, ev[0] - ev[1] - ev[2] - ev[3]))


def _binary_entropy(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def eof_from_concurrence(c: float) -> float:
    """Entanglement of formation as a function of the concurrence."""
    if not -1e-12 <= c <= 1.0 + 1e-12:
        raise ValueError("concurrence must lie in [0, 1]")
    c = min(max(c, 0.0), 1.0)
    return _binary_entropy(0.5 * (1.0 + math.sqrt(1.0 - c * c)))


def entanglement_of_formation(rho) -> float:
    """Entanglement of formation in ebits."""
    return eof_from_concurrence(concurrence(rho))


def ppt_min_eigenvalue(rho, subsystem: str = "B") -> float:
    """Smallest eigenvalue of the partial transpose; negative means entangled."""
    m = _as_matrix(rho).reshape(2, 2, 2, 2)
    if subsystem == "B":
        pt = m.transpose(0, 3, 2, 1)
    elif subsystem == "A":
        pt = m.transpose(2, 1, 0, 3)
    else:
        raise ValueError("subsystem must be 'A' or 'B'")
    return float(np.linalg.eigvalsh(pt.reshape(4, 4)).min())


def sigma_theta(theta: float) -> np.ndarray:
    """``cos(theta) sigma_x + sin(theta) sigma_y`` in the (U, L) basis."""
    return np.array([[0.0, math.cos(theta) - 1j * math.sin(theta)],
                     [math.cos(theta) + 1j * math.sin(theta), 0.0]])


def bell_correlation(rho, theta1: float, theta2: float) -> float:
    """``E(theta1, theta2) = Tr[rho sigma_theta1 (x) sigma_theta2]``."""
    m = _as_matrix(rho)
    return float(np.trace(m @ np.kron(sigma_theta(theta1), sigma_theta(theta2))).real)


def chsh(rho, t1: float, t2: float, t1p: float, t2p: float) -> float:
    """``|E(t1,t2) - E(t1,t2') + E(t1',t2) + E(t1',t2')|``."""
    m = _as_matrix(rho)
    return abs(bell_correlation(m, t1, t2) - bell_correlation(m, t1, t2p)
               + bell_correlation(m, t1p, t2) + bell_correlation(m, t1p, t2p))


def bell_parameter(rho, theta: float = math.pi / 4) -> float:
    """CHSH value with equally spaced analyser angles ``theta``.

    When ``<UU|rho|UU> = 0`` the correlation depends only on the angle
    difference and ``B = |3 E(theta, 0) - E(3 theta, 0)|``.  Otherwise the
    four angles ``(theta, 0, -theta, -2 theta)`` are used explicitly.
    """
    m = _as_matrix(rho)
    if abs(m[0, 0]) <= HERM_TOL:
        return abs(3.0 * bell_correlation(m, theta, 0.0) - bell_correlation(m, 3.0 * theta, 0.0))
    return chsh(m, theta, 0.0, -theta, -2.0 * theta)


def write_density_dump(path, times: Sequence[float], states: Iterable, precision: int = 12) -> None:
    """One line per time: ``t`` then the 16 entries as ``re, im`` pairs, row-major."""
    fmt = f"{{:.{precision}g}}".format
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for t, rho in zip(times, states):
            m = rho.matrix if isinstance(rho, TwoQubitState) else np.asarray(rho, dtype=complex)
            row = [fmt(t)]
            for z in m.reshape(-1):
                row += [fmt(z.real), fmt(z.imag)]
            w.writerow(row)


def read_density_dump(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_density_dump`."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    times = data[:, 0]
    vals = data[:, 1::2] + 1j * data[:, 2::2]
    return times, vals.reshape(-1, 4, 4)
