"""Spherical Bessel and Hankel functions of integer order and complex argument.

Evaluation uses the usual stability split: the Hankel function h_l^(1) and
the Neumann function y_l are generated by upward recurrence, while j_l is
produced by Miller's downward recurrence normalised against j_0 (or j_1 near
a zero of j_0).  Ratio sequences are exposed as well; the Mie and decay-rate
code works with ratios so that nothing overflows for multipole orders far
beyond the size parameter.
"""
from __future__ import annotations

import cmath
import math

import numpy as np
from numba import njit

__all__ = [
    "SpecialFunctionOverflow",
    "lmax_heuristic",
    "miller_start",
    "spherical_j",
    "spherical_y",
    "spherical_h1",
    "riccati_derivative",
    "spherical_jn_seq",
    "spherical_h1_seq",
    "jn_ratios",
    "h1_ratios",
    "psi_log_derivative",
    "jh_products",
]


class SpecialFunctionOverflow(OverflowError):
    """Raised when a requested value is outside the double-precision range."""


def lmax_heuristic(x: float) -> int:
    """Truncation order ``ceil(x + 4 x^(1/3) + 12)`` for Mie-type sums."""
    x = abs(x)
    return int(math.ceil(x + 4.0 * x ** (1.0 / 3.0) + 12.0))


def miller_start(lmax: int, z: complex) -> int:
    """Starting order for downward recurrences that must be accurate up to ``lmax``."""
    az = abs(z)
    return int(max(lmax, az) + 4.0 * max(az, 1.0) ** (1.0 / 3.0) + 40 + math.sqrt(40.0 * max(lmax, 1)))


# --------------------------------------------------------------------------
# numba kernels (also used directly by sphere_scattering / coupling_rates)
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _h1_seq(lmax, z):
    out = np.empty(lmax + 1, dtype=np.complex128)
    e = cmath.exp(1j * z)
    out[0] = -1j * e / z
    if lmax >= 1:
        out[1] = -e * (z + 1j) / (z * z)
    for l in range(2, lmax + 1):
        out[l] = (2 * l - 1) / z * out[l - 1] - out[l - 2]
    return out


@njit(cache=True, nogil=True)
def _h1_ratios(lmax, z):
    # r[l] = h_l / h_{l-1}; r[0] is unused
    r = np.zeros(lmax + 1, dtype=np.complex128)
    if lmax >= 1:
        r[1] = -1j + 1.0 / z
    for l in range(2, lmax + 1):
        r[l] = (2 * l - 1) / z - 1.0 / r[l - 1]
    return r


@njit(cache=True, nogil=True)
def _j_ratios(lmax, z, nstart):
    # rho[l] = j_l / j_{l-1} by the continued fraction of the three-term recurrence
    rho = np.zeros(lmax + 1, dtype=np.complex128)
    cur = z / (2 * nstart + 3)
    for l in range(nstart, 0, -1):
        cur = 1.0 / ((2 * l + 1) / z - cur)
        if l <= lmax:
            rho[l] = cur
    return rho


@njit(cache=True, nogil=True)
def _j0_j1(z):
    if abs(z) < 1e-3:
        z2 = z * z
        j0 = 1.0 - z2 / 6.0 + z2 * z2 / 120.0
        j1 = z / 3.0 - z * z2 / 30.0 + z * z2 * z2 / 840.0
    else:
        s = cmath.sin(z)
        c = cmath.cos(z)
        j0 = s / z
        j1 = s / (z * z) - c / z
    return j0, j1


@njit(cache=True, nogil=True)
def _j_seq(lmax, z, nstart):
    out = np.zeros(lmax + 1, dtype=np.complex128)
    if z == 0:
        out[0] = 1.0
        return out
    n = max(nstart, lmax + 1)
    f_next = 0.0 + 0.0j
    f_cur = 1e-300 + 0.0j
    f0 = 0.0 + 0.0j
    f1 = 0.0 + 0.0j
    for l in range(n, -1, -1):
        if l <= lmax:
            out[l] = f_cur
        if l == 1:
            f1 = f_cur
        if l == 0:
            f0 = f_cur
            break
        f_prev = (2 * l + 1) / z * f_cur - f_next
        f_next = f_cur
        f_cur = f_prev
        if abs(f_cur) > 1e250:
            f_cur *= 1e-250
            f_next *= 1e-250
            for k in range(min(l, lmax + 1), lmax + 1):
                out[k] *= 1e-250
    j0, j1 = _j0_j1(z)
    if abs(z) <= 1.0 or abs(j0) >= abs(j1):
        scale = j0 / f0
    else:
        scale = j1 / f1
    for l in range(lmax + 1):
        out[l] *= scale
    return out


@njit(cache=True, nogil=True)
def _psi_logderiv(lmax, z, nstart):
    # D[l] = psi_l'(z) / psi_l(z), psi_l(z) = z j_l(z)
    d = np.zeros(lmax + 1, dtype=np.complex128)
    cur = 0.0 + 0.0j
    for n in range(nstart, 0, -1):
        cur = n / z - 1.0 / (cur + n / z)
        if n - 1 <= lmax:
            d[n - 1] = cur
    return d


@njit(cache=True, nogil=True)
def _jh_products(lmax, x, nstart):
    # P[l] = j_l(x) h_l(x) without forming j_l or h_l where they under/overflow
    p = np.zeros(lmax + 1, dtype=np.complex128)
    lswitch = min(lmax, int(abs(x)) + 20)
    js = _j_seq(lswitch, x, nstart)
    hs = _h1_seq(lswitch, x)
    for l in range(lswitch + 1):
        p[l] = js[l] * hs[l]
    if lswitch < lmax:
        rho = _j_ratios(lmax, x, nstart)
        r = _h1_ratios(lmax, x)
        for l in range(lswitch + 1, lmax + 1):
            p[l] = p[l - 1] * rho[l] * r[l]
    return p


# --------------------------------------------------------------------------
# Python surface
# --------------------------------------------------------------------------

def _check_order(l: int) -> int:
    if int(l) != l or l < 0:
        raise ValueError(f"order must be a non-negative integer, got {l!r}")
    return int(l)


def _finite(value: complex, what: str, l: int, z: complex) -> complex:
    if not cmath.isfinite(value):
        raise SpecialFunctionOverflow(f"{what}_{l}({z}) is outside the double-precision range")
    return value


def spherical_jn_seq(lmax: int, z: complex) -> np.ndarray:
    """Return ``[j_0(z), ..., j_lmax(z)]`` by Miller's algorithm.

    Entries that fall below the smallest representable double underflow to zero.
    """
    lmax = _check_order(lmax)
    z = complex(z)
    return _j_seq(lmax, z, miller_start(lmax, z))


def spherical_h1_seq(lmax: int, z: complex) -> np.ndarray:
    """Return ``[h_0^(1)(z), ..., h_lmax^(1)(z)]`` by upward recurrence."""
    lmax = _check_order(lmax)
    z = complex(z)
    if z == 0:
        raise ValueError("h_l^(1) has a pole at z = 0")
    return _h1_seq(lmax, z)


def jn_ratios(lmax: int, z: complex, nstart: int | None = None) -> np.ndarray:
    """``rho[l] = j_l(z) / j_{l-1}(z)`` for ``l = 1..lmax`` (``rho[0]`` unused)."""
    z = complex(z)
    return _j_ratios(_check_order(lmax), z, nstart or miller_start(lmax, z))


def h1_ratios(lmax: int, z: complex) -> np.ndarray:
    """``r[l] = h_l^(1)(z) / h_{l-1}^(1)(z)`` for ``l = 1..lmax`` (``r[0]`` unused)."""
    return _h1_ratios(_check_order(lmax), complex(z))


def psi_log_derivative(lmax: int, z: complex, nstart: int | None = None) -> np.ndarray:
    """Logarithmic derivative ``D_l(z) = psi_l'(z)/psi_l(z)`` of the Riccati-Bessel psi."""
    z = complex(z)
    return _psi_logderiv(_check_order(lmax), z, nstart or miller_start(lmax, z))


def jh_products(lmax: int, x: complex) -> np.ndarray:
    """``P[l] = j_l(x) h_l^(1)(x)``, finite for every order."""
    x = complex(x)
    return _jh_products(_check_order(lmax), x, miller_start(lmax, x))


def spherical_j(l: int, z: complex) -> complex:
    """Spherical Bessel function of the first kind, ``j_l(z)``."""
    l = _check_order(l)
    z = complex(z)
    if z == 0:
        return 1.0 + 0j if l == 0 else 0j
    return _finite(complex(spherical_jn_seq(l, z)[l]), "j", l, z)


def spherical_h1(l: int, z: complex) -> complex:
    """Spherical Hankel function of the first kind, ``h_l^(1)(z) = j_l(z) + i y_l(z)``."""
    l = _check_order(l)
    z = complex(z)
    if z == 0:
        raise ValueError("h_l^(1) has a pole at z = 0")
    return _finite(complex(_h1_seq(l, z)[l]), "h1", l, z)


def spherical_y(l: int, z: complex) -> complex:
    """Spherical Bessel function of the second kind, ``y_l(z) = -i (h_l^(1) - j_l)``."""
    return -1j * (spherical_h1(l, z) - spherical_j(l, z))


def riccati_derivative(kind: str, l: int, z: complex) -> complex:
    """``d/dz [z f_l(z)]`` for ``f = j`` (kind ``"J"``) or ``f = h^(1)`` (kind ``"H1"``).

    Uses ``d/dz [z f_l] = z f_{l-1} - l f_l``; for ``l = 0`` the lower order is
    replaced by ``f_{-1}``, i.e. ``cos z`` and ``exp(iz)`` respectively.
    """
    l = _check_order(l)
    z = complex(z)
    kind = kind.upper()
    if kind == "J":
        if l == 0:
            return cmath.cos(z)
        if z == 0:
            return 0j
        seq = spherical_jn_seq(l, z)
    elif kind == "H1":
        if z == 0:
            raise ValueError("h_l^(1) has a pole at z = 0")
        if l == 0:
            return cmath.exp(1j * z)
        seq = spherical_h1_seq(l, z)
    else:
        raise ValueError(f"kind must be 'J' or 'H1', got {kind!r}")
    return _finite(complex(z * seq[l - 1] - l * seq[l]), "riccati_" + kind, l, z)
