"""Medium-assisted decay rates of two radially oriented atoms at antipodal points.

All rates are normalised to the free-space single-atom rate Gamma_0.  The
multipole series is summed in a factorised form,

    B_l h_l(k r_A)^2 = -(A P_l - P_{l-1} r_l) / (A - 1/r_l) * (h_l(k r_A)/h_l(k R))^2,

with ``P_l = j_l(kR) h_l(kR)``, ``r_l = h_l(kR)/h_{l-1}(kR)`` and
``A = D_l(m kR)/m + l/(kR)``.  Every factor stays O(1) at orders far beyond
the size parameter, which is where the series for atoms a few hundredths of
a wavelength from the surface converges.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .special_functions import _h1_ratios, _jh_products, _psi_logderiv, lmax_heuristic, miller_start
from .sphere_scattering import (
    PermittivityParams,
    SphereGeometry,
    permittivity,
    refractive_index,
    wavenumber,
)

log = logging.getLogger(__name__)

__all__ = [
    "RateSet",
    "ConventionViolation",
    "ApproximationWarning",
    "series_terms",
    "gamma_pair_series",
    "gamma_single_resonant",
    "parity_rates",
    "gamma_ab_freespace",
    "freespace_ratio",
]

RATE_TOL = 1e-10
L_CAP = 1 << 17


class ConventionViolation(ArithmeticError):
    """A decay rate came out negative: the reflection-coefficient convention is broken."""


class ApproximationWarning(UserWarning):
    """A resonance-dominated approximation was used outside its validity range."""


@dataclass(frozen=True)
class RateSet:
    """Gamma_0-normalised rates at one frequency and geometry.

    ``gamma_plus``/``gamma_minus`` are the rates of the symmetric and
    antisymmetric one-excitation states.  ``tail_estimate`` bounds the
    neglected part of the series (geometric extrapolation of the last terms).
    """

    gamma_single: float
    gamma_cross: float
    gamma_plus: float
    gamma_minus: float
    omega: float
    truncation: int
    converged: bool
    tail_estimate: float = 0.0


@njit(cache=True, nogil=True)
def _terms(lmax, x, xa, m, b_scale, nstart):
    # X[l] = l(l+1)(2l+1)/xa^2 * h_l(xa) [j_l(xa) + B_l h_l(xa)], l = 1..lmax
    out = np.zeros(lmax + 1, dtype=np.complex128)
    pa = _jh_products(lmax, xa + 0j, nstart)
    if b_scale == 0.0:
        for l in range(1, lmax + 1):
            out[l] = l * (l + 1.0) * (2 * l + 1.0) / (xa * xa) * pa[l]
        return out
    p = _jh_products(lmax, x + 0j, nstart)
    r = _h1_ratios(lmax, x + 0j)
    ra = _h1_ratios(lmax, xa + 0j)
    d = _psi_logderiv(lmax, m * x, nstart)
    hr = (x / xa) * np.exp(1j * (xa - x))  # h_0(xa) / h_0(x)
    for l in range(1, lmax + 1):
        hr *= ra[l] / r[l]
        a_fac = d[l] / m + l / x
        scat = -(a_fac * p[l] - p[l - 1] * r[l]) / (a_fac - 1.0 / r[l]) * hr * hr
        out[l] = l * (l + 1.0) * (2 * l + 1.0) / (xa * xa) * (pa[l] + b_scale * scat)
    return out


def series_terms(lmax: int, omega: float, params: PermittivityParams, geometry: SphereGeometry, *,
                 b_scale: float = 1.0, eps: complex | None = None) -> np.ndarray:
    """Complex series terms ``X_l`` for ``l = 0..lmax`` (entry 0 is zero).

    ``Gamma = 1.5 * sum Re X_l`` and ``Gamma_AB = -1.5 * sum (-1)^l Re X_l``.
    ``b_scale`` multiplies the reflection coefficient: 0 gives free space,
    -1 flips the sign convention (used by the mutation check).
    """
    x = wavenumber(omega) * geometry.radius
    xa = wavenumber(omega) * geometry.r_A
    if eps is None:
        eps = permittivity(omega, params)
    m = refractive_index(complex(eps))
    nstart = miller_start(lmax, max(abs(m * x), xa))
    return _terms(int(lmax), float(x), float(xa), m, float(b_scale), nstart)


def _tail(inc: np.ndarray) -> float:
    """Geometric estimate of the remaining sum from the last same-parity increments."""
    a, b = abs(inc[-2]), abs(inc[-1])
    if a == 0.0 or b >= a:
        return abs(b) * 10.0
    q = b / a
    return b * q / (1.0 - q)


def gamma_pair_series(omega_A: float, geometry: SphereGeometry, params: PermittivityParams,
                      l_max: int | None = None, *, b_scale: float = 1.0, eps: complex | None = None,
                      tol: float = RATE_TOL, l_cap: int = L_CAP) -> RateSet:
    """Exact multipole series for Gamma, Gamma_AB and Gamma_+- of two antipodal radial dipoles.

    Without ``l_max`` the truncation starts at ``lmax_heuristic(k r_A)`` and is
    doubled until the last three increments of both Gamma_+ (odd l) and
    Gamma_- (even l) are below ``tol`` relative to the respective rate, or
    ``l_cap`` is reached; ``converged`` reports which happened.
    """
    if omega_A <= 0:
        raise ValueError("omega_A must be positive")
    if not math.isclose(geometry.atom_distance, geometry.distance_B, rel_tol=0, abs_tol=1e-15):
        raise ValueError("the pair series requires equal atom-surface distances")
    xa = wavenumber(omega_A) * geometry.r_A
    adaptive = l_max is None
    lmax = lmax_heuristic(xa) if adaptive else int(l_max)
    while True:
        x_terms = series_terms(lmax, omega_A, params, geometry, b_scale=b_scale, eps=eps).real
        odd = 3.0 * x_terms[1::2]
        even = 3.0 * x_terms[2::2]
        g_plus = float(np.sum(odd))
        g_minus = float(np.sum(even))
        ok = (len(odd) >= 3 and len(even) >= 3
              and np.all(np.abs(odd[-3:]) < tol * max(abs(g_plus), 1e-300))
              and np.all(np.abs(even[-3:]) < tol * max(abs(g_minus), 1e-300)))
        if ok or not adaptive or lmax >= l_cap:
            break
        lmax = min(2 * lmax, l_cap)
    if not ok:
        log.warning("rate series not converged at omega=%.10g, l_max=%d", omega_A, lmax)
    for name, g in (("gamma_plus", g_plus), ("gamma_minus", g_minus)):
        if g < -1e-9:
            raise ConventionViolation(f"{name} = {g:.6g} < 0 at omega={omega_A:.10g}")
    return RateSet(
        gamma_single=0.5 * (g_plus + g_minus),
        gamma_cross=0.5 * (g_plus - g_minus),
        gamma_plus=g_plus,
        gamma_minus=g_minus,
        omega=float(omega_A),
        truncation=lmax,
        converged=bool(ok),
        tail_estimate=max(_tail(odd), _tail(even)),
    )


def gamma_single_resonant(omega_A: float, geometry: SphereGeometry, params: PermittivityParams, l: int, *,
                          full: RateSet | None = None, rel_tol: float = 0.1) -> float:
    """Single-multipole approximation of Gamma at a resonance of order ``l``.

    ``1.5 l(l+1)(2l+1) Re{[h_l(k r_A)/(k r_A)]^2 B^N_l}``.  The full series is
    evaluated for comparison (or taken from ``full``) and an
    :class:`ApproximationWarning` is issued when the two differ by more than
    ``rel_tol``.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    lmax = max(int(l), 1)
    x_all = series_terms(lmax, omega_A, params, geometry, b_scale=1.0)
    x_free = series_terms(lmax, omega_A, params, geometry, b_scale=0.0)
    value = 1.5 * float((x_all[l] - x_free[l]).real)
    if full is None:
        full = gamma_pair_series(omega_A, geometry, params)
    ref = full.gamma_single
    if abs(value - ref) > rel_tol * abs(ref):
        warnings.warn(
            f"single-multipole rate {value:.4g} differs from the full series {ref:.4g} by more than "
            f"{100 * rel_tol:.0f}% (l={l}, omega={omega_A:.10g})", ApproximationWarning, stacklevel=2)
    return value


def parity_rates(gamma_single: float, l: int) -> tuple[float, float]:
    """Resonance-dominated split ``Gamma_+- = Gamma [1 -+ (-1)^l]``."""
    sign = -1.0 if l % 2 else 1.0
    return gamma_single * (1.0 - sign), gamma_single * (1.0 + sign)


def gamma_ab_freespace(separation_d: float, omega: float) -> float:
    """Free-space cross rate of two parallel dipoles along their separation axis.

    ``3 [sin u / u^3 - cos u / u^2]`` with ``u = k d``.  This is the B = 0
    limit of the pair series: the series describes the two radial dipoles as
    parallel vectors on the axis through the sphere centre.
    """
    if separation_d <= 0:
        raise ValueError("separation must be positive")
    u = wavenumber(omega) * separation_d
    if u < 0.1:
        # 3 j_1(u)/u = 3 sum_k (-u^2/2)^k / (k! (2k+3)!!); closed form cancels badly here
        term, total = 1.0, 1.0
        for k in range(1, 6):
            term *= -u * u / (2.0 * k * (2 * k + 3))
            total += term
        return total
    return 3.0 * (math.sin(u) / u ** 3 - math.cos(u) / u ** 2)


def freespace_ratio(geometry: SphereGeometry, omega: float) -> float:
    """Gamma_-/Gamma_+ of the antipodal radial pair with the sphere removed."""
    g_ab = gamma_ab_freespace(2.0 * geometry.r_A, omega)
    return (1.0 - g_ab) / (1.0 + g_ab)
