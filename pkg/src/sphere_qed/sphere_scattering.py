"""Drude-Lorentz microsphere: permittivity, TM reflection coefficients, resonances.

Units: frequencies in omega_T, lengths in lambda_T = 2 pi c / omega_T, so the
vacuum wave number of a frequency ``omega`` is ``2 pi omega``.

The exterior TM reflection coefficient is ``B^N_l = -a_l`` with ``a_l`` the
Bohren-Huffman electric Mie coefficient (outgoing h^(1), exp(-i omega t)).  With
this convention ``1 + 2 B^N_l`` is the partial-wave S-matrix element, the
scattered Green-function term reads ``B^N_l h_l^(1) h_l^(1)``, and B vanishes
for epsilon = 1.
"""
from __future__ import annotations

import cmath
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from .special_functions import (
    _h1_ratios,
    _h1_seq,
    _j_ratios,
    _j_seq,
    _psi_logderiv,
    miller_start,
)

log = logging.getLogger(__name__)

__all__ = [
    "PermittivityParams",
    "SphereGeometry",
    "ModeResonance",
    "ResonanceFitError",
    "permittivity",
    "refractive_index",
    "wavenumber",
    "reflection_N",
    "reflection_N_seq",
    "find_resonances",
    "write_resonance_table",
    "read_resonance_table",
]

TWO_PI = 2.0 * math.pi


class ResonanceFitError(RuntimeError):
    """Lorentzian fit of a detected peak exceeded the residual tolerance."""


@dataclass(frozen=True)
class PermittivityParams:
    """Single-resonance Drude-Lorentz material, all in units of omega_T."""

    omega_T: float = 1.0
    omega_P: float = 0.5
    gamma: float = 1e-6

    def __post_init__(self):
        if self.omega_P < 0 or self.omega_T < 0 or self.gamma < 0:
            raise ValueError("omega_T, omega_P and gamma must be non-negative")

    @property
    def omega_L(self) -> float:
        """Upper band edge sqrt(omega_T^2 + omega_P^2)."""
        return math.hypot(self.omega_T, self.omega_P)


@dataclass(frozen=True)
class SphereGeometry:
    """Sphere radius and atom-surface distances, in lambda_T."""

    radius: float = 10.0
    atom_distance: float = 0.02
    second_atom_distance: float | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.atom_distance < 0:
            raise ValueError("atom_distance must be non-negative")
        if self.second_atom_distance is not None and self.second_atom_distance < 0:
            raise ValueError("second_atom_distance must be non-negative")

    @property
    def distance_B(self) -> float:
        return self.atom_distance if self.second_atom_distance is None else self.second_atom_distance

    @property
    def r_A(self) -> float:
        return self.radius + self.atom_distance

    @property
    def r_B(self) -> float:
        return self.radius + self.distance_B


@dataclass(frozen=True)
class ModeResonance:
    """One sphere resonance: multipole order, centre, FWHM and quality factor."""

    l: int
    omega_C: float
    delta_omega_C: float
    quality: float
    kind: str = "SG"
    fit_residual: float = field(default=0.0, compare=False)


def permittivity(omega, params: PermittivityParams):
    """Drude-Lorentz permittivity ``1 + wP^2 / (wT^2 - w^2 - i w gamma)``.

    Accepts scalars or arrays.  A lossless material evaluated exactly at
    ``omega_T`` is singular and raises ``ZeroDivisionError``.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ValueError("omega must be positive")
    denom = params.omega_T ** 2 - w ** 2 - 1j * w * params.gamma
    if np.any(denom == 0):
        raise ZeroDivisionError("lossless permittivity evaluated on its pole omega = omega_T")
    eps = 1.0 + params.omega_P ** 2 / denom
    return complex(eps) if eps.ndim == 0 else eps


def refractive_index(eps: complex) -> complex:
    """sqrt(eps) on the branch with non-negative imaginary part."""
    m = cmath.sqrt(eps)
    if m.imag < 0 or (m.imag == 0 and m.real < 0):
        m = -m
    return m


def wavenumber(omega: float) -> float:
    """Vacuum wave number in 1/lambda_T for a frequency in omega_T."""
    return TWO_PI * omega


@njit(cache=True, nogil=True)
def _mie_b(lmax, x, m, nstart):
    # B[l] = -a_l, l = 1..lmax; index 0 unused
    b = np.zeros(lmax + 1, dtype=np.complex128)
    d = _psi_logderiv(lmax, m * x, nstart)
    r = _h1_ratios(lmax, x + 0j)
    lsw = min(lmax, int(x) + 20)
    js = _j_seq(lsw, x + 0j, nstart)
    hs = _h1_seq(lsw, x + 0j)
    q = np.zeros(lmax + 1, dtype=np.complex128)  # j_l / h_l
    for l in range(lsw + 1):
        q[l] = js[l] / hs[l]
    if lsw < lmax:
        rho = _j_ratios(lmax, x + 0j, nstart)
        for l in range(lsw + 1, lmax + 1):
            q[l] = q[l - 1] * rho[l] / r[l]
    for l in range(1, lmax + 1):
        a_fac = d[l] / m + l / x
        b[l] = -(q[l] * a_fac - q[l - 1] / r[l]) / (a_fac - 1.0 / r[l])
    return b


def reflection_N_seq(lmax: int, omega: float, params: PermittivityParams, radius: float,
                     eps: complex | None = None) -> np.ndarray:
    """TM reflection coefficients ``B^N_l`` for ``l = 0..lmax`` (entry 0 is zero).

    ``eps`` overrides the Drude-Lorentz value (``eps=1`` gives an empty sphere).
    """
    if lmax < 1:
        raise ValueError("lmax must be >= 1")
    if eps is None:
        eps = permittivity(omega, params)
    x = wavenumber(omega) * radius
    m = refractive_index(complex(eps))
    return _mie_b(int(lmax), float(x), m, miller_start(lmax, m * x))


def reflection_N(l: int, omega: float, params: PermittivityParams, geometry: SphereGeometry | float,
                 eps: complex | None = None) -> complex:
    """Single TM reflection coefficient ``B^N_l(omega)``."""
    if l < 1:
        raise ValueError("l must be >= 1")
    radius = geometry.radius if isinstance(geometry, SphereGeometry) else float(geometry)
    return complex(reflection_N_seq(l, omega, params, radius, eps)[l])


# --------------------------------------------------------------------------
# resonance search
# --------------------------------------------------------------------------

def _kind(omega: float, params: PermittivityParams) -> str:
    return "SG" if params.omega_T < omega < params.omega_L else "WG"


def _b_abs2(l: int, omega: float, params: PermittivityParams, radius: float) -> float:
    return abs(reflection_N_seq(l, omega, params, radius)[l]) ** 2


def _half_width(f, w0: float, peak: float, step: float) -> float:
    """Half width at half maximum of a peak at w0 (bracket, then bisect on each side)."""
    sides = []
    for sign in (-1.0, 1.0):
        lo, hi = 0.0, step
        while f(w0 + sign * hi) > 0.5 * peak:
            lo, hi = hi, 2.0 * hi
            if hi > 0.5:
                break
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if f(w0 + sign * mid) > 0.5 * peak:
                lo = mid
            else:
                hi = mid
        sides.append(0.5 * (lo + hi))
    return 0.5 * (sides[0] + sides[1])


def _fit_lorentzian(f, w0: float, hwhm: float, npts: int = 41):
    """Least-squares fit of 1/f as a quadratic over +-3 half widths.

    Returns ``(centre, fwhm, residual)``; the residual is the largest deviation
    of the fitted Lorentzian from the samples relative to the peak value.
    """
    ws = w0 + hwhm * np.linspace(-3.0, 3.0, npts)
    vals = np.array([f(w) for w in ws])
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
        return w0, 2.0 * hwhm, math.inf
    u = (ws - w0) / hwhm
    with np.errstate(over="ignore", divide="ignore"):
        inv = 1.0 / vals
    if not np.all(np.isfinite(inv)):
        return w0, 2.0 * hwhm, math.inf
    c2, c1, c0 = np.polyfit(u, inv, 2)
    if c2 <= 0:
        return w0, 2.0 * hwhm, math.inf
    uc = -c1 / (2.0 * c2)
    half2 = c0 / c2 - uc * uc
    if half2 <= 0:
        return w0, 2.0 * hwhm, math.inf
    model = 1.0 / (c2 * u * u + c1 * u + c0)
    resid = float(np.max(np.abs(model - vals)) / np.max(vals))
    return w0 + uc * hwhm, 2.0 * math.sqrt(half2) * hwhm, resid


def _refine_peak(l: int, lo: float, mid: float, hi: float, params: PermittivityParams, radius: float,
                 max_residual: float) -> ModeResonance:
    f = lambda w: _b_abs2(l, w, params, radius)  # noqa: E731
    # |B|^2 spans many decades; golden section on its log keeps the bracket well scaled
    obj = lambda w: -math.log(max(f(w), 1e-300))  # noqa: E731
    try:
        res = minimize_scalar(obj, bracket=(lo, mid, hi), method="golden", tol=1e-12)
    except ValueError:
        # flat top on the grid: no strict bracket, fall back to a bounded search
        res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    w0 = float(res.x) if lo < res.x < hi else mid
    peak = f(w0)
    if not peak > 0.0:
        raise ResonanceFitError(f"|B|^2 underflows for l={l} near omega={w0:.10f}")
    hwhm = _half_width(f, w0, peak, step=1e-3 * (hi - lo))
    if hwhm > 0.02 * w0:
        raise ResonanceFitError(f"peak of l={l} near omega={w0:.6f} is too broad (HWHM {hwhm:.3g})")
    centre, fwhm, resid = _fit_lorentzian(f, w0, hwhm)
    if resid > max_residual or not math.isfinite(resid):
        raise ResonanceFitError(
            f"Lorentzian fit for l={l} near omega={w0:.10f} has residual {resid:.3g} > {max_residual}")
    return ModeResonance(l=l, omega_C=float(centre), delta_omega_C=float(fwhm), quality=float(centre / fwhm),
                         kind=_kind(centre, params), fit_residual=resid)


def _scan_row(omega: float, lmax: int, params: PermittivityParams, radius: float) -> np.ndarray:
    return np.abs(reflection_N_seq(lmax, omega, params, radius)) ** 2


def find_resonances(l_range: Iterable[int], omega_window: Sequence[float], params: PermittivityParams,
                    geometry: SphereGeometry | float, resolution: int = 2001, *,
                    prominence: float = 10.0, max_residual: float = 0.1,
                    threads: int | None = None, on_fit_error: str = "raise") -> list[ModeResonance]:
    """Locate sharp TM resonances of the sphere inside ``omega_window``.

    Every local maximum of ``|B^N_l(omega)|^2`` on a uniform grid of
    ``resolution`` points is bracketed by its grid neighbours, refined by
    golden-section search and fitted to a Lorentzian over +-3 half widths.
    The fit samples on its own scale, so peaks narrower than the grid step are
    still resolved as long as their tails produce a grid maximum.

    Parameters
    ----------
    l_range : iterable of int
        Multipole orders to scan.
    omega_window : (float, float)
        Frequency window in omega_T, inside (0, 2].
    prominence : float
        Minimum topographic prominence of a grid maximum, as a factor in
        ``|B|^2`` (applied to ``log10 |B|^2``).  |B| of high-order modes is
        tiny in absolute terms, so the test is relative; round-off ripple on
        a smooth background never reaches it.
    on_fit_error : {"raise", "warn"}
        A fit with residual above ``max_residual`` raises
        :class:`ResonanceFitError`, or is logged as a warning and left out.

    Returns
    -------
    list of ModeResonance sorted by ascending ``omega_C`` (then ``l``).
    """
    lo, hi = map(float, omega_window)
    if not (0.0 < lo < hi <= 2.0):
        raise ValueError("omega_window must satisfy 0 < lo < hi <= 2")
    ls = sorted({int(l) for l in l_range})
    if not ls or ls[0] < 1:
        raise ValueError("l_range must contain orders >= 1")
    if on_fit_error not in ("raise", "warn"):
        raise ValueError("on_fit_error must be 'raise' or 'warn'")
    radius = geometry.radius if isinstance(geometry, SphereGeometry) else float(geometry)
    grid = np.linspace(lo, hi, int(resolution))
    lmax = ls[-1]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        table = np.array(list(pool.map(lambda w: _scan_row(w, lmax, params, radius), grid)))

    candidates = []
    for l in ls:
        with np.errstate(divide="ignore"):
            col = np.log10(table[:, l])
        col[~np.isfinite(col)] = -400.0
        peaks, _ = find_peaks(col, prominence=math.log10(prominence))
        candidates.extend((l, int(i)) for i in peaks if 0 < i < len(grid) - 1)

    def refine(item):
        l, i = item
        try:
            return _refine_peak(l, grid[i - 1], grid[i], grid[i + 1], params, radius, max_residual)
        except ResonanceFitError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(refine, candidates))

    found: list[ModeResonance] = []
    rejected = 0
    for item in results:
        if isinstance(item, ResonanceFitError):
            if on_fit_error == "raise":
                raise item
            log.debug("%s", item)
            rejected += 1
            continue
        if lo <= item.omega_C <= hi:
            found.append(item)
    if rejected:
        log.warning("%d candidate peaks rejected (too broad, underflowing or not Lorentzian)", rejected)
    found.sort(key=lambda r: (r.omega_C, r.l))
    return found


# --------------------------------------------------------------------------
# resonance cache
# --------------------------------------------------------------------------

_HEADER = "# l\tomega_C\tdelta_omega_C\tQ\tkind"


def write_resonance_table(path, modes: Iterable[ModeResonance], comments: Sequence[str] = ()) -> None:
    """Write a tab-separated resonance table (frequencies in omega_T, 12 significant digits).

    ``comments`` are written first as ``# ``-prefixed lines.
    """
    lines = [f"# {c}" for c in comments] + [_HEADER]
    for r in modes:
        lines.append(f"{r.l}\t{r.omega_C:.12g}\t{r.delta_omega_C:.12g}\t{r.quality:.12g}\t{r.kind}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_resonance_table(path) -> list[ModeResonance]:
    modes = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            l, wc, dw, q, kind = line.split("\t")
            modes.append(ModeResonance(int(l), float(wc), float(dw), float(q), kind))
    return modes
