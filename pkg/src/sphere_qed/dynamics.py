"""Single-excitation dynamics of two or three atoms coupled through the sphere.

Three independent routes are provided:

* closed forms (Markovian exponential decay, resonant strong-coupling Rabi
  oscillations, the tripartite W-basis solutions),
* the memory equation ``dC/dt = int_0^t K(t-t') C(t') dt' + f(t)`` for a
  Lorentzian kernel, solved exactly as two coupled ODEs,
* the weak-coupling master equation for the atomic density matrix.

Phases from line shifts are not modelled; every amplitude is real up to the
sign conventions of the closed forms.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import simpson

from .sphere_scattering import ModeResonance

__all__ = [
    "StrongCouplingParams",
    "AmplitudeTrajectory",
    "KernelModel",
    "DonorDrive",
    "StepSizeError",
    "DivergenceError",
    "PositivityError",
    "RegimeWarning",
    "weak_amplitude",
    "strong_amplitudes",
    "donor_amplitude",
    "volterra_solve",
    "lowering_operators",
    "lindblad_evolve",
    "tripartite_weak",
    "tripartite_strong",
    "asymptotic_weights",
    "uniform_grid",
    "first_peak",
]

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)


class StepSizeError(ValueError):
    """Time step too coarse for the RK4 integrator."""


class DivergenceError(ArithmeticError):
    """An amplitude exceeded the single-excitation probability bound."""


class PositivityError(ArithmeticError):
    """The propagated density matrix lost positivity."""


class RegimeWarning(UserWarning):
    """Parameters outside the validity range of a strong-coupling closed form."""


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StrongCouplingParams:
    """Resonance data for the strong-coupling formulas.

    ``Gamma_C`` is the single-atom rate at the resonance centre in the same
    frequency unit as ``delta_omega_C``; the Rabi frequency is
    ``Omega = sqrt(2 Gamma_C delta_omega_C)``.
    """

    omega_C: float
    delta_omega_C: float
    Gamma_C: float
    Omega_D: float
    detuning: float = 0.0

    def __post_init__(self):
        if self.delta_omega_C < 0 or self.Gamma_C <= 0 or self.Omega_D <= 0:
            raise ValueError("need delta_omega_C >= 0, Gamma_C > 0 and Omega_D > 0")

    @property
    def Omega(self) -> float:
        return math.sqrt(2.0 * self.Gamma_C * self.delta_omega_C)

    @property
    def Omega_pm(self) -> float:
        return SQRT2 * self.Omega

    @property
    def delta_t(self) -> float:
        """Donor interaction time that empties the donor at t = 0."""
        return math.pi / self.Omega_D

    @classmethod
    def from_ratios(cls, delta_over_omega_pm: float, pi_delta_over_omega_D: float, *,
                    delta_omega_C: float = 1.0, omega_C: float = 1.0) -> "StrongCouplingParams":
        """Build from the dimensionless ratios ``dw_C/Omega_pm`` and ``pi dw_C/Omega_D``."""
        if delta_over_omega_pm <= 0 or pi_delta_over_omega_D <= 0:
            raise ValueError("ratios must be positive")
        omega = delta_omega_C / delta_over_omega_pm / SQRT2
        return cls(omega_C=omega_C, delta_omega_C=delta_omega_C,
                   Gamma_C=omega * omega / (2.0 * delta_omega_C),
                   Omega_D=math.pi * delta_omega_C / pi_delta_over_omega_D)

    @classmethod
    def from_resonance(cls, mode: ModeResonance, gamma_C: float, *,
                       omega_D: float | None = None) -> "StrongCouplingParams":
        """From a fitted mode and the absolute single-atom rate at its centre.

        ``omega_D`` defaults to the atoms' own Rabi frequency (donor placed
        where atom A sits).
        """
        omega = math.sqrt(2.0 * gamma_C * mode.delta_omega_C)
        return cls(omega_C=mode.omega_C, delta_omega_C=mode.delta_omega_C, Gamma_C=gamma_C,
                   Omega_D=omega if omega_D is None else omega_D)


@dataclass
class AmplitudeTrajectory:
    """Amplitudes of the tracked one-excitation states on a uniform time grid."""

    time_grid: np.ndarray
    amplitudes: Mapping[str, np.ndarray]
    time_unit: str = "1/omega_T"
    labels: tuple = field(default=())

    def __post_init__(self):
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        self.amplitudes = {k: np.asarray(v, dtype=complex) for k, v in self.amplitudes.items()}
        if not self.labels:
            self.labels = tuple(self.amplitudes)
        total = sum(np.abs(a) ** 2 for a in self.amplitudes.values())
        if np.any(total > 1.0 + 1e-9):
            raise DivergenceError(f"total one-excitation probability reaches {np.max(total):.12g} > 1")

    def population(self, label: str) -> np.ndarray:
        return np.abs(self.amplitudes[label]) ** 2

    def to_csv(self, fh=None, precision: int = 12) -> str:
        """CSV with columns ``t,<label>_re,<label>_im,<label>_abs2`` per label."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        header = ["t"]
        for lab in self.labels:
            header += [f"{lab}_re", f"{lab}_im", f"{lab}_abs2"]
        w.writerow(header)
        fmt = f"{{:.{precision}g}}".format
        for i, t in enumerate(self.time_grid):
            row = [fmt(t)]
            for lab in self.labels:
                a = self.amplitudes[lab][i]
                row += [fmt(a.real), fmt(a.imag), fmt(abs(a) ** 2)]
            w.writerow(row)
        return buf.getvalue() if fh is None else ""


@dataclass(frozen=True)
class KernelModel:
    """Lorentzian memory kernel ``weight * amplitude * exp(-(decay - i detuning) tau)``.

    ``amplitude`` is the single-atom prefactor ``-Omega^2/4``; ``weight`` folds in
    the cross kernels (``1 +- K_AB/K`` for the pair states, ``1 + 2 K_AB/K``
    for the symmetric three-atom state).
    """

    amplitude: float
    decay: float
    detuning: float = 0.0
    parity_sign: int = 0
    weight: float = 1.0

    def __post_init__(self):
        if self.decay <= 0:
            raise ValueError("kernel decay must be positive")
        if self.amplitude > 0:
            raise ValueError("kernel amplitude must be <= 0")

    @property
    def effective_amplitude(self) -> float:
        return self.weight * self.amplitude

    @property
    def rate(self) -> complex:
        return self.decay - 1j * self.detuning

    @property
    def rabi(self) -> float:
        """Oscillation frequency ``2 sqrt(|weight * amplitude|)`` of the undamped kernel."""
        return 2.0 * math.sqrt(abs(self.effective_amplitude))

    def __call__(self, tau):
        return self.effective_amplitude * np.exp(-self.rate * np.asarray(tau))

    @classmethod
    def single(cls, Omega: float, delta_omega_C: float, detuning: float = 0.0) -> "KernelModel":
        return cls(-Omega ** 2 / 4.0, delta_omega_C / 2.0, detuning)

    @classmethod
    def pair(cls, Omega: float, delta_omega_C: float, parity_sign: int, cross_ratio: float = 1.0,
             detuning: float = 0.0) -> "KernelModel":
        """``K_+-`` for the states |+> (``parity_sign=+1``) or |-> (``-1``); ``cross_ratio = K_AB/K``."""
        return cls(-Omega ** 2 / 4.0, delta_omega_C / 2.0, detuning, parity_sign,
                   1.0 + parity_sign * cross_ratio)

    @classmethod
    def triple_symmetric(cls, Omega: float, delta_omega_C: float, cross_ratio: float = 1.0,
                         detuning: float = 0.0) -> "KernelModel":
        return cls(-Omega ** 2 / 4.0, delta_omega_C / 2.0, detuning, 0, 1.0 + 2.0 * cross_ratio)


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------

def uniform_grid(t_end: float, h: float) -> np.ndarray:
    n = int(math.ceil(t_end / h - 1e-9))
    return np.linspace(0.0, n * h, n + 1)


def weak_amplitude(rate: float, t, initial: complex = 1.0):
    """Markovian amplitude ``exp(-rate t / 2) * initial``."""
    t = np.asarray(t, dtype=float)
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    out = np.exp(-0.5 * rate * t) * initial
    return complex(out) if out.ndim == 0 else out


def first_peak(params: StrongCouplingParams, rabi: float | None = None) -> tuple[float, float]:
    """Time and height of the first maximum of ``exp(-dw_C (t + dt)) sin^2(rabi t / 2)``.

    ``rabi`` defaults to ``Omega_pm``.  Setting the derivative to zero gives
    ``tan(rabi t / 2) = rabi / dw_C``.
    """
    a = 0.5 * (params.Omega_pm if rabi is None else rabi)
    k = params.delta_omega_C
    t_star = math.atan2(2.0 * a, k) / a
    return t_star, math.exp(-k * (t_star + params.delta_t)) * math.sin(a * t_star) ** 2


def _check_regime(params: StrongCouplingParams, rabi: float) -> None:
    if params.delta_omega_C >= 0.1 * min(rabi, params.Omega_D):
        warnings.warn(
            f"delta_omega_C/Omega = {params.delta_omega_C / min(rabi, params.Omega_D):.3g}: "
            "strong-coupling closed form needs delta_omega_C << Omega", RegimeWarning, stacklevel=3)


def strong_amplitudes(params: StrongCouplingParams, t, donor_position: str = "at_A", *,
                      strong_state: str = "+"):
    """Donor-prepared pair amplitudes ``(C_+, C_-)`` in the strong-coupling regime.

    The state ``strong_state`` (``"+"`` for an odd multipole, ``"-"`` for an
    even one) oscillates as ``-exp(-dw_C (t + pi/Omega_D)/2) sin(Omega_pm t/2)``;
    the other stays empty.  With the donor at atom B the sign of ``C_-`` flips.
    """
    if donor_position not in ("at_A", "at_B"):
        raise ValueError("donor_position must be 'at_A' or 'at_B'")
    if strong_state not in ("+", "-"):
        raise ValueError("strong_state must be '+' or '-'")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    _check_regime(params, params.Omega_pm)
    c = -np.exp(-0.5 * params.delta_omega_C * (t + params.delta_t)) * np.sin(0.5 * params.Omega_pm * t)
    zero = np.zeros_like(c)
    if strong_state == "+":
        return c, zero
    return zero, (-c if donor_position == "at_B" else c)


def donor_amplitude(params: StrongCouplingParams, t):
    """Upper-state amplitude of the donor atom for ``t`` in ``[-delta_t, 0]``."""
    t = np.asarray(t, dtype=float)
    dt = params.delta_t
    if np.any(t < -dt * (1 + 1e-12)) or np.any(t > dt * 1e-12):
        raise ValueError("donor amplitude is defined on [-delta_t, 0]")
    s = t + dt
    out = np.exp(-0.5 * params.delta_omega_C * s) * np.cos(0.5 * params.Omega_D * s)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# memory equation
# --------------------------------------------------------------------------

@dataclass
class DonorDrive:
    """Driving term left by a donor atom that emptied into the resonance over ``[-delta_t, 0]``.

    For the Lorentzian kernel ``f(t) = projection * K_D(t) * I`` with
    ``K_D(t) = -scale Omega Omega_D / 4 exp(-(decay - i det) t)`` and ``I`` the
    Simpson integral of ``exp((decay - i det) t') C_D(t')`` over the donor
    interval.  ``projection`` is the overlap of the driven state with the
    atoms' mode-function signs: ``sqrt(2)`` for the strongly coupled pair
    state, ``sqrt(3)`` for the symmetric three-atom state, 0 for the dark one.
    """

    params: StrongCouplingParams
    projection: float = SQRT2
    coupling_scale: float = 1.0
    n_quad: int = 2001
    _amp: complex = field(init=False, repr=False)

    def __post_init__(self):
        p = self.params
        lam = p.delta_omega_C / 2.0 - 1j * p.detuning
        n = self.n_quad | 1
        tp = np.linspace(-p.delta_t, 0.0, n)
        integral = simpson(np.exp(lam * tp) * donor_amplitude(p, tp), x=tp)
        self._lam = lam
        self._amp = -self.projection * self.coupling_scale * p.Omega * p.Omega_D / 4.0 * integral

    def __call__(self, t):
        return self._amp * np.exp(-self._lam * np.asarray(t, dtype=float))


def volterra_solve(kernel: KernelModel, driving: Callable | None, grid: Sequence[float], *,
                   c0: complex = 0.0, label: str = "C", check_step: bool = True) -> AmplitudeTrajectory:
    """Solve ``dC/dt = int_0^t K(t-t') C(t') dt' + f(t)`` for a Lorentzian kernel.

    With ``y(t) = int_0^t exp(-(decay - i det)(t-t')) C(t') dt'`` the equation
    becomes ``dC/dt = a y + f``, ``dy/dt = C - (decay - i det) y``, integrated
    with classical RK4 on the (uniform) ``grid``.

    Raises
    ------
    StepSizeError
        If the step exceeds ``0.02 min(2 pi / rabi, 2 / (2 decay))``.
    DivergenceError
        If ``|C|`` exceeds 1.01.
    """
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("grid must be a 1-D array with at least two points")
    h = t[1] - t[0]
    if h <= 0 or not np.allclose(np.diff(t), h, rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform and increasing")
    scales = [1.0 / kernel.decay]
    if kernel.rabi > 0:
        scales.append(2.0 * math.pi / kernel.rabi)
    h_max = 0.02 * min(scales)
    if check_step and h > h_max * (1 + 1e-9):
        raise StepSizeError(f"step {h:.4g} exceeds the limit {h_max:.4g}")

    a = kernel.effective_amplitude
    lam = kernel.rate
    f = driving if driving is not None else (lambda s: 0.0)

    def rhs(tt, c, y):
        return a * y + f(tt), c - lam * y

    c = complex(c0)
    y = 0j
    out = np.empty(len(t), dtype=complex)
    out[0] = c
    for i in range(len(t) - 1):
        ti = t[i]
        k1c, k1y = rhs(ti, c, y)
        k2c, k2y = rhs(ti + 0.5 * h, c + 0.5 * h * k1c, y + 0.5 * h * k1y)
        k3c, k3y = rhs(ti + 0.5 * h, c + 0.5 * h * k2c, y + 0.5 * h * k2y)
        k4c, k4y = rhs(ti + h, c + h * k3c, y + h * k3y)
        c += h / 6.0 * (k1c + 2 * k2c + 2 * k3c + k4c)
        y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        if abs(c) > 1.01:
            raise DivergenceError(f"|C| = {abs(c):.6g} at t = {t[i + 1]:.6g}")
        out[i + 1] = c
    return AmplitudeTrajectory(t, {label: out})


# --------------------------------------------------------------------------
# master equation
# --------------------------------------------------------------------------

def lowering_operators(n_atoms: int) -> list[np.ndarray]:
    """sigma_A for each atom; single-atom basis (|U>, |L>), tensor order A, B, C."""
    low = np.array([[0, 0], [1, 0]], dtype=complex)
    eye = np.eye(2, dtype=complex)
    ops = []
    for k in range(n_atoms):
        op = np.array([[1.0 + 0j]])
        for j in range(n_atoms):
            op = np.kron(op, low if j == k else eye)
        ops.append(op)
    return ops


def lindblad_evolve(n_atoms: int, gamma_matrix, rho0, grid: Sequence[float], *,
                    max_step_rate: float = 0.02) -> np.ndarray:
    """Integrate the collective-decay master equation with RK4.

    ``drho/dt = -1/2 sum_{AA'} G_AA' (s_A^+ s_A' rho - 2 s_A' rho s_A^+ + rho s_A^+ s_A')``.
    Each grid interval is subdivided so that ``h * max|G| <= max_step_rate``.
    Returns the density matrices at the grid points, shape ``(len(grid), d, d)``.
    """
    if n_atoms not in (2, 3):
        raise ValueError("n_atoms must be 2 or 3")
    g = np.asarray(gamma_matrix, dtype=float)
    if g.shape != (n_atoms, n_atoms) or not np.allclose(g, g.T):
        raise ValueError("gamma_matrix must be symmetric and n_atoms x n_atoms")
    if np.linalg.eigvalsh(g).min() < -1e-12 * max(1.0, np.abs(g).max()):
        raise ValueError("gamma_matrix must be positive semidefinite")
    rho = np.array(rho0, dtype=complex)
    d = 2 ** n_atoms
    if rho.shape != (d, d):
        raise ValueError(f"rho0 must be {d}x{d}")
    t = np.asarray(grid, dtype=float)

    sig = lowering_operators(n_atoms)
    jumps = [(g[a, b], sig[b], sig[a].conj().T) for a in range(n_atoms) for b in range(n_atoms) if g[a, b] != 0]
    heff = sum(gab * sdag @ s for gab, s, sdag in jumps) if jumps else np.zeros((d, d), complex)

    def rhs(r):
        out = -0.5 * (heff @ r + r @ heff)
        for gab, s, sdag in jumps:
            out += gab * (s @ r @ sdag)
        return out

    gmax = np.abs(g).max()
    out = np.empty((len(t), d, d), dtype=complex)
    out[0] = rho
    for i in range(len(t) - 1):
        span = t[i + 1] - t[i]
        n_sub = max(1, int(math.ceil(span * gmax / max_step_rate)))
        h = span / n_sub
        for _ in range(n_sub):
            k1 = rhs(rho)
            k2 = rhs(rho + 0.5 * h * k1)
            k3 = rhs(rho + 0.5 * h * k2)
            k4 = rhs(rho + h * k3)
            rho = rho + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        lam_min = np.linalg.eigvalsh(rho).min()
        if lam_min < -1e-8:
            raise PositivityError(f"min eigenvalue {lam_min:.3g} at t = {t[i + 1]:.6g}")
        if abs(np.trace(rho) - 1.0) > 1e-9:
            raise PositivityError(f"trace drifted to {np.trace(rho).real:.12g}")
        out[i + 1] = rho
    return out


# --------------------------------------------------------------------------
# three atoms
# --------------------------------------------------------------------------

def _tripartite_rates(gamma: float, gamma_ab: float) -> tuple[float, float, float]:
    g1 = gamma + 2.0 * gamma_ab
    g2 = gamma - gamma_ab
    if g1 < -1e-12 or g2 < -1e-12:
        raise ValueError(f"negative collective rate (Gamma_1={g1:.6g}, Gamma_2={g2:.6g})")
    return max(g1, 0.0), max(g2, 0.0), max(g2, 0.0)


def tripartite_weak(gamma: float, gamma_ab: float, initial="A_excited", grid=None) -> AmplitudeTrajectory:
    """Markovian decay of the three-atom W-basis amplitudes.

    Rates are ``Gamma + 2 Gamma_AB`` for |1> and ``Gamma - Gamma_AB`` for |2>, |3>.
    ``initial="A_excited"`` means ``C(0) = (1/sqrt3, sqrt(2/3), 0)``; otherwise
    pass three complex amplitudes.
    """
    if isinstance(initial, str):
        if initial != "A_excited":
            raise ValueError("initial must be 'A_excited' or three amplitudes")
        c0 = np.array([1 / SQRT3, math.sqrt(2.0 / 3.0), 0.0], dtype=complex)
    else:
        c0 = np.asarray(initial, dtype=complex)
        if c0.shape != (3,):
            raise ValueError("custom initial state needs three amplitudes")
    rates = _tripartite_rates(gamma, gamma_ab)
    t = np.asarray(grid, dtype=float)
    amps = {str(i + 1): np.exp(-0.5 * rates[i] * t) * c0[i] for i in range(3)}
    return AmplitudeTrajectory(t, amps, time_unit="1/Gamma0")


def asymptotic_weights(gamma: float, gamma_ab: float, initial="A_excited") -> tuple[float, float, float]:
    """Long-time populations of |1>, |2>, |3> under Markovian decay."""
    traj = tripartite_weak(gamma, gamma_ab, initial, grid=[0.0])
    rates = _tripartite_rates(gamma, gamma_ab)
    return tuple(float(abs(traj.amplitudes[str(i + 1)][0]) ** 2) if rates[i] == 0 else 0.0
                 for i in range(3))


def tripartite_strong(params: StrongCouplingParams, grid) -> AmplitudeTrajectory:
    """Symmetric donor driving of three equivalent atoms.

    Only |1> is driven; it oscillates with the collective Rabi frequency
    ``sqrt(3) Omega`` under the same envelope as the pair states.
    """
    t = np.asarray(grid, dtype=float)
    rabi = SQRT3 * params.Omega
    _check_regime(params, rabi)
    c1 = -np.exp(-0.5 * params.delta_omega_C * (t + params.delta_t)) * np.sin(0.5 * rabi * t)
    zero = np.zeros_like(c1)
    return AmplitudeTrajectory(t, {"1": c1, "2": zero, "3": zero.copy()})
