import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphere_qed.dynamics import (
    AmplitudeTrajectory,
    DivergenceError,
    DonorDrive,
    KernelModel,
    PositivityError,
    RegimeWarning,
    StepSizeError,
    StrongCouplingParams,
    asymptotic_weights,
    donor_amplitude,
    first_peak,
    lindblad_evolve,
    lowering_operators,
    strong_amplitudes,
    tripartite_strong,
    tripartite_weak,
    uniform_grid,
    volterra_solve,
    weak_amplitude,
)
from sphere_qed.sphere_scattering import ModeResonance

SQ2 = math.sqrt(2.0)


def _damped_oscillator(a, lam, t):
    """Exact C(t) for C' = a y, y' = C - lam y with C(0) = 1, y(0) = 0."""
    s = np.sqrt(complex(-a - lam * lam / 4))
    return np.exp(-lam * t / 2) * (np.cos(s * t) + lam / (2 * s) * np.sin(s * t))


def _params(ratio=0.01, donor=0.01):
    return StrongCouplingParams.from_ratios(ratio, donor)


# ---- closed forms ----

def test_weak_amplitude():
    assert weak_amplitude(2.0, 0.0) == 1.0
    assert weak_amplitude(2.0, 1.5) == pytest.approx(math.exp(-1.5))
    assert np.allclose(np.abs(weak_amplitude(0.3, np.linspace(0, 10, 5))) ** 2,
                       np.exp(-0.3 * np.linspace(0, 10, 5)))
    with pytest.raises(ValueError):
        weak_amplitude(-1.0, 1.0)
    with pytest.raises(ValueError):
        weak_amplitude(1.0, -1.0)


def test_from_ratios_round_trip():
    p = StrongCouplingParams.from_ratios(0.02, 0.05, delta_omega_C=3e-7)
    assert p.delta_omega_C / p.Omega_pm == pytest.approx(0.02)
    assert math.pi * p.delta_omega_C / p.Omega_D == pytest.approx(0.05)
    assert p.Omega == pytest.approx(math.sqrt(2 * p.Gamma_C * p.delta_omega_C))
    assert p.delta_t == pytest.approx(math.pi / p.Omega_D)


def test_from_resonance_defaults_donor_to_rabi():
    mode = ModeResonance(121, 1.0501, 1e-6, 1.05e6, "SG")
    p = StrongCouplingParams.from_resonance(mode, 0.02)
    assert p.Omega_D == pytest.approx(p.Omega)
    assert p.Omega == pytest.approx(math.sqrt(2 * 0.02 * 1e-6))


def test_params_validation():
    with pytest.raises(ValueError):
        StrongCouplingParams(1.0, -1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        StrongCouplingParams.from_ratios(0.0, 0.1)


def test_strong_amplitudes_start_empty_and_respect_parity():
    p = _params()
    t = np.linspace(0, 10 / p.Omega, 50)
    cp, cm = strong_amplitudes(p, t)
    assert cp[0] == 0 and np.all(cm == 0)
    cp2, cm2 = strong_amplitudes(p, t, strong_state="-")
    assert np.all(cp2 == 0) and np.allclose(cm2, cp)
    _, cm3 = strong_amplitudes(p, t, "at_B", strong_state="-")
    assert np.allclose(cm3, -cm2)
    with pytest.raises(ValueError):
        strong_amplitudes(p, t, "at_C")


def test_strong_regime_warning():
    with pytest.warns(RegimeWarning):
        strong_amplitudes(_params(ratio=0.5), [0.0, 1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error", RegimeWarning)
        strong_amplitudes(_params(), [0.0, 1.0])


def test_donor_amplitude_empties_at_zero():
    p = _params()
    assert donor_amplitude(p, -p.delta_t) == pytest.approx(1.0)
    assert abs(donor_amplitude(p, 0.0)) < 1e-12
    with pytest.raises(ValueError):
        donor_amplitude(p, 0.1 * p.delta_t)


def test_first_peak_is_maximum_of_closed_form():
    p = _params(0.01, 0.01)
    t_star, height = first_peak(p)
    t = np.linspace(0, 2 * t_star, 20001)
    cp, _ = strong_amplitudes(p, t)
    pop = cp ** 2
    assert t[np.argmax(pop)] == pytest.approx(t_star, abs=t[1] - t[0])
    assert pop.max() == pytest.approx(height, rel=1e-8)


# ---- memory equation ----

@pytest.mark.parametrize("sign", [1, -1])
def test_volterra_matches_exact_oscillator(sign):
    kern = KernelModel.pair(1.0, 0.02, sign, cross_ratio=0.6)
    grid = uniform_grid(40.0, 0.01)
    traj = volterra_solve(kern, None, grid, c0=1.0)
    exact = _damped_oscillator(kern.effective_amplitude, kern.decay, grid)
    assert np.max(np.abs(traj.amplitudes["C"] - exact)) < 1e-8


def test_volterra_damped_rabi_close_to_closed_form():
    # C(0) = 1 pair state: |C|^2 ~ cos^2(Omega_pm t/2) e^{-dw t/2} over the first two Rabi periods
    p = _params(0.01)
    kern = KernelModel.pair(p.Omega, p.delta_omega_C, +1)
    grid = uniform_grid(4 * math.pi / p.Omega, 0.01 * 2 * math.pi / kern.rabi)
    traj = volterra_solve(kern, None, grid, c0=1.0)
    approx = np.cos(0.5 * p.Omega_pm * grid) ** 2 * np.exp(-0.5 * p.delta_omega_C * grid)
    assert np.max(np.abs(traj.population("C") - approx)) < 0.05


def test_zero_kernel_keeps_amplitude():
    kern = KernelModel(0.0, 1.0)
    traj = volterra_solve(kern, None, uniform_grid(1.0, 0.01), c0=0.3 + 0.4j)
    assert np.allclose(traj.amplitudes["C"], 0.3 + 0.4j, atol=0, rtol=1e-15)


def test_markov_limit():
    # broad kernel: C' ~ -(a / lam) C with a / lam the Markov rate / 2
    gamma = 1e-2
    lam = 50.0
    kern = KernelModel(-gamma * lam / 2, lam)
    grid = uniform_grid(200.0, 1e-4)
    traj = volterra_solve(kern, None, grid, c0=1.0)
    assert np.max(np.abs(traj.amplitudes["C"] - weak_amplitude(gamma, grid))) < 1e-3


def test_step_size_guard():
    kern = KernelModel.single(1.0, 0.01)
    with pytest.raises(StepSizeError):
        volterra_solve(kern, None, uniform_grid(10.0, 0.5), c0=1.0)
    with pytest.raises(ValueError):
        volterra_solve(kern, None, [0.0, 0.01, 0.03], c0=1.0)


def test_divergence_guard():
    with pytest.raises(DivergenceError):
        volterra_solve(KernelModel(0.0, 1.0), lambda t: 1.0, uniform_grid(3.0, 0.01))
    with pytest.raises(DivergenceError):
        AmplitudeTrajectory([0.0], {"a": [0.8], "b": [0.7]})


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelModel(1.0, 1.0)
    with pytest.raises(ValueError):
        KernelModel(-1.0, 0.0)


def test_kernel_callable_and_weights():
    k = KernelModel.triple_symmetric(2.0, 0.4)
    assert k.weight == 3.0
    assert k(0.0) == pytest.approx(-3.0)
    assert k(1.0) == pytest.approx(-3.0 * math.exp(-0.2))
    assert KernelModel.pair(2.0, 0.4, -1).rabi == 0.0


def test_donor_driven_peak_within_five_percent():
    p = _params(0.01, 0.01)
    kern = KernelModel.pair(p.Omega, p.delta_omega_C, +1)
    t_star, height = first_peak(p)
    grid = uniform_grid(2 * t_star, 0.01 * 2 * math.pi / kern.rabi)
    traj = volterra_solve(kern, DonorDrive(p), grid)
    pop = traj.population("C")
    assert pop.max() == pytest.approx(height, rel=0.05)
    assert abs(grid[np.argmax(pop)] - t_star) < 0.05 * t_star


def test_dark_state_is_not_driven():
    p = _params()
    kern = KernelModel.pair(p.Omega, p.delta_omega_C, -1)
    traj = volterra_solve(kern, DonorDrive(p, projection=0.0), uniform_grid(5.0, 0.01))
    assert np.all(traj.amplitudes["C"] == 0)


def test_rk4_order():
    kern = KernelModel.pair(1.0, 0.05, +1)
    t_end = 20.0
    exact = _damped_oscillator(kern.effective_amplitude, kern.decay, t_end)
    errs = []
    for h in (0.02, 0.01, 0.005):
        c = volterra_solve(kern, None, uniform_grid(t_end, h), c0=1.0).amplitudes["C"][-1]
        errs.append(abs(c - exact))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.5


def test_grid_halving_moves_peak_less_than_one_step():
    p = _params()
    kern = KernelModel.pair(p.Omega, p.delta_omega_C, +1)
    h = 0.01 * 2 * math.pi / kern.rabi
    peaks = []
    for step in (h, h / 2):
        grid = uniform_grid(3 * first_peak(p)[0], step)
        pop = volterra_solve(kern, DonorDrive(p), grid).population("C")
        peaks.append(grid[np.argmax(pop)])
    assert abs(peaks[0] - peaks[1]) <= h


@settings(max_examples=20, deadline=None)
@given(ratio=st.floats(0.002, 0.05), cross=st.floats(0.0, 1.0), sign=st.sampled_from([1, -1]))
def test_probability_never_exceeds_one(ratio, cross, sign):
    p = _params(ratio)
    kern = KernelModel.pair(p.Omega, p.delta_omega_C, sign, cross)
    if kern.weight == 0:
        return
    grid = uniform_grid(6 * math.pi / kern.rabi, 0.02 * 2 * math.pi / kern.rabi)
    traj = volterra_solve(kern, None, grid, c0=1.0)
    assert np.all(traj.population("C") <= 1 + 1e-12)


def test_csv_export():
    traj = AmplitudeTrajectory([0.0, 0.5], {"p": [1.0, 0.5j]})
    text = traj.to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,p_re,p_im,p_abs2"
    assert lines[2] == "0.5,0,0.5,0.25"


# ---- master equation ----

def _pair_state(sign):
    v = np.zeros(4, complex)
    v[1] = 1 / SQ2
    v[2] = sign / SQ2
    return np.outer(v, v.conj())


def test_lowering_operators_act_on_right_atom():
    # basis |UU>, |UL>, |LU>, |LL> with atom A first
    sa, sb = lowering_operators(2)
    assert np.allclose(sa @ np.array([0, 1, 0, 0]), [0, 0, 0, 1])
    assert np.allclose(sb @ np.array([0, 1, 0, 0]), 0)
    assert np.allclose(sb @ np.array([0, 0, 1, 0]), [0, 0, 0, 1])
    assert np.allclose(sa @ np.array([1, 0, 0, 0]), [0, 0, 1, 0])


def test_lindblad_dark_and_bright_pair():
    g = np.array([[1.0, 1.0], [1.0, 1.0]])
    grid = np.linspace(0, 30, 31)
    dark = lindblad_evolve(2, g, _pair_state(-1), grid)
    assert np.allclose(dark[-1], _pair_state(-1), atol=1e-12)
    bright = lindblad_evolve(2, g, _pair_state(+1), grid)
    assert abs(bright[-1][1:3, 1:3].trace() - math.exp(-60)) < 1e-6


def test_lindblad_single_excitation_matches_weak_amplitudes():
    gam, gab = 1.0, 0.4
    g = np.array([[gam, gab], [gab, gam]])
    grid = np.linspace(0, 5, 11)
    rho0 = np.zeros((4, 4), complex)
    rho0[1, 1] = 1.0  # |U_A L_B>
    rhos = lindblad_evolve(2, g, rho0, grid)
    for t, rho in zip(grid, rhos):
        cp = weak_amplitude(gam + gab, t, 1 / SQ2)
        cm = weak_amplitude(gam - gab, t, 1 / SQ2)
        v = np.array([0, (cp + cm) / SQ2, (cp - cm) / SQ2, 0])
        ref = np.outer(v, v.conj())
        ref[3, 3] = 1 - np.vdot(v, v).real
        dist = 0.5 * np.abs(np.linalg.eigvalsh(rho - ref)).sum()
        assert dist < 1e-6


def test_lindblad_input_validation():
    with pytest.raises(ValueError):
        lindblad_evolve(2, [[1.0, 2.0], [2.0, 1.0]], _pair_state(1), [0, 1])
    with pytest.raises(ValueError):
        lindblad_evolve(4, np.eye(4), np.eye(16) / 16, [0, 1])


def test_lindblad_rejects_nonpositive_state():
    rho = np.diag([0.0, 1.2, -0.2, 0.0]).astype(complex)
    with pytest.raises(PositivityError):
        lindblad_evolve(2, np.eye(2), rho, [0.0, 0.1])


def test_lindblad_three_atoms_symmetric_decay():
    g = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
    v = np.zeros(8, complex)
    v[[3, 5, 6]] = 1 / math.sqrt(3)  # one excitation shared by A, B, C
    rhos = lindblad_evolve(3, g, np.outer(v, v), np.linspace(0, 2, 5))
    pop = np.real(v.conj() @ rhos[-1] @ v)
    assert pop == pytest.approx(math.exp(-2 * 2.0), rel=1e-6)


# ---- three atoms ----

def test_tripartite_weak_limits():
    grid = np.linspace(0, 50, 6)
    traj = tripartite_weak(1.0, 1.0, grid=grid)
    assert traj.population("2")[-1] == pytest.approx(2 / 3)
    assert traj.population("1")[-1] < 1e-30
    assert asymptotic_weights(1.0, 1.0) == pytest.approx((0.0, 2 / 3, 0.0))
    assert asymptotic_weights(1.0, -0.5) == pytest.approx((1 / 3, 0.0, 0.0))
    assert asymptotic_weights(1.0, 0.2) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        tripartite_weak(1.0, -0.8, grid=grid)


def test_tripartite_weak_matches_master_equation():
    gam, gab = 1.0, 0.3
    grid = np.linspace(0, 3, 4)
    traj = tripartite_weak(gam, gab, grid=grid)
    v = np.zeros(8, complex)
    v[3] = 1.0  # bit 0 = U, 1 = L with A as the leading bit: only A excited is 0b011
    rhos = lindblad_evolve(3, np.full((3, 3), gab) + (gam - gab) * np.eye(3), np.outer(v, v), grid)
    w1 = np.zeros(8); w1[[3, 5, 6]] = 1 / math.sqrt(3)
    assert np.allclose([np.real(w1 @ r @ w1) for r in rhos], traj.population("1"), atol=1e-9)


def test_tripartite_strong_matches_volterra():
    p = _params(0.01, 0.01)
    kern = KernelModel.triple_symmetric(p.Omega, p.delta_omega_C)
    rabi = math.sqrt(3) * p.Omega
    assert kern.rabi == pytest.approx(rabi, rel=1e-12)
    t_star, height = first_peak(p, rabi=rabi)
    grid = uniform_grid(2 * t_star, 0.01 * 2 * math.pi / kern.rabi)
    num = volterra_solve(kern, DonorDrive(p, projection=math.sqrt(3)), grid).population("C")
    closed = tripartite_strong(p, grid).population("1")
    assert num.max() == pytest.approx(closed.max(), rel=0.05)
    assert num.max() == pytest.approx(height, rel=0.05)
