"""Command-line driver: resonance tables, rate sweeps, entanglement and Bell data as CSV.

Configuration is a ``key = value`` text file with ``#`` comments and dotted
section keys; ``--set key=value`` overrides single entries.  Every CSV starts
with a comment block echoing the fully resolved configuration.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import coupling_rates as cr
from . import dynamics as dyn
from . import entanglement_metrics as em
from . import special_functions as sf
from .sphere_scattering import (
    ModeResonance,
    PermittivityParams,
    ResonanceFitError,
    SphereGeometry,
    find_resonances,
    read_resonance_table,
    write_resonance_table,
)

log = logging.getLogger("sphere_qed")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration file or override."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable, object]] = {
    "material.omega_T": (float, 1.0),
    "material.omega_P": (float, 0.5),
    "material.gamma": (float, 1e-6),
    "geometry.radius": (float, 10.0),
    "geometry.atom_distance": (float, 0.02),
    "atom.omega_A": (float, 1.0501),
    "atom.Gamma0": (float, 1e-6),
    "atom.on_resonance": (_bool, False),
    "atom.mode_l": (int, 0),
    "sweep.axis": (str, "frequency"),
    "sweep.start": (float, 1.04),
    "sweep.stop": (float, 1.06),
    "sweep.points": (int, 201),
    "sweep.scale": (str, "linear"),
    "time.stop": (float, 0.0),
    "time.points": (int, 2001),
    "strong.source": (str, "ratios"),
    "strong.delta_over_omega_pm": (float, 0.01),
    "strong.pi_delta_over_omega_D": (float, 0.01),
    "strong.omega_D_over_omega": (float, 1.0),
    "resonance.l_min": (int, 1),
    "resonance.l_max": (int, 300),
    "resonance.window_lo": (float, 1.04),
    "resonance.window_hi": (float, 1.06),
    "resonance.resolution": (int, 2001),
    "resonance.cache": (str, "resonances.tsv"),
    "eof.regime": (str, "weak"),
    "bell.theta": (float, math.pi / 4),
    "bell.gammas": (_floats, (1e-6, 1e-5)),
    "bell.scan_start": (float, 0.01),
    "bell.scan_stop": (float, 1.0),
    "bell.scan_points": (int, 41),
    "tripartite.mode": (str, "weak_A_excited"),
    "tripartite.gamma": (float, 1.0),
    "tripartite.gamma_ab": (float, -0.5),
    "output.precision": (int, 12),
}

CHOICES = {
    "sweep.axis": ("frequency", "distance"),
    "sweep.scale": ("linear", "log"),
    "strong.source": ("ratios", "sphere"),
    "eof.regime": ("weak", "strong"),
    "tripartite.mode": ("weak_A_excited", "strong_symmetric"),
}


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


@dataclass
class RunConfig:
    """Resolved configuration (flat dotted keys) with typed accessors."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def material(self) -> PermittivityParams:
        v = self.values
        return PermittivityParams(v["material.omega_T"], v["material.omega_P"], v["material.gamma"])

    @property
    def geometry(self) -> SphereGeometry:
        return SphereGeometry(self.values["geometry.radius"], self.values["geometry.atom_distance"])

    def echo(self) -> list[str]:
        return [f"{k} = {_format_value(self.values[k])}" for k in SCHEMA]

    def validate(self) -> None:
        v = self.values
        for key, allowed in CHOICES.items():
            if v[key] not in allowed:
                raise ConfigError(f"{key} must be one of {', '.join(allowed)}")
        for key in ("material.omega_T", "atom.omega_A", "atom.Gamma0", "geometry.radius",
                    "geometry.atom_distance", "resonance.window_lo"):
            if not v[key] > 0:
                raise ConfigError(f"{key} must be positive")
        if v["material.omega_P"] < 0 or v["material.gamma"] < 0:
            raise ConfigError("material.omega_P and material.gamma must be non-negative")
        if v["sweep.points"] < 2 or v["time.points"] < 2 or v["bell.scan_points"] < 2:
            raise ConfigError("point counts must be >= 2")
        if not v["sweep.start"] < v["sweep.stop"]:
            raise ConfigError("sweep.start must be < sweep.stop")
        if not v["sweep.start"] > 0:
            raise ConfigError("sweep.start must be positive")
        if not 0 < v["bell.scan_start"] < v["bell.scan_stop"]:
            raise ConfigError("need 0 < bell.scan_start < bell.scan_stop")
        if not v["resonance.window_lo"] < v["resonance.window_hi"] <= 2.0:
            raise ConfigError("need resonance.window_lo < resonance.window_hi <= 2")
        if not 1 <= v["resonance.l_min"] <= v["resonance.l_max"]:
            raise ConfigError("need 1 <= resonance.l_min <= resonance.l_max")
        if v["resonance.resolution"] < 3:
            raise ConfigError("resonance.resolution must be >= 3")
        if v["strong.delta_over_omega_pm"] <= 0 or v["strong.pi_delta_over_omega_D"] <= 0 \
                or v["strong.omega_D_over_omega"] <= 0:
            raise ConfigError("strong-coupling ratios must be positive")
        if not v["bell.gammas"] or min(v["bell.gammas"]) <= 0:
            raise ConfigError("bell.gammas must list positive damping constants")
        if not 1 <= v["output.precision"] <= 17:
            raise ConfigError("output.precision must be in 1..17")


def _assign(values: dict, key: str, text: str, where: str) -> None:
    key = key.strip()
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    parser = SCHEMA[key][0]
    try:
        values[key] = parser(text.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def load_config(path: str | None = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Defaults, then the config file, then ``key=value`` overrides."""
    values = {k: d for k, (_, d) in SCHEMA.items()}
    if path:
        with open(path) as fh:
            for n, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{n}: expected 'key = value'")
                key, text = line.split("=", 1)
                _assign(values, key, text, f"{path}:{n}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, text = item.split("=", 1)
        _assign(values, key, text, "--set")
    cfg = RunConfig(values)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

class CsvOut:
    """CSV writer with the config echo; buffers everything and writes once.

    Comments always precede the column header, whatever order they are added in.
    """

    def __init__(self, cfg: RunConfig, command: str, columns: Sequence[str]):
        self.fmt = f"{{:.{cfg['output.precision']}g}}".format
        self.comments = [f"sphere_qed {command}"] + cfg.echo()
        self.columns = list(columns)
        self.rows = io.StringIO()
        self.writer = csv.writer(self.rows, lineterminator="\n")

    def comment(self, text: str) -> None:
        self.comments.append(text)

    def row(self, values: Sequence) -> None:
        out = []
        for v in values:
            if isinstance(v, (bool, np.bool_)):
                out.append("1" if v else "0")
            elif isinstance(v, str):
                out.append(v)
            else:
                out.append(self.fmt(float(v)))
        self.writer.writerow(out)

    def text(self) -> str:
        head = io.StringIO()
        for c in self.comments:
            head.write(f"# {c}\n")
        csv.writer(head, lineterminator="\n").writerow(self.columns)
        return head.getvalue() + self.rows.getvalue()


def _emit(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _suffixed(path: str | None, suffix: str) -> str | None:
    if path in (None, "-"):
        return None
    stem, ext = os.path.splitext(path)
    return f"{stem}{suffix}{ext or '.csv'}"


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------

def _scan_key(cfg: RunConfig, params: PermittivityParams) -> str:
    v = cfg.values
    parts = [params.omega_T, params.omega_P, params.gamma, v["geometry.radius"], v["resonance.l_min"],
             v["resonance.l_max"], v["resonance.window_lo"], v["resonance.window_hi"], v["resonance.resolution"]]
    return "scan " + " ".join(repr(p) for p in parts)


def _cached_modes(path: str, key: str) -> list[ModeResonance] | None:
    try:
        with open(path) as fh:
            first = fh.readline().strip()
    except OSError:
        return None
    if first != f"# {key}":
        return None
    return read_resonance_table(path)


def _modes(cfg: RunConfig, threads: int | None, params: PermittivityParams | None = None,
           use_cache: bool = True) -> list[ModeResonance]:
    params = params or cfg.material
    key = _scan_key(cfg, params)
    cache = cfg["resonance.cache"]
    if use_cache and cache:
        modes = _cached_modes(cache, key)
        if modes is not None:
            log.info("resonance cache hit: %s (no rescan)", cache)
            return modes
    v = cfg.values
    return find_resonances(range(v["resonance.l_min"], v["resonance.l_max"] + 1),
                           (v["resonance.window_lo"], v["resonance.window_hi"]), params,
                           cfg.geometry, v["resonance.resolution"], threads=threads, on_fit_error="warn")


def _select_mode(cfg: RunConfig, modes: Sequence[ModeResonance]) -> ModeResonance:
    if not modes:
        raise ArithmeticError("no resonance found in the configured window")
    if cfg["atom.mode_l"] > 0:
        same = [m for m in modes if m.l == cfg["atom.mode_l"]]
        if not same:
            raise ArithmeticError(f"no resonance of order l={cfg['atom.mode_l']} in the window")
        modes = same
    return min(modes, key=lambda m: (abs(m.omega_C - cfg["atom.omega_A"]), m.l))


def _strong_state(mode: ModeResonance) -> str:
    return "+" if mode.l % 2 else "-"


def _sphere_strong_params(cfg: RunConfig, mode: ModeResonance, params: PermittivityParams,
                          geometry: SphereGeometry | None = None) -> tuple[dyn.StrongCouplingParams, cr.RateSet]:
    rates = cr.gamma_pair_series(mode.omega_C, geometry or cfg.geometry, params)
    gamma_c = rates.gamma_single * cfg["atom.Gamma0"]
    omega = math.sqrt(2.0 * gamma_c * mode.delta_omega_C)
    sp = dyn.StrongCouplingParams.from_resonance(mode, gamma_c, omega_D=cfg["strong.omega_D_over_omega"] * omega)
    return sp, rates


def _ratio_params(cfg: RunConfig) -> dyn.StrongCouplingParams:
    return dyn.StrongCouplingParams.from_ratios(cfg["strong.delta_over_omega_pm"],
                                                cfg["strong.pi_delta_over_omega_D"])


def _time_axis(cfg: RunConfig, default_stop: float) -> np.ndarray:
    stop = cfg["time.stop"] if cfg["time.stop"] > 0 else default_stop
    return np.linspace(0.0, stop, cfg["time.points"])


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_resonances(cfg: RunConfig, out: str | None, threads: int | None) -> int:
    params = cfg.material
    key = _scan_key(cfg, params)
    cache = cfg["resonance.cache"]
    target = out if out not in (None, "-") else cache
    modes = _cached_modes(target, key) if target else None
    if modes is not None:
        print(f"resonance cache hit: {target} (no rescan)", file=sys.stderr)
    else:
        modes = _modes(cfg, threads, params, use_cache=False)
        if target:
            write_resonance_table(target, modes, comments=[key])
    if not modes:
        warnings.warn("no sharp resonance found in the configured window", RuntimeWarning, stacklevel=1)
        print("warning: empty resonance table", file=sys.stderr)
        return EXIT_OK
    best = min(modes, key=lambda m: abs(m.omega_C - cfg["atom.omega_A"]))
    print(f"{len(modes)} modes; nearest to omega_A={cfg['atom.omega_A']!r}: l={best.l} "
          f"omega_C={best.omega_C:.12g} delta_omega_C={best.delta_omega_C:.6g} Q={best.quality:.6g} {best.kind}")
    return EXIT_OK


def _rate_point(omega: float, geometry: SphereGeometry, params: PermittivityParams):
    try:
        r = cr.gamma_pair_series(omega, geometry, params)
        return r.gamma_plus, r.gamma_minus, r.converged
    except (ArithmeticError, ValueError) as exc:
        log.warning("rate evaluation failed at omega=%.12g: %s", omega, exc)
        return math.nan, math.nan, False


def cmd_rates(cfg: RunConfig, out: str | None, threads: int | None) -> int:
    params = cfg.material
    v = cfg.values
    space = np.geomspace if v["sweep.scale"] == "log" else np.linspace
    xs = space(v["sweep.start"], v["sweep.stop"], v["sweep.points"])
    omega_A = v["atom.omega_A"]
    if v["atom.on_resonance"]:
        mode = _select_mode(cfg, _modes(cfg, threads, params))
        omega_A = mode.omega_C
        log.info("omega_A locked to l=%d mode at %.12g", mode.l, omega_A)
    if v["sweep.axis"] == "frequency":
        jobs = [(float(x), cfg.geometry) for x in xs]
    else:
        jobs = [(omega_A, SphereGeometry(v["geometry.radius"], float(x))) for x in xs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda j: _rate_point(j[0], j[1], params), jobs))
    csv_out = CsvOut(cfg, "rates", ["x", "gamma_plus_over_gamma0", "gamma_minus_over_gamma0", "converged"])
    csv_out.comment(f"x = {'omega_A [omega_T]' if v['sweep.axis'] == 'frequency' else 'delta_r_A [lambda_T]'}"
                    + ("" if v["sweep.axis"] == "frequency" else f", omega_A = {omega_A!r}"))
    for x, (gp, gm, ok) in zip(xs, results):
        csv_out.row([x, gp, gm, bool(ok)])
    _emit(csv_out.text(), out)
    n_bad = sum(1 for r in results if not r[2])
    if n_bad:
        print(f"warning: {n_bad} sweep points not converged", file=sys.stderr)
    return EXIT_OK


def _strong_for_dynamics(cfg: RunConfig, threads) -> tuple[dyn.StrongCouplingParams, str]:
    if cfg["strong.source"] == "ratios":
        return _ratio_params(cfg), "+"
    mode = _select_mode(cfg, _modes(cfg, threads))
    sp, _ = _sphere_strong_params(cfg, mode, cfg.material)
    return sp, _strong_state(mode)


def cmd_eof(cfg: RunConfig, out: str | None, threads: int | None, regime: str | None = None) -> int:
    regime = regime or cfg["eof.regime"]
    if regime not in CHOICES["eof.regime"]:
        raise ConfigError("regime must be weak or strong")
    if regime == "weak":
        x = _time_axis(cfg, 5.0)
        csv_out = CsvOut(cfg, "eof weak", ["t_gamma", "p", "E_F", "bound_p"])
        csv_out.comment("t in units of 1/Gamma_pm of the populated state; p = exp(-t)/2")
        for xi in x:
            p = 0.5 * math.exp(-xi)
            csv_out.row([xi, p, em.entanglement_of_formation(em.build_mixed_state(p)), p])
    else:
        sp, state = _strong_for_dynamics(cfg, threads)
        x = _time_axis(cfg, 5 * 2 * math.pi / math.sqrt(2.0))
        t = x / sp.Omega
        cp, cm = dyn.strong_amplitudes(sp, t, strong_state=state)
        c = cp if state == "+" else cm
        csv_out = CsvOut(cfg, "eof strong", ["t_omega", "p", "E_F"])
        for xi, ci in zip(x, c):
            p = min(abs(ci) ** 2, 1.0)
            csv_out.row([xi, p, em.entanglement_of_formation(em.build_mixed_state(p))])
    _emit(csv_out.text(), out)
    return EXIT_OK


def _bell_curve(sp: dyn.StrongCouplingParams, t: np.ndarray, theta: float, state: str) -> list[float]:
    cp, cm = dyn.strong_amplitudes(sp, t, strong_state=state)
    c = cp if state == "+" else cm
    sign = 1 if state == "+" else -1
    return [em.bell_parameter(em.build_mixed_state(min(abs(ci) ** 2, 1.0), sign), theta) for ci in c]


def cmd_bell(cfg: RunConfig, out: str | None, threads: int | None) -> int:
    theta = cfg["bell.theta"]
    if cfg["strong.source"] == "ratios":
        sp = _ratio_params(cfg)
        x = _time_axis(cfg, 5 * 2 * math.pi / math.sqrt(2.0))
        csv_out = CsvOut(cfg, "bell", ["t_omega", "B_S"])
        t_peak, p_peak = dyn.first_peak(sp)
        csv_out.comment(f"first maximum B_S = {2 * math.sqrt(2) * p_peak:.12g} at t_omega = {t_peak * sp.Omega:.12g}")
        for xi, b in zip(x, _bell_curve(sp, x / sp.Omega, theta, "+")):
            csv_out.row([xi, b])
        _emit(csv_out.text(), out)
        return EXIT_OK

    gamma0 = cfg["atom.Gamma0"]
    curves = []
    for g in cfg["bell.gammas"]:
        params = PermittivityParams(cfg["material.omega_T"], cfg["material.omega_P"], g)
        mode = _select_mode(cfg, _modes(cfg, threads, params))
        sp, _ = _sphere_strong_params(cfg, mode, params)
        curves.append((g, mode, sp))
    _, mode0, sp0 = curves[0]
    x = _time_axis(cfg, 5 * 2 * math.pi / sp0.Omega_pm * gamma0)
    csv_out = CsvOut(cfg, "bell", ["t_gamma0"] + [f"B_S_gamma={g!r}" for g, _, _ in curves])
    for g, mode, sp in curves:
        csv_out.comment(f"gamma={g!r}: l={mode.l} omega_C={mode.omega_C!r} delta_omega_C={mode.delta_omega_C!r} "
                        f"Omega={sp.Omega!r} Omega_D={sp.Omega_D!r}")
    cols = [_bell_curve(sp, x / gamma0, theta, _strong_state(mode)) for _, mode, sp in curves]
    for i, xi in enumerate(x):
        csv_out.row([xi] + [c[i] for c in cols])

    params0 = PermittivityParams(cfg["material.omega_T"], cfg["material.omega_P"], curves[0][0])
    drs = np.geomspace(cfg["bell.scan_start"], cfg["bell.scan_stop"], cfg["bell.scan_points"])

    def scan_point(dr):
        try:
            sp, rates = _sphere_strong_params(cfg, mode0, params0, SphereGeometry(cfg["geometry.radius"], float(dr)))
        except (ArithmeticError, ValueError) as exc:
            log.warning("scan point delta_r=%.6g failed: %s", dr, exc)
            return math.nan, math.nan, False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", dyn.RegimeWarning)
            _, peak = dyn.first_peak(sp)
        return sp.Omega / sp.delta_omega_C, 2 * math.sqrt(2) * peak, rates.converged

    with ThreadPoolExecutor(max_workers=threads) as pool:
        scan = list(pool.map(scan_point, drs))
    scan_out = CsvOut(cfg, "bell scan", ["delta_r", "omega_over_delta_omega_C", "first_max_B_S", "converged"])
    scan_out.comment(f"mode l={mode0.l} omega_C={mode0.omega_C!r}, gamma={curves[0][0]!r}")
    for dr, (ratio, bmax, ok) in zip(drs, scan):
        scan_out.row([dr, ratio, bmax, bool(ok)])
    _emit(csv_out.text(), out)
    scan_path = _suffixed(out, "_scan")
    if scan_path is None:
        sys.stdout.write("\n")
    _emit(scan_out.text(), scan_path)
    return EXIT_OK


def cmd_tripartite(cfg: RunConfig, out: str | None, threads: int | None, mode: str | None = None) -> int:
    mode = mode or cfg["tripartite.mode"]
    if mode not in CHOICES["tripartite.mode"]:
        raise ConfigError("mode must be weak_A_excited or strong_symmetric")
    print("note: symmetric placement assumed (K_AB = K_BC = K_CA, donor equidistant from A, B, C)",
          file=sys.stderr)
    if mode == "weak_A_excited":
        g, gab = cfg["tripartite.gamma"], cfg["tripartite.gamma_ab"]
        x = _time_axis(cfg, 10.0 / g)
        try:
            traj = dyn.tripartite_weak(g, gab, "A_excited", x)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        weights = dyn.asymptotic_weights(g, gab)
        csv_out = CsvOut(cfg, "tripartite weak_A_excited", ["t", "|C1|^2", "|C2|^2", "|C3|^2"])
        csv_out.comment("t in units of 1/Gamma0")
    else:
        sp, _ = _strong_for_dynamics(cfg, threads)
        x = _time_axis(cfg, 5 * 2 * math.pi / math.sqrt(3.0))
        traj = dyn.tripartite_strong(sp, x / sp.Omega)
        weights = (0.0, 0.0, 0.0)
        csv_out = CsvOut(cfg, "tripartite strong_symmetric", ["t", "|C1|^2", "|C2|^2", "|C3|^2"])
        csv_out.comment("t in units of 1/Omega")
    for i, label in enumerate(("1", "2", "3")):
        csv_out.comment(f"asymptotic |C{label}|^2 = {weights[i]:.12g}")
    pops = [traj.population(k) for k in ("1", "2", "3")]
    for i, xi in enumerate(x):
        csv_out.row([xi, pops[0][i], pops[1][i], pops[2][i]])
    _emit(csv_out.text(), out)
    return EXIT_OK


# --------------------------------------------------------------------------
# validation suite
# --------------------------------------------------------------------------

def _check_sum_rule():
    worst = 0.0
    for x in (0.5, 5.0, 50.0):
        lmax = sf.lmax_heuristic(x) + 40
        j = sf.spherical_jn_seq(lmax, x).real
        l = np.arange(lmax + 1)
        worst = max(worst, abs(1.5 * np.sum(l * (l + 1) * (2 * l + 1) * j ** 2) / x ** 2 - 1.0))
    return worst, worst < 1e-8


def _check_wronskian():
    worst = 0.0
    for x in (0.1, 1.0, 10.0, 100.0):
        for l in (1, 5, 20, 80):
            j = sf.spherical_jn_seq(l, x).real
            y = sf.spherical_h1_seq(l, x).imag
            jp = j[l - 1] - (l + 1) / x * j[l]
            yp = y[l - 1] - (l + 1) / x * y[l]
            worst = max(worst, abs((j[l] * yp - jp * y[l]) * x * x - 1.0))
    return worst, worst < 1e-10


def _check_lindblad():
    g, gab = 1.0, 0.6
    t = np.linspace(0.0, 5.0, 51)
    plus = np.array([0, 1, 1, 0], dtype=complex) / math.sqrt(2)
    rhos = dyn.lindblad_evolve(2, [[g, gab], [gab, g]], np.outer(plus, plus.conj()), t)
    pop = np.einsum("i,tij,j->t", plus.conj(), rhos, plus).real
    worst = float(np.max(np.abs(pop - np.abs(dyn.weak_amplitude(g + gab, t)) ** 2)))
    return worst, worst < 1e-6


def _volterra_peak(ratio: float) -> tuple[float, float]:
    sp = dyn.StrongCouplingParams.from_ratios(ratio, ratio)
    k = dyn.KernelModel.pair(sp.Omega, sp.delta_omega_C, +1)
    h = 0.005 * 2 * math.pi / k.rabi
    grid = dyn.uniform_grid(2 * math.pi / k.rabi, h)
    num = float(np.max(dyn.volterra_solve(k, dyn.DonorDrive(sp), grid).population("C")))
    return num, dyn.first_peak(sp)[1]


def _check_volterra():
    num, ana = _volterra_peak(0.01)
    rel = abs(num - ana) / ana
    return rel, rel < 0.05


def _check_rk4_order():
    k = dyn.KernelModel.single(1.0, 0.05)
    lam = k.rate
    mat = np.array([[0, k.effective_amplitude], [1, -lam]], dtype=complex)
    t_end = 10.0
    exact = (scipy.linalg.expm(mat * t_end) @ np.array([1.0, 0.0]))[0]
    errs = []
    for h in (0.02, 0.01):
        traj = dyn.volterra_solve(k, None, dyn.uniform_grid(t_end, h), c0=1.0)
        errs.append(abs(traj.amplitudes["C"][-1] - exact))
    ratio = errs[0] / errs[1]
    return ratio, ratio >= 8.0


def _check_wootters():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = a @ a.conj().T
        rho /= np.trace(rho).real
        rho = 0.5 * (rho + rho.conj().T)
        yy = np.kron([[0, -1j], [1j, 0]], [[0, -1j], [1j, 0]])
        s = scipy.linalg.sqrtm(rho)
        lam = np.sort(np.linalg.eigvalsh(scipy.linalg.sqrtm(s @ yy @ rho.conj() @ yy @ s)).real)[::-1]
        oracle = max(0.0, lam[0] - lam[1] - lam[2] - lam[3])
        worst = max(worst, abs(em.concurrence(rho) - oracle))
    return worst, worst < 1e-10


def _check_sign_mutation():
    try:
        cr.gamma_pair_series(1.0501, SphereGeometry(), PermittivityParams(), b_scale=-1.0)
    except cr.ConventionViolation:
        return 0.0, True
    return 1.0, False


def _check_positivity():
    worst = math.inf
    for w in (0.8, 1.0501, 1.2):
        r = cr.gamma_pair_series(w, SphereGeometry(), PermittivityParams())
        worst = min(worst, r.gamma_plus, r.gamma_minus)
    return worst, worst >= 0.0


VALIDATION_CHECKS = [
    ("free-space sum rule", _check_sum_rule),
    ("Wronskian identity", _check_wronskian),
    ("Lindblad vs analytic weak decay", _check_lindblad),
    ("Volterra vs analytic first peak", _check_volterra),
    ("RK4 step-halving error ratio", _check_rk4_order),
    ("Wootters vs eigenvalue oracle", _check_wootters),
    ("rate positivity", _check_positivity),
    ("sign-flip mutation detected", _check_sign_mutation),
]


def cmd_validate(cfg: RunConfig | None = None, out: str | None = None, threads: int | None = None) -> int:
    failed = 0
    for name, check in VALIDATION_CHECKS:
        try:
            residual, ok = check()
        except Exception as exc:  # a crashing oracle is a failed oracle
            residual, ok = math.nan, False
            log.error("%s raised %s", name, exc)
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}  residual={residual:.3e}")
    print(f"{len(VALIDATION_CHECKS) - failed}/{len(VALIDATION_CHECKS)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sphere-qed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("resonances", parents=[common], help="find sphere resonances and write the cache table")
    sub.add_parser("rates", parents=[common], help="sweep Gamma_+- over frequency or distance")
    p = sub.add_parser("eof", parents=[common], help="entanglement of formation versus time")
    p.add_argument("--regime", choices=CHOICES["eof.regime"])
    sub.add_parser("bell", parents=[common], help="Bell parameter versus time and first maximum versus distance")
    p = sub.add_parser("tripartite", parents=[common], help="three-atom populations")
    p.add_argument("--mode", choices=CHOICES["tripartite.mode"])
    sub.add_parser("validate", parents=[common], help="run the oracle suite")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    threads = args.threads or os.cpu_count()
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.command == "resonances":
            return cmd_resonances(cfg, args.out, threads)
        if args.command == "rates":
            return cmd_rates(cfg, args.out, threads)
        if args.command == "eof":
            return cmd_eof(cfg, args.out, threads, args.regime)
        if args.command == "bell":
            return cmd_bell(cfg, args.out, threads)
        if args.command == "tripartite":
            return cmd_tripartite(cfg, args.out, threads, args.mode)
        return cmd_validate(cfg, args.out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, ResonanceFitError, dyn.StepSizeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
