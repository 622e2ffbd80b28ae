import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphere_qed.coupling_rates import (
    ApproximationWarning,
    ConventionViolation,
    gamma_ab_freespace,
    gamma_pair_series,
    gamma_single_resonant,
    parity_rates,
    series_terms,
)
from sphere_qed.sphere_scattering import PermittivityParams, SphereGeometry, find_resonances

FIG = PermittivityParams(1.0, 0.5, 1e-6)
W121 = 1.0501003671963103  # l = 121 mode centre for the default sphere
W122 = 1.0502963715762768


@pytest.mark.parametrize("dr,w", [(0.02, 1.0501), (0.3, 0.8), (2.0, 1.3)])
def test_free_space_limit(dr, w):
    geo = SphereGeometry(10.0, dr)
    r = gamma_pair_series(w, geo, FIG, b_scale=0.0)
    assert r.converged
    assert r.gamma_plus + r.gamma_minus == pytest.approx(2.0, abs=1e-8)
    assert r.gamma_cross == pytest.approx(gamma_ab_freespace(2 * geo.r_A, w), abs=1e-8)


def test_freespace_small_separation_expansion():
    u = 0.05
    d = u / (2 * math.pi)
    # 40-digit reference value of 3 (sin u / u^3 - cos u / u^2)
    assert gamma_ab_freespace(d, 1.0) == pytest.approx(0.9997500223203952013, abs=1e-15)


def test_freespace_closed_form_limits():
    assert gamma_ab_freespace(1e-6, 1.0) == pytest.approx(1.0, abs=1e-9)
    assert gamma_ab_freespace(1e-3, 1.0) == pytest.approx(1.0, abs=1e-4)
    assert abs(gamma_ab_freespace(1e4, 1.0)) < 1e-8
    with pytest.raises(ValueError):
        gamma_ab_freespace(0.0, 1.0)


def test_freespace_small_u_branches_join():
    # series branch below u = 0.1, closed form above
    d = 0.1 / (2 * math.pi)
    assert gamma_ab_freespace(d * (1 - 1e-13), 1.0) == pytest.approx(gamma_ab_freespace(d * (1 + 1e-13), 1.0), abs=1e-12)


@pytest.mark.parametrize("w", [0.7, 1.02, 1.0501, W121, W122, 1.09, 1.3])
def test_rate_invariants(w):
    r = gamma_pair_series(w, SphereGeometry(), FIG)
    assert r.converged
    ulp = 4 * np.finfo(float).eps * r.gamma_single
    assert abs(r.gamma_plus - (r.gamma_single + r.gamma_cross)) <= ulp
    assert abs(r.gamma_minus - (r.gamma_single - r.gamma_cross)) <= ulp
    assert r.gamma_plus >= 0 and r.gamma_minus >= 0
    assert abs(r.gamma_cross) <= r.gamma_single * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(w=st.floats(0.5, 1.5), dr=st.floats(0.05, 1.0))
def test_rates_nonnegative_property(w, dr):
    r = gamma_pair_series(w, SphereGeometry(10.0, dr), FIG)
    assert r.gamma_plus >= -1e-9 and r.gamma_minus >= -1e-9
    assert abs(r.gamma_cross) <= r.gamma_single * (1 + 1e-9)


def test_far_from_sphere_tends_to_free_space():
    r = gamma_pair_series(1.0501, SphereGeometry(10.0, 10.0), FIG)
    assert r.gamma_plus == pytest.approx(1.0, abs=0.05)
    assert r.gamma_minus == pytest.approx(1.0, abs=0.05)


def test_tail_negligible_beyond_converged_truncation():
    geo = SphereGeometry(10.0, 0.3)
    ref = gamma_pair_series(1.0501, geo, FIG)
    more = gamma_pair_series(1.0501, geo, FIG, l_max=ref.truncation + 10)
    assert more.gamma_plus == pytest.approx(ref.gamma_plus, rel=1e-9)
    assert more.gamma_minus == pytest.approx(ref.gamma_minus, rel=1e-9)
    assert ref.tail_estimate < 1e-9 * ref.gamma_single


def test_short_truncation_is_flagged():
    r = gamma_pair_series(1.0501, SphereGeometry(), FIG, l_max=200)
    assert not r.converged
    assert r.truncation == 200


def test_reciprocity_bitwise():
    a = gamma_pair_series(W121, SphereGeometry(10.0, 0.05), FIG)
    b = gamma_pair_series(W121, SphereGeometry(10.0, 0.05, second_atom_distance=0.05), FIG)
    assert a == b


def test_unequal_distances_rejected():
    with pytest.raises(ValueError):
        gamma_pair_series(1.05, SphereGeometry(10.0, 0.02, 0.03), FIG)
    with pytest.raises(ValueError):
        gamma_pair_series(-1.0, SphereGeometry(), FIG)


def test_sign_flip_is_caught():
    with pytest.raises(ConventionViolation):
        gamma_pair_series(W121, SphereGeometry(), FIG, b_scale=-1.0)


def test_series_terms_zero_order_entry():
    x = series_terms(30, 1.05, FIG, SphereGeometry(10.0, 1.0))
    assert x[0] == 0
    assert np.all(np.isfinite(x))


@pytest.mark.parametrize("l,w", [(121, W121), (122, W122)])
def test_parity_at_resonance(l, w):
    r = gamma_pair_series(w, SphereGeometry(), FIG)
    plus, minus = parity_rates(r.gamma_single, l)
    enhanced_plus = r.gamma_plus > r.gamma_minus
    assert enhanced_plus == (plus > minus)
    assert enhanced_plus == (r.gamma_cross > 0)
    big = max(r.gamma_plus, r.gamma_minus)
    small = min(r.gamma_plus, r.gamma_minus)
    assert big > 1e3 * small


def test_parity_rule_values():
    assert parity_rates(1.0, 3) == (2.0, 0.0)
    assert parity_rates(1.0, 4) == (0.0, 2.0)


def test_interleaved_peaks_across_window():
    modes = find_resonances(range(115, 131), (1.049, 1.0505), FIG, SphereGeometry(), 301)
    assert len(modes) >= 5
    for m in modes:
        r = gamma_pair_series(m.omega_C, SphereGeometry(), FIG)
        enhanced = [g for g in (r.gamma_plus, r.gamma_minus) if g >= 100.0]
        assert len(enhanced) == 1
        assert (r.gamma_plus >= 100.0) == (m.l % 2 == 1)


def test_single_multipole_approximation_on_resonance():
    with warnings.catch_warnings():
        warnings.simplefilter("error", ApproximationWarning)
        g = gamma_single_resonant(W121, SphereGeometry(), FIG, 121)
    full = gamma_pair_series(W121, SphereGeometry(), FIG)
    assert g == pytest.approx(full.gamma_single, rel=0.1)


def test_single_multipole_approximation_off_resonance_warns():
    with pytest.warns(ApproximationWarning):
        gamma_single_resonant(1.0497, SphereGeometry(), FIG, 121)


def test_single_multipole_without_sphere_is_zero():
    geo = SphereGeometry()
    assert gamma_single_resonant(W121, geo, PermittivityParams(1.0, 0.0, 1e-6), 121, rel_tol=1e9) == \
        pytest.approx(0.0, abs=1e-12)
