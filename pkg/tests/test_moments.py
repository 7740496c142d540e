import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from kingfp.grid import build_grid
from kingfp.kfe import KingComponent, cpe_moments, merge, reconstruct
from kingfp.moments import (MPC2_KEV, ConservedRates, EntropyWarning, MomentTable, SpeciesState,
                            conserved_rates, entropy, entropy_change, entropy_offset, kinetic_moment,
                            moment_table, rate_moment, temperature_converged, temperature_criterion,
                            thermal_speed, vth_rate)
from kingfp.she import AngularGrid

GRID = build_grid(7, 7, 10.0)
UNIT_ENTROPY = 1.5 * (1.0 + math.log(math.pi))


def amps(components, lmax):
    return reconstruct(components, GRID, lmax)[0]


def unit_state(K=0.75, **kw):
    """n = 1 and, by default, v_th = 1 (K = 3/4 for rho = 1)."""
    return SpeciesState(1.0, 1.0, 1.0, 0.0, K, **kw)


# ---------------------------------------------------------------- moments

def test_maxwellian_density_moment():
    val, err = kinetic_moment(amps([KingComponent(1, 0, 1)], 0), 0, 0, GRID)
    assert val == pytest.approx(1.0, abs=max(err, 1e-12))


def test_maxwellian_energy_moment():
    val, _ = kinetic_moment(amps([KingComponent(1, 0, 1)], 0), 2, 0, GRID)
    assert val == pytest.approx(1.5, abs=1e-12)


def test_drifting_maxwellian_momentum_moment():
    val, _ = kinetic_moment(amps([KingComponent(1, 0.1, 1)], 3), 1, 1, GRID)
    assert val == pytest.approx(0.3, abs=1e-12)


def test_moment_of_absent_order_is_rejected():
    with pytest.raises(ValueError):
        kinetic_moment(amps([KingComponent(1, 0, 1)], 0), 0, 1, GRID)
    with pytest.raises(ValueError):
        kinetic_moment(amps([KingComponent(1, 0, 1)], 0), -3, 0, GRID)


def test_moment_table_matches_closed_form_for_drifting_mixture():
    comps = [KingComponent(0.6, 0.2, 0.9), KingComponent(0.4, -0.1, 1.3)]
    a = amps(comps, 4)
    jl = [(0, 0), (2, 0), (4, 0), (1, 1), (3, 1), (5, 1)]
    tab = moment_table(a, GRID, jl)
    exact = cpe_moments(comps, jl)
    for key, ref in zip(jl, exact):
        assert tab[key] == pytest.approx(ref, abs=max(tab.errors[key] * abs(ref), 1e-10))


@settings(max_examples=25, deadline=None)
@given(nh=st.floats(0.2, 0.8), u1=st.floats(-0.4, 0.4), u2=st.floats(-0.4, 0.4),
       s1=st.floats(0.7, 1.3), s2=st.floats(0.7, 1.3))
def test_romberg_moments_agree_with_closed_form(nh, u1, u2, s1, s2):
    comps = [KingComponent(nh, u1, s1), KingComponent(1 - nh, u2, s2)]
    a = amps(comps, 3)
    for j, l in ((0, 0), (2, 0), (1, 1), (4, 0)):
        val, err = kinetic_moment(a, j, l, GRID)
        ref = float(cpe_moments(comps, [(j, l)])[0])
        assert val == pytest.approx(ref, abs=max(err * abs(val), 1e-10))


def test_moment_table_missing_rows_are_zero():
    tab = moment_table(amps([KingComponent(1, 0, 1)], 0), GRID, [(1, 1)])
    assert tab[(1, 1)] == 0.0 and tab.errors[(1, 1)] == 0.0


def test_moment_table_rejects_non_finite_error():
    with pytest.raises(ValueError):
        MomentTable({(0, 0): 1.0}, {(0, 0): math.nan})


# ---------------------------------------------------------- conserved rates

def test_zero_collision_amplitudes_give_exact_zero_rates():
    r = conserved_rates(np.zeros((3, GRID.n_field)), GRID)
    assert (r.dn, r.dI, r.dK) == (0.0, 0.0, 0.0)
    assert r.error_sum == 0.0


def test_conserved_rates_pick_the_right_moments():
    # a collision term shaped like a Maxwellian and its drift derivative
    c = amps([KingComponent(1, 0.1, 1)], 2)
    r = conserved_rates(c, GRID)
    assert r.dn == pytest.approx(1.0, abs=1e-12)
    assert r.dI == pytest.approx(0.1, abs=1e-12)
    assert r.dK == pytest.approx(1.5 + 0.01, abs=1e-12)


def test_rate_moment_error_is_relative_to_absolute_integrand():
    c = amps([KingComponent(1, 0, 1)], 0) - amps([KingComponent(1, 0, 1.0000001)], 0)
    val, err = rate_moment(c, GRID, 0, 0)
    assert abs(val) < 1e-9
    assert err < 1e-6


def test_physical_rates_scale_with_state():
    s = SpeciesState.from_temperature(2.0, 1.0, 3.0, 10.0)
    dn, dI, dK = ConservedRates(1.0, 1.0, 1.0).physical(s)
    assert dn == pytest.approx(3.0)
    assert dI == pytest.approx(s.rho * s.vth)
    assert dK == pytest.approx(s.n * s.T / MPC2_KEV)


# ----------------------------------------------------- temperature criterion

def test_criterion_vanishes_for_consistent_vth_rate():
    s = SpeciesState.from_temperature(2.0, 1.0, 1.0, 10.0, uhat=0.3)
    rates = ConservedRates(0.0, 0.02, 0.05)
    res = temperature_criterion(s, rates, vth_rate(s, rates))
    assert res == pytest.approx(0.0, abs=1e-15)
    assert temperature_converged(res, rates)


def test_criterion_without_drift_is_energy_balance():
    s = SpeciesState.from_temperature(2.0, 1.0, 1.0, 10.0)
    rates = ConservedRates(0.0, 0.0, 0.3)
    r = 0.07
    assert temperature_criterion(s, rates, r) == pytest.approx(0.3 - 3.0 * r, rel=1e-14)


def test_criterion_detects_inconsistent_vth():
    s = SpeciesState.from_temperature(2.0, 1.0, 1.0, 10.0, uhat=0.1)
    rates = ConservedRates(0.0, 0.01, 0.2)
    res = temperature_criterion(s, rates, vth_rate(s, rates) * 1.01)
    assert abs(res) > 1e-4
    assert not temperature_converged(res, rates)


def test_equilibrium_maxwellian_criterion_is_zero():
    s = SpeciesState.from_temperature(1.0, 1.0, 1.0, 5.0)
    rates = ConservedRates(0.0, 0.0, 0.0)
    assert temperature_criterion(s, rates, vth_rate(s, rates)) == 0.0


# ------------------------------------------------------------- species state

def test_thermal_speed_units():
    # 1 keV proton: sqrt(2 T / m c^2)
    assert thermal_speed(1.0, 1.0) == pytest.approx(math.sqrt(2.0 / 938272.08816), rel=1e-9)


def test_from_temperature_round_trip():
    s = SpeciesState.from_temperature(3.0, 1.0, 2.0, 20.0, uhat=-0.2, name="b")
    assert s.T == pytest.approx(20.0, rel=1e-13)
    assert s.uhat == pytest.approx(-0.2, rel=1e-13)
    assert s.vth == pytest.approx(thermal_speed(20.0, 3.0), rel=1e-13)
    assert s.king[0].uhat == -0.2


def test_vth_identity_holds():
    s = SpeciesState(2.0, 1.0, 1.5, 1e-3, 0.4)
    expected = math.sqrt((2 / 3) * (2 * s.K / s.rho - (s.I / s.rho) ** 2))
    assert s.vth == pytest.approx(expected, rel=1e-15)


def test_moment_uses_physical_scaling():
    s = SpeciesState.from_temperature(2.0, 1.0, 1.5, 10.0)
    assert s.moment(2, 0) == pytest.approx(1.5 * s.vth**2 * 1.5, rel=1e-14)
    assert s.moment(2, 0) * 0.5 * s.m == pytest.approx(s.K, rel=1e-14)


@pytest.mark.parametrize("kw", [dict(n=0.0), dict(K=-1.0), dict(I=10.0), dict(king=())])
def test_invalid_states_rejected(kw):
    args = dict(m=1.0, Z=1.0, n=1.0, I=0.0, K=0.75)
    args.update(kw)
    with pytest.raises(ValueError):
        SpeciesState(**args)


def test_replace_revalidates():
    s = unit_state()
    assert s.replace(n=2.0, K=1.5).vth == pytest.approx(1.0)
    with pytest.raises(ValueError):
        s.replace(K=0.0)


# ------------------------------------------------------------------ entropy

def test_unit_maxwellian_entropy():
    assert entropy(unit_state(), grid=GRID) == pytest.approx(UNIT_ENTROPY, rel=1e-12)
    assert UNIT_ENTROPY == pytest.approx(3.2170948, abs=1e-7)


def test_doubling_vth_adds_three_ln2():
    s1, s2 = unit_state(), unit_state(K=3.0)
    assert s2.vth == pytest.approx(2.0)
    assert entropy(s2, grid=GRID) - entropy(s1, grid=GRID) == pytest.approx(3 * math.log(2), rel=1e-12)


def test_entropy_is_drift_invariant():
    s0 = unit_state()
    # a drift of u = 0.3 v_th at the same v_th
    drift = SpeciesState(1.0, 1.0, 1.0, 0.3, 0.75 + 0.045, king=(KingComponent(1.0, 0.3, 1.0),))
    assert drift.vth == pytest.approx(1.0)
    assert entropy(drift, AngularGrid.for_order(31), GRID) == pytest.approx(entropy(s0, grid=GRID), rel=1e-10)


def test_entropy_against_direct_quadrature():
    comps = (KingComponent(0.7, 0.0, 0.8), KingComponent(0.3, 0.0, 1.4))
    s = unit_state(king=comps)

    def f(v):
        return sum(c.nhat * math.exp(-v * v / c.sigma**2) / (math.pi**1.5 * c.sigma**3) for c in comps)

    ref, _ = integrate.quad(lambda v: -4 * math.pi * v * v * f(v) * math.log(f(v)), 0, 12, epsrel=1e-13)
    assert entropy(s, grid=GRID) == pytest.approx(ref, rel=1e-10)


def test_entropy_invariant_under_merge_of_identical_components():
    c = KingComponent(0.5, 0.1, 1.1)
    split = unit_state(king=(c, c))
    merged = unit_state(king=(merge(c, c),))
    assert entropy(split, grid=GRID) == pytest.approx(entropy(merged, grid=GRID), rel=1e-13)


def test_entropy_needs_grid():
    with pytest.raises(ValueError):
        entropy(unit_state())


def test_truncation_ringing_warns():
    # a strong drift on a coarse angular grid rings below zero
    s = SpeciesState(1.0, 1.0, 1.0, 2.0, 0.75 + 2.0, king=(KingComponent(1.0, 2.0, 1.0),))
    with pytest.warns(EntropyWarning):
        val = entropy(s, AngularGrid.for_order(3), GRID)
    assert math.isfinite(val)


def test_entropy_change_and_offset():
    assert entropy_change(2.0, 1.0, 0.5) == pytest.approx(1.0)
    assert entropy_change(-1.0, -2.0, 1.0) > 0
    assert entropy_change(1.0, 1.0, 0.0) == 0.0
    assert entropy_offset(-1.0, 2.0) == 3.0
    assert entropy_offset(1.0, 2.0) == 0.0
