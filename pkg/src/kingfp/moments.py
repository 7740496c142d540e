"""Kinetic moments, conserved-quantity rates, the temperature consistency
residual and Boltzmann entropy.

Units: mass in proton masses, density in 1e20 m^-3, speed in units of c,
temperature in keV. Energies carry the unit m_p c^2 n0.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy import constants as sc

from .kfe import KingComponent, cpe_moments, reconstruct
from .quadrature import romberg
from .she import AngularGrid, inverse_transform

MPC2_KEV = sc.m_p * sc.c**2 / (1e3 * sc.e)  # proton rest energy in keV
LOG_FLOOR = 1e-300
RINGING_LEVEL = 1e-12
CRITERION_TOL = 1e-8


class EntropyWarning(UserWarning):
    pass


def thermal_speed(T, m):
    """v_th = sqrt(2T/m) in units of c for T in keV and m in proton masses."""
    return math.sqrt(2.0 * T / (m * MPC2_KEV))


@dataclass(frozen=True)
class MomentTable:
    values: dict
    errors: dict

    def __post_init__(self):
        for key, err in self.errors.items():
            if not math.isfinite(err):
                raise ValueError(f"moment {key} has a non-finite error estimate")

    def __getitem__(self, key):
        return self.values[key]


@dataclass(frozen=True)
class SpeciesState:
    """One species: physical conserved moments plus its normalized King mixture."""

    m: float
    Z: float
    n: float
    I: float
    K: float
    king: tuple = (KingComponent(1.0, 0.0, 1.0),)
    name: str = ""

    def __post_init__(self):
        if not (self.n > 0 and self.K > 0):
            raise ValueError(f"species {self.name!r} needs n > 0 and K > 0")
        if not self.T > 0:
            raise ValueError(f"species {self.name!r} has non-positive temperature")
        object.__setattr__(self, "king", tuple(self.king))
        if not self.king:
            raise ValueError(f"species {self.name!r} needs at least one King component")

    @classmethod
    def from_temperature(cls, m, Z, n, T, uhat=0.0, name="", king=None):
        """Drifting Maxwellian with temperature T (keV) and normalized drift uhat."""
        v = thermal_speed(T, m)
        u = uhat * v
        rho = m * n
        K = 0.5 * rho * (1.5 * v * v + u * u)
        if king is None:
            king = (KingComponent(1.0, float(uhat), 1.0),)
        return cls(m, Z, n, rho * u, K, king, name)

    @property
    def rho(self):
        return self.m * self.n

    @property
    def u(self):
        return self.I / self.rho

    @property
    def vth(self):
        return math.sqrt((2.0 / 3.0) * (2.0 * self.K / self.rho - self.u**2))

    @property
    def uhat(self):
        return self.u / self.vth

    @property
    def T(self):
        w = (2.0 / 3.0) * (2.0 * self.K / self.rho - self.u**2)
        return 0.5 * self.m * w * MPC2_KEV if w > 0 else w

    @property
    def nk(self):
        return len(self.king)

    def amplitudes(self, grid, lmax, derivative_order=0):
        """Normalized amplitudes f_l on ``grid`` from the King mixture."""
        return reconstruct(self.king, grid, lmax, derivative_order)

    def moment(self, j, l):
        """Physical moment n v_th^j M_{j,l} from the closed-form King moments."""
        return self.n * self.vth**j * float(cpe_moments(self.king, [(j, l)])[0])

    def replace(self, **kw):
        args = dict(m=self.m, Z=self.Z, n=self.n, I=self.I, K=self.K, king=self.king, name=self.name)
        args.update(kw)
        return SpeciesState(**args)


def _grid_nodes(grid):
    return np.asarray(getattr(grid, "field_nodes", grid), dtype=float)


def _moment_integrand(amp_l, v, j):
    return 4.0 * math.pi * v ** (j + 2) * amp_l


def kinetic_moment(amps, j, l, grid):
    """(value, relative error) of 4 pi int v^(j+2) f_l dv by Romberg on field nodes."""
    if j < -2:
        raise ValueError("kinetic moments need j >= -2")
    a = getattr(amps, "amplitudes", amps)
    if l >= a.shape[0]:
        raise ValueError(f"l = {l} exceeds the amplitude order")
    v = _grid_nodes(grid)
    res = romberg(_moment_integrand(a[l], v, j), 0.0, v[-1])
    return res.value, res.error_estimate


def moment_table(amps, grid, jl):
    """Kinetic moments for every (j, l) in ``jl``; missing l rows count as zero."""
    a = getattr(amps, "amplitudes", amps)
    v = _grid_nodes(grid)
    values, errors = {}, {}
    for j, l in jl:
        if l >= a.shape[0]:
            values[(j, l)], errors[(j, l)] = 0.0, 0.0
            continue
        res = romberg(_moment_integrand(a[l], v, j), 0.0, v[-1])
        values[(j, l)], errors[(j, l)] = res.value, res.error_estimate
    return MomentTable(values, errors)


def rate_moment(c_amps, grid, j, l):
    """Moment of collision amplitudes with an error measured against int |integrand|.

    The conserved rates are sums that cancel to round-off, so an error
    relative to the value alone is meaningless; the scale used instead is
    max(|value|, 4 pi int v^(j+2) |C_l| dv).
    """
    a = getattr(c_amps, "amplitudes", c_amps)
    if l >= a.shape[0]:
        return 0.0, 0.0
    v = _grid_nodes(grid)
    g = _moment_integrand(a[l], v, j)
    res = romberg(g, 0.0, v[-1])
    if res.value == 0.0 and not np.any(g):
        return 0.0, 0.0
    absolute = res.error_estimate * max(abs(res.value), 1e-300)
    scale = max(abs(res.value), romberg(np.abs(g), 0.0, v[-1]).value)
    return res.value, absolute / scale if scale > 0 else 0.0


def rate_moments(c_amps, grid, jl):
    """Batched ``rate_moment`` over a list of (j, l); returns (values, errors)."""
    a = getattr(c_amps, "amplitudes", c_amps)
    v = _grid_nodes(grid)
    g = np.zeros((len(jl), v.size))
    for i, (j, l) in enumerate(jl):
        if l < a.shape[0]:
            g[i] = _moment_integrand(a[l], v, j)
    res = romberg(g, 0.0, v[-1])
    absolute = res.error_estimate * np.maximum(np.abs(res.value), 1e-300)
    scale = np.maximum(np.abs(res.value), romberg(np.abs(g), 0.0, v[-1]).value)
    err = np.where(scale > 0, absolute / np.where(scale > 0, scale, 1.0), 0.0)
    return res.value, err


@dataclass(frozen=True)
class ConservedRates:
    """Normalized rates dn/(n dt), dI/(rho v_th dt), dK/(n T dt) and their errors."""

    dn: float
    dI: float
    dK: float
    err_n: float = 0.0
    err_I: float = 0.0
    err_K: float = 0.0

    @property
    def error_sum(self):
        return abs(self.err_n) + abs(self.err_I) + abs(self.err_K)

    def physical(self, state):
        """(dn/dt, dI/dt, dK/dt) for ``state``."""
        nT = 0.5 * state.rho * state.vth**2
        return state.n * self.dn, state.rho * state.vth * self.dI, nT * self.dK


def conserved_rates(c_amps, grid):
    """Density, momentum and energy rates from collision amplitudes.

    dn = R_00, dI = R_11 / 3 and dK = R_20, where the energy rate is measured
    in units of n T so that dK/dt = n T * dK.
    """
    r00, e00 = rate_moment(c_amps, grid, 0, 0)
    r11, e11 = rate_moment(c_amps, grid, 1, 1)
    r20, e20 = rate_moment(c_amps, grid, 2, 0)
    return ConservedRates(r00, r11 / 3.0, r20, e00, e11, e20)


def vth_rate(state, rates):
    """(d v_th / dt) / v_th from the chain rule on v_th^2 = (2/3)(2K/rho - u^2)."""
    _, dI, dK = rates.physical(state)
    rho = state.rho
    return (2.0 * dK / rho - 2.0 * state.I * dI / rho**2) / (3.0 * state.vth**2)


def temperature_criterion(state, rates, dvth_over_vth):
    """Residual of the normalized energy balance at fixed temperature.

    With Ihat = uhat and Khat = 3/2 + uhat^2 the residual
    dK - [2 Ihat (dI - Ihat r) + 2 Khat r], r = (dv_th/dt)/v_th,
    vanishes when r is consistent with the rates.
    """
    Ih = state.uhat
    Kh = 1.5 + Ih * Ih
    r = dvth_over_vth
    return rates.dK - (2.0 * Ih * (rates.dI - Ih * r) + 2.0 * Kh * r)


def temperature_converged(residual, rates, tol=CRITERION_TOL):
    return abs(residual) <= tol * max(abs(rates.dK), 1.0)


def entropy(state, angular=None, grid=None):
    """Boltzmann entropy s = -int f ln f d^3v of one species.

    The King mixture is sampled at (v_alpha, mu_beta), integrated with the
    Gauss weights in mu and Romberg in v; f = (n / v_th^3) fhat.
    """
    if grid is None:
        raise ValueError("entropy needs a speed grid")
    if angular is None:
        angular = AngularGrid.for_order(31)
    v = _grid_nodes(grid)
    drifting = any(c.uhat != 0.0 for c in state.king)
    lmax = angular.mu.size - 1 if drifting else 0
    amps = state.amplitudes(v, lmax)[0]
    f = inverse_transform(amps, angular.mu)
    scale = np.max(np.abs(f))
    if np.any(f < -RINGING_LEVEL * scale):
        warnings.warn("negative distribution samples while computing entropy", EntropyWarning,
                      stacklevel=2)
    fc = np.maximum(f, LOG_FLOOR)
    flnf = (np.where(f > 0, fc * np.log(fc), 0.0)) @ angular.weights
    f0 = f @ angular.weights
    shape = romberg(2.0 * math.pi * v**2 * flnf, 0.0, v[-1]).value
    mass = romberg(2.0 * math.pi * v**2 * f0, 0.0, v[-1]).value
    return -state.n * (shape + math.log(state.n / state.vth**3) * mass)


def entropy_change(s_now, s_prev, dt, delta_s=0.0):
    """First-order relative entropy rate (s^k - s^(k-1)) / (dt |s^k + delta_s|).

    The magnitude in the denominator keeps the sign of the rate equal to the
    sign of the entropy change, whatever the unit system does to s itself.
    """
    den = dt * abs(s_now + delta_s)
    return (s_now - s_prev) / den if den != 0 else 0.0


def entropy_offset(s_first, s_last):
    """delta_s: zero unless the entropy changes sign over the run."""
    if s_first * s_last < 0:
        return abs(s_first) + abs(s_last)
    return 0.0
