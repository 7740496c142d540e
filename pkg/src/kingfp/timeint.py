"""Implicit trapezoidal time advance on frozen speed blocks.

The state of each species is its physical moments P_{j,l} = n v_th^j M_{j,l}
(density, momentum and energy among them) together with a King mixture that
reproduces the selected moments. A step advances the moments with rates from
the collision operator, refits the King mixture after every stage and
re-evaluates the operator on the same physical speed nodes.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from . import fprs
from .grid import DEFAULT_N0, DEFAULT_N2, DEFAULT_VHAT_MAX, GridAdaptWarning, adapt_vhat_max, build_grid
from .kfe import (KfeControls, KingFitError, ZERO_DRIFT, fit_parameters, merge_closest,
                  merge_indistinguishable, select_scheme_and_NK)
from .moments import rate_moments
from .she import truncation_order_components

MOMENT_SET = tuple([(j, 0) for j in range(0, 11, 2)] + [(j, 1) for j in range(1, 8, 2)])
R_CFL = 0.1
ENFORCE_WARN = 1e-4
RATE_GUARD = 1e-14


class StepFailure(RuntimeError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TimeControls:
    dt_init: float = 2.0**-5
    ratio_dtk: float = 1.1
    ratio_Mj: float = 0.01
    N_in: int = 10
    vth_rtol: float = 1e-6
    mode: str = "fixed"
    enforce_conservation: bool = True
    adapt_grid: bool = True
    max_halvings: int = 5

    def __post_init__(self):
        if not self.dt_init > 0:
            raise ValueError("dt_init must be positive")
        if self.N_in < 2:
            raise ValueError("N_in must be at least 2")
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError("mode is 'fixed' or 'adaptive'")


@dataclass(frozen=True)
class CollisionModel:
    """Species-pair constants and discretization shared by every step."""

    ln_lambda: np.ndarray
    c_gamma: float
    n2: int = DEFAULT_N2
    N0: int = DEFAULT_N0
    vhat_max: float = DEFAULT_VHAT_MAX
    atol_df: float = 1e-10
    l_cap: int = 30

    def nu(self, a, b, states):
        sa, sb = states[a], states[b]
        gamma = fprs.gamma_ab(sa.Z, sb.Z, sa.m, self.ln_lambda[a][b], self.c_gamma)
        return gamma * sb.n / sb.vth**3


@dataclass
class TimeBlock:
    """Speed nodes frozen over [t_k, t_k+1]; only their normalization moves."""

    k: int
    t_k: float
    dt: float
    grids: list
    vth_k: list
    physical_nodes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.physical_nodes:
            self.physical_nodes = [g.field_nodes * v for g, v in zip(self.grids, self.vth_k)]

    @property
    def t_next(self):
        return self.t_k + self.dt

    def trial_grids(self, vth_next):
        """Grids v^(k,k+1) = v^k v_th^k / v_th^(k+1) holding the physical nodes."""
        return [g.scaled(vk / vn) for g, vk, vn in zip(self.grids, self.vth_k, vth_next)]


@dataclass
class Rates:
    """Per-species physical moment rates from one operator evaluation."""

    dP: np.ndarray                 # (N_s, len(MOMENT_SET))
    error_sums: np.ndarray         # (N_s, N_s) Romberg error sum of pair (a on b)
    collision: list                # per species sum_b nu_ab C_ab on its grid
    grids: list
    l_max: list
    cfl: float = math.inf

    def conserved(self, a, m):
        """(dn/dt, dI/dt, dK/dt) of species a with mass m."""
        return self.dP[a, 0], m * self.dP[a, _IDX[(1, 1)]] / 3.0, 0.5 * m * self.dP[a, _IDX[(2, 0)]]


_IDX = {jl: i for i, jl in enumerate(MOMENT_SET)}
_J = np.array([j for j, _ in MOMENT_SET], dtype=float)
_CONSERVED_ROWS = [_IDX[(0, 0)], _IDX[(1, 1)], _IDX[(2, 0)]]


def moment_vector(state):
    return np.array([state.moment(j, l) for j, l in MOMENT_SET])


# ------------------------------------------------------------ enforcement

def enforce_conservation(rates_ab, rates_ba, err_a, err_b, m_a, m_b, enabled=True):
    """Pairwise conservation of one two-species sub-process.

    ``rates_ab`` are a's physical moment rates from collisions with b (and
    vice versa). Density rates are zeroed; the species with the larger
    Romberg error sum takes the negated momentum and energy rates of the
    other, converted through the mass ratio. Equal errors overwrite a.
    """
    ra, rb = np.array(rates_ab, dtype=float), np.array(rates_ba, dtype=float)
    if not enabled:
        return ra, rb
    if min(err_a, err_b) > ENFORCE_WARN:
        warnings.warn(f"both species integrate their collision rates poorly "
                      f"({err_a:.2e}, {err_b:.2e})", ConvergenceWarning, stacklevel=2)
    ra[0] = rb[0] = 0.0
    i11, i20 = _IDX[(1, 1)], _IDX[(2, 0)]
    if err_a >= err_b:
        ra[i11] = -(m_b / m_a) * rb[i11]
        ra[i20] = -(m_b / m_a) * rb[i20]
    else:
        rb[i11] = -(m_a / m_b) * ra[i11]
        rb[i20] = -(m_a / m_b) * ra[i20]
    return ra, rb


def _self_conserving(r):
    r = np.array(r, dtype=float)
    r[0] = r[_IDX[(1, 1)]] = r[_IDX[(2, 0)]] = 0.0
    return r


# ------------------------------------------------------- operator evaluation

def evaluate_rates(states, grids, model, enforce=True):
    """Physical moment rates of every species on the given normalized grids."""
    ns = len(states)
    lm = [truncation_order_components(s.king, g.field_nodes, model.atol_df, model.l_cap)
          for s, g in zip(states, grids)]
    derivs = [s.amplitudes(g, l, 2) for s, g, l in zip(states, grids, lm)]
    pair_rates = {}
    errs = np.zeros((ns, ns))
    collision = []
    cfl = math.inf
    for a, (sa, ga) in enumerate(zip(states, grids)):
        total = None
        for b, sb in enumerate(states):
            pair = fprs.species_pair(sa.m, sa.Z, sa.vth, sb.m, sb.Z, sb.vth,
                                     model.ln_lambda[a][b], model.c_gamma)
            nu = pair.gamma * sb.n / sb.vth**3
            h_lim = ga.spacing * min(1.0, min(c.sigma for c in sb.king))
            pot = fprs.potential_table(sb.king, ga.field_nodes * pair.z_scale, lm[b], model.N0, h_lim)
            c = fprs.assemble_operator(derivs[a], pot, pair)
            A, D = fprs.cfl_coefficients(pot, pair, nu)
            if A > 0:
                cfl = min(cfl, ga.spacing / A)
            if D > 0:
                cfl = min(cfl, ga.spacing**2 / D)
            vals, err = rate_moments(c, ga, MOMENT_SET)
            pair_rates[a, b] = sa.n * sa.vth**_J * nu * vals
            errs[a, b] = float(np.sum(np.abs(err[_CONSERVED_ROWS])))
            w = nu * c
            if total is None:
                total = w
            else:
                rows = max(total.shape[0], w.shape[0])
                grown = np.zeros((rows, w.shape[1]))
                grown[: total.shape[0]] += total
                grown[: w.shape[0]] += w
                total = grown
        collision.append(total)
    dP = np.zeros((ns, len(MOMENT_SET)))
    for a in range(ns):
        if enforce:
            dP[a] += _self_conserving(pair_rates[a, a])
        else:
            dP[a] += pair_rates[a, a]
        for b in range(a + 1, ns):
            ra, rb = enforce_conservation(pair_rates[a, b], pair_rates[b, a], errs[a, b], errs[b, a],
                                          states[a].m, states[b].m, enforce)
            dP[a] += ra
            dP[b] += rb
    return Rates(dP, errs, collision, list(grids), lm, R_CFL * cfl)


def cfl_reference(rates):
    """Explicit-step estimate R_CFL min(dv / A, dv^2 / D); +inf without transport."""
    return rates.cfl


# ---------------------------------------------------------------- smoothing

@dataclass
class FitPlan:
    scheme: str
    nk: int


def smooth_species(state, P, plan, kfe_controls, warm):
    """New species state from physical moments P, refitting its King mixture.

    Density, momentum and energy come straight from P; the remaining
    moments are matched by the King fit. A fit that cannot converge at the
    planned NK is retried with the two closest components merged.
    """
    n = P[0]
    I = state.m * P[_IDX[(1, 1)]] / 3.0
    K = 0.5 * state.m * P[_IDX[(2, 0)]]
    if not (n > 0 and K > 0):
        raise KingFitError("non-positive density or energy")
    trial = state.replace(n=n, I=I, K=K)
    v = trial.vth
    if not math.isfinite(v) or v <= 0:
        raise KingFitError("non-positive temperature")
    targets = {jl: P[i] / (n * v ** jl[0]) for i, jl in enumerate(MOMENT_SET)}
    if abs(trial.uhat) < ZERO_DRIFT:
        for jl in targets:
            if jl[1] == 1:
                targets[jl] = 0.0
    nk, guess = plan.nk, list(warm)
    while True:
        res = fit_parameters(targets, nk, guess, plan.scheme)
        if res.converged:
            return trial.replace(king=res.components), res, nk
        if nk <= kfe_controls.NK_min:
            raise KingFitError(f"King fit did not converge (residual {res.residual:.2e})")
        guess = merge_closest(res.components)
        nk -= 1


# --------------------------------------------------------------- stepping

def euler_update(y, ydot, dt):
    """Explicit Euler: y + dt * ydot."""
    return y + dt * ydot


def trapezoid_update(y, ydot_k, ydot_trial, dt):
    return y + 0.5 * dt * (ydot_k + ydot_trial)


def implicit_trapezoid(y0, ydot0, dt, evaluate, measure, n_in=10, rtol=1e-6):
    """Fixed-point trapezoidal iteration seeded by an Euler predictor.

    ``evaluate(y)`` returns (context, ydot) for a trial value and
    ``measure(context)`` the positive quantities whose relative change
    decides convergence. Returns (y, context, ydot, iterations, converged).
    """
    y = euler_update(y0, ydot0, dt)
    ctx, ydot = evaluate(y)
    prev = np.asarray(measure(ctx), dtype=float)
    for i in range(2, n_in + 1):
        y = trapezoid_update(y0, ydot0, ydot, dt)
        ctx, ydot = evaluate(y)
        cur = np.asarray(measure(ctx), dtype=float)
        if np.max(np.abs(cur / prev - 1.0)) <= rtol:
            return y, ctx, ydot, i, True
        prev = cur
    return y, ctx, ydot, n_in, False


@dataclass
class StepResult:
    states: list
    rates: Rates
    dt: float
    iterations: int
    converged: bool
    fits: list
    f_star: list          # unsmoothed amplitudes at t_k+1 on the block's nodes, new normalization
    f_prev: list          # amplitudes at t_k on the block's nodes, new normalization
    f_new: list           # smoothed amplitudes at t_k+1 on the block's nodes
    moment_errors: list   # per species {(j, l): Delta M}
    halvings: int = 0


def euler_predict(states, rates, dt, plans, kfe_controls):
    """Explicit-Euler moments at t_k+1, smoothed by the King fit."""
    P0 = np.array([moment_vector(s) for s in states])
    P = euler_update(P0, rates.dP, dt)
    out = []
    for s, p, plan in zip(states, P, plans):
        out.append(smooth_species(s, p, plan, kfe_controls, s.king)[0])
    return out


def trapezoidal_step(states, rates, block, model, controls, kfe_controls, plans):
    """One implicit step of length block.dt from states at t_k with rates at t_k."""
    P0 = np.array([moment_vector(s) for s in states])
    warm = [list(s.king) for s in states]
    plans = list(plans)

    def evaluate(P):
        new, fits = [], []
        for a, (s, p) in enumerate(zip(states, P)):
            st, fit, nk = smooth_species(s, p, plans[a], kfe_controls, warm[a])
            if nk < plans[a].nk:
                plans[a] = FitPlan(plans[a].scheme, nk)
            warm[a] = list(st.king)
            new.append(st)
            fits.append((fit, nk))
        grids = block.trial_grids([s.vth for s in new])
        r = evaluate_rates(new, grids, model, controls.enforce_conservation)
        return (new, fits, r), r.dP

    P, ctx, _, iters, ok = implicit_trapezoid(P0, rates.dP, block.dt, evaluate,
                                              lambda c: [s.vth for s in c[0]],
                                              controls.N_in, controls.vth_rtol)
    new, fits, r = ctx
    if not ok:
        warnings.warn(f"implicit iteration stopped after {iters} stages at t = {block.t_next:.6g}",
                      ConvergenceWarning, stacklevel=2)
    f_star, f_prev, f_new, merr = [], [], [], []
    for a, (s0, s1) in enumerate(zip(states, new)):
        g1 = r.grids[a]
        scale = (s1.vth / s0.vth) ** 3 * (s0.n / s1.n)
        prev = s0.amplitudes(block.grids[a], r.l_max[a])[0] * scale
        cur = s1.amplitudes(g1, r.l_max[a])[0]
        c0 = _pad(rates.collision[a], r.l_max[a]) * scale
        c1 = _pad(r.collision[a], r.l_max[a])
        star = prev + 0.5 * block.dt * (c0 + c1)
        f_star.append(star)
        f_prev.append(prev)
        f_new.append(cur)
        smoothed = moment_vector(s1)
        err = {}
        for i, jl in enumerate(MOMENT_SET):
            den = abs(smoothed[i] - P0[a, i])
            err[jl] = abs(P[a, i] - smoothed[i]) / den if den > 0 else 0.0
        merr.append(err)
    return StepResult(new, r, block.dt, iters, ok, fits, f_star, f_prev, f_new, merr)


def _pad(c, lmax):
    out = np.zeros((lmax + 1, c.shape[1]))
    rows = min(lmax + 1, c.shape[0])
    out[:rows] = c[:rows]
    return out


def adaptive_dt(states, rates, dt_prev, controls):
    """min(ratio_dtk dt, ratio_Mj |y / dy|) over the momenta and energies.

    A momentum passing through zero would stall the step, so |I| is floored
    at the thermal momentum rho v_th.
    """
    best = controls.ratio_dtk * dt_prev
    for a, s in enumerate(states):
        _, dI, dK = rates.conserved(a, s.m)
        for y, dy in ((max(abs(s.I), s.rho * s.vth), dI), (s.K, dK)):
            if abs(dy) < RATE_GUARD * abs(y) or dy == 0.0:
                continue
            best = min(best, controls.ratio_Mj * abs(y / dy))
    return best


# ----------------------------------------------------------------- driver

def initial_plans(states, kfe_controls):
    if kfe_controls.scheme == "L01jd2":
        return [FitPlan("L01jd2", s.nk) for s in states]
    return [FitPlan("L01jd2nh", kfe_controls.NK_init) for _ in states]


def next_plans(prev_states, new_states, kfe_controls):
    plans, merged_states = [], []
    for s0, s1 in zip(prev_states, new_states):
        scheme, nk = select_scheme_and_NK(list(s0.king), list(s1.king), kfe_controls)
        comps, merged = merge_indistinguishable(list(s1.king), kfe_controls.rtol_merge)
        if merged:
            s1 = s1.replace(king=comps)
        plans.append(FitPlan(scheme, min(nk, len(s1.king))))
        merged_states.append(s1)
    return plans, merged_states


def block_grids(states, model, controls, previous=None):
    grids = []
    for a, s in enumerate(states):
        vmax = model.vhat_max if previous is None else previous[a].vhat_max
        if controls.adapt_grid:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", GridAdaptWarning)
                vmax = adapt_vhat_max(list(s.king), s.nk, vmax)
        grids.append(build_grid(model.n2, model.N0, vmax))
    return grids


def advance(states, model, controls, kfe_controls, t_end, on_step=None):
    """Run the time loop from t = 0 to t_end (fixed or adaptive steps).

    ``on_step(k, t, step)`` is called after every accepted step and may
    return True to stop early.
    Returns the final states and the number of accepted steps.
    """
    states = list(states)
    grids = block_grids(states, model, controls)
    rates = evaluate_rates(states, grids, model, controls.enforce_conservation)
    plans = initial_plans(states, kfe_controls)
    dt = controls.dt_init if controls.mode == "fixed" else 1.0
    if controls.mode == "adaptive":
        dt = min(dt, adaptive_dt(states, rates, dt / controls.ratio_dtk, controls))
    t, k = 0.0, 0
    while t < t_end * (1 - 1e-14):
        step_dt = min(dt, t_end - t)
        step, halvings = None, 0
        while step is None:
            block = TimeBlock(k, t, step_dt, grids, [s.vth for s in states])
            try:
                step = trapezoidal_step(states, rates, block, model, controls, kfe_controls, plans)
                if not step.converged and controls.mode == "adaptive":
                    step = None
                    raise StepFailure(f"implicit iteration did not converge in {controls.N_in} stages")
            except (KingFitError, fprs.OperatorError, ValueError, StepFailure) as exc:
                halvings += 1
                if halvings > controls.max_halvings:
                    raise StepFailure(f"step at t = {t:.6g} failed after {controls.max_halvings} "
                                      f"halvings: {exc}") from exc
                step_dt *= 0.5
        step.halvings = halvings
        new_plans, new_states = next_plans(states, step.states, kfe_controls)
        t += step.dt
        k += 1
        states, plans = new_states, new_plans
        step.states = states
        grids = block_grids(states, model, controls, grids)
        rates = evaluate_rates(states, grids, model, controls.enforce_conservation)
        step.rates = rates
        if controls.mode == "adaptive":
            dt = adaptive_dt(states, rates, step.dt, controls)
            if step.iterations > controls.N_in // 2 or halvings:
                dt = min(dt, step.dt)
        if on_step is not None and on_step(k, t, step):
            break
    return states, k
