"""Reference models and run-quality metrics.

Temperatures are in keV, densities in 1e20 m^-3, masses in proton masses and
speeds in units of c. The two-temperature relaxation frequency returns 1/s.
"""

from dataclasses import dataclass, field
import csv
import math

import numpy as np

from .moments import MPC2_KEV, entropy_change, entropy_offset

NU_T_COEFF = 441.72
FLOOR = 1e-300
L2_SUPPORT = 1e-10


def relaxation_rate(m_a, Z_a, T_a, m_b, Z_b, n_b, T_b, ln_lambda=10.0):
    """Temperature relaxation frequency of species a on b in 1/s."""
    return (NU_T_COEFF * math.sqrt(m_a * m_b) * (Z_a * Z_b) ** 2 * n_b * ln_lambda
            / (m_a * T_b + m_b * T_a) ** 1.5)


def _temperature_rhs(T, m, Z, n, ln_lambda, tau0):
    ns = len(T)
    out = np.zeros(ns)
    for a in range(ns):
        for b in range(ns):
            if a != b:
                nu = relaxation_rate(m[a], Z[a], T[a], m[b], Z[b], n[b], T[b], ln_lambda[a][b])
                out[a] -= tau0 * nu * (T[a] - T[b])
    return out


def braginskii_reference(m, Z, n, T0, t_grid, ln_lambda=10.0, tau0=1.0, max_step=None):
    """Multi-temperature relaxation dT_a/dt = -sum_b nu_ab (T_a - T_b) by classical RK4.

    Times are in units of tau0 seconds. Returns an array (len(t_grid), N_s);
    t_grid must start at 0 and increase. Without ``max_step`` each output
    interval is split into RK4 steps of at most 1% of the fastest current
    relaxation time.
    """
    m, Z, n = (np.asarray(x, dtype=float) for x in (m, Z, n))
    ns = m.size
    lnl = np.broadcast_to(np.asarray(ln_lambda, dtype=float), (ns, ns))
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must start at 0 and increase strictly")
    T = np.asarray(T0, dtype=float).copy()

    def rhs(x):
        return _temperature_rhs(x, m, Z, n, lnl, tau0)

    def fastest(x):
        rates = [tau0 * relaxation_rate(m[a], Z[a], x[a], m[b], Z[b], n[b], x[b], lnl[a][b])
                 for a in range(ns) for b in range(ns) if a != b]
        return max(rates, default=0.0)

    out = [T.copy()]
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        h_max = max_step if max_step is not None else 0.01 / max(fastest(T), 1e-300)
        steps = max(1, math.ceil((t1 - t0) / h_max))
        h = (t1 - t0) / steps
        for _ in range(steps):
            k1 = rhs(T)
            k2 = rhs(T + 0.5 * h * k1)
            k3 = rhs(T + 0.5 * h * k2)
            k4 = rhs(T + h * k3)
            T = T + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(T.copy())
    return np.array(out)


def equilibrium_targets(species):
    """(u_inf, T_inf) from total momentum and energy.

    ``species`` is a sequence of objects with m, n, u (units of c) and T (keV),
    such as SpeciesState. Returns u_inf in units of c and T_inf in keV.
    """
    rho = sum(s.m * s.n for s in species)
    u_inf = sum(s.m * s.n * s.u for s in species) / rho
    K = sum(1.5 * s.n * s.T + 0.5 * s.m * s.n * s.u**2 * MPC2_KEV for s in species)
    T_inf = (K - 0.5 * rho * u_inf**2 * MPC2_KEV) / (1.5 * sum(s.n for s in species))
    return u_inf, T_inf


def convergence_order(errors):
    """Pairwise orders log2(e_{i-1} / e_i) and their mean; pairs with a zero are skipped."""
    e = [float(x) for x in errors]
    if len(e) < 2:
        raise ValueError("need at least two error levels")
    orders = [math.log2(a / b) for a, b in zip(e[:-1], e[1:]) if a > 0 and b > 0]
    mean = float(np.mean(orders)) if orders else math.nan
    return orders, mean


def fitted_slope(h, errors):
    """Least-squares slope of log(errors) against log(h)."""
    h, e = np.asarray(h, dtype=float), np.asarray(errors, dtype=float)
    keep = (h > 0) & (e > 0)
    if keep.sum() < 2:
        raise ValueError("need two positive points")
    return float(np.polyfit(np.log(h[keep]), np.log(e[keep]), 1)[0])


def smoothing_criteria(f_star, f_new, f_prev, dt):
    """Pointwise Delta_0 and node-averaged Delta_2 of the King smoothing.

    Delta_0 = |f* - f| / |f* - f_prev| and delta f = |f* - f| / |dt f*|, with
    f* before and f after smoothing at t_k+1 and f_prev at t_k. Returns
    (Delta_0 array, Delta_2 per l).
    """
    fs, fn, fp = (np.asarray(x, dtype=float) for x in (f_star, f_new, f_prev))
    if not (fs.shape == fn.shape == fp.shape):
        raise ValueError("amplitude arrays must share one shape")
    diff = np.abs(fs - fn)
    d0 = diff / np.maximum(np.abs(fs - fp), FLOOR)
    d2 = np.mean(diff / np.maximum(np.abs(dt * fs), FLOOR), axis=-1)
    return d0, d2


def l2_relative(f, f_ref, support=L2_SUPPORT):
    """sqrt(mean((f / f_ref - 1)^2)) over nodes where |f_ref| >= support * max|f_ref|.

    Far-tail nodes hold values near round-off whose ratio carries no
    information, hence the support cut.
    """
    f, r = np.asarray(f, dtype=float).ravel(), np.asarray(f_ref, dtype=float).ravel()
    keep = np.abs(r) >= support * np.max(np.abs(r))
    return float(np.sqrt(np.mean((f[keep] / r[keep] - 1.0) ** 2)))


def conservation_errors(states, initial):
    """(Delta n, Delta I, Delta K) of the whole system against the initial states.

    Delta I uses |I - I0| / sum rho v_th when the initial total momentum is
    negligible, since the relative form is undefined there.
    """
    dn = float(np.mean([abs(s.n / s0.n - 1.0) for s, s0 in zip(states, initial)]))
    I, I0 = sum(s.I for s in states), sum(s.I for s in initial)
    scale = sum(s.rho * s.vth for s in initial)
    if abs(I0) > 1e-12 * scale:
        dI = abs(I / I0 - 1.0)
    else:
        dI = abs(I - I0) / scale
    K, K0 = sum(s.K for s in states), sum(s.K for s in initial)
    return dn, dI, abs(K / K0 - 1.0)


@dataclass
class RunRecord:
    """Per-level history of a run; level 0 is the initial state."""

    names: list
    moment_keys: list = field(default_factory=list)
    t: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    n: list = field(default_factory=list)
    u: list = field(default_factory=list)
    T: list = field(default_factory=list)
    vth: list = field(default_factory=list)
    dn: list = field(default_factory=list)
    dI: list = field(default_factory=list)
    dK: list = field(default_factory=list)
    s: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    kfe_residual: list = field(default_factory=list)
    moment_error: list = field(default_factory=list)

    def append(self, t, dt, states, initial, s_total, iterations=0, residuals=None, merr=None):
        if self.t and not t > self.t[-1]:
            raise ValueError("time levels must increase strictly")
        ns = len(states)
        self.t.append(float(t))
        self.dt.append(float(dt))
        self.n.append([st.n for st in states])
        self.u.append([st.u for st in states])
        self.T.append([st.T for st in states])
        self.vth.append([st.vth for st in states])
        dn, dI, dK = conservation_errors(states, initial)
        self.dn.append(dn)
        self.dI.append(dI)
        self.dK.append(dK)
        self.s.append(float(s_total))
        self.iterations.append(int(iterations))
        self.kfe_residual.append(list(residuals) if residuals is not None else [0.0] * ns)
        if merr is None:
            merr = [{} for _ in range(ns)]
        self.moment_error.append([[m.get(key, 0.0) for key in self.moment_keys] for m in merr])

    @property
    def ds(self):
        """Entropy rate per level (0 at level 0) with the sign-change offset."""
        if not self.s:
            return []
        off = entropy_offset(self.s[0], self.s[-1])
        out = [0.0]
        for k in range(1, len(self.s)):
            out.append(entropy_change(self.s[k], self.s[k - 1], self.dt[k], off))
        return out

    def columns(self):
        cols = ["t", "dt"]
        for q in ("n", "u", "T", "vth"):
            cols += [f"{q}_{a}" for a in self.names]
        cols += ["dn_s", "dI_s", "dK_s", "s_s", "ds_s", "iterations"]
        cols += [f"kfe_residual_{a}" for a in self.names]
        cols += [f"dM_{j}_{l}_{a}" for a in self.names for j, l in self.moment_keys]
        return cols

    def rows(self):
        ds = self.ds
        for k in range(len(self.t)):
            row = [self.t[k], self.dt[k]]
            for q in (self.n, self.u, self.T, self.vth):
                row += q[k]
            row += [self.dn[k], self.dI[k], self.dK[k], self.s[k], ds[k], self.iterations[k]]
            row += self.kfe_residual[k]
            for per in self.moment_error[k]:
                row += per
            yield row

    def write_csv(self, path, header=""):
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
            fh.write("# columns: " + " ".join(cols) + "\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.rows():
                w.writerow([v if isinstance(v, int) else f"{v:.17g}" for v in row])


def read_csv(path):
    """Columns of a record CSV as a dict of float arrays."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    cols = next(reader)
    data = np.array([[float(x) for x in row] for row in reader])
    return {c: data[:, i] for i, c in enumerate(cols)}
