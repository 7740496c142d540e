"""Rosenbluth potentials from Shkarofsky integrals and the normalized collision operator.

With the background amplitude F_L(z) of species b in its own normalization,

    P_i(z) = int_0^z y^(i+2) F_L dy,   I_i = z^(-i) P_i
    Q_i(z) = int_z^inf y^(2-i) F_L dy, J_i = z^i Q_i

and the potentials (without the 4 pi) satisfy lap H = -F, lap G = 2 H.

The operator for species a on background b, in a's normalized speed v and
b's normalized speed z = (v_ath / v_bth) v, is

    C_ab = 4 pi [m_M F f + C_H grad_z H . grad_v f + C_G grad_z grad_z G : grad_v grad_v f]

with m_M = m_a / m_b, C_H = (1 - m_M) v_bth / v_ath, C_G = (v_bth / v_ath)^2 / 2.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import constants as sc

from .kfe import reconstruct
from .quadrature import clenshaw_curtis_rule, gauss_legendre
from .specfun import assoc_legendre_table, legendre_table

N_REF = 1e20  # density unit, m^-3
TAIL_SIGMAS = 28.0


class OperatorError(RuntimeError):
    pass


# ------------------------------------------------------- collision strength

def gamma_constant(tau0):
    """C_Gamma = tau0 omega_p0^4 / (n0 c0^3) for time unit tau0 in seconds."""
    wp2 = N_REF * sc.e**2 / (sc.m_p * sc.epsilon_0)
    return tau0 * wp2**2 / (N_REF * sc.c**3)


def gamma_ab(Z_a, Z_b, m_a, ln_lambda, c_gamma):
    """Collision strength Gamma_ab = C_Gamma 4 pi (Z_a Z_b / (4 pi m_a))^2 lnLambda."""
    return c_gamma * 4.0 * math.pi * (Z_a * Z_b / (4.0 * math.pi * m_a)) ** 2 * ln_lambda


@dataclass(frozen=True)
class SpeciesPair:
    mass_ratio: float  # m_a / m_b
    vth_ratio: float   # v_bth / v_ath
    gamma: float
    ln_lambda: float = 10.0

    @property
    def c_h(self):
        if self.mass_ratio == 1.0:
            return 0.0
        return (1.0 - self.mass_ratio) * self.vth_ratio

    @property
    def c_g(self):
        return 0.5 * self.vth_ratio**2

    @property
    def z_scale(self):
        """Factor mapping a's normalized speeds onto b's: v_ath / v_bth."""
        return 1.0 / self.vth_ratio


def species_pair(m_a, Z_a, vth_a, m_b, Z_b, vth_b, ln_lambda, c_gamma):
    return SpeciesPair(m_a / m_b, vth_b / vth_a, gamma_ab(Z_a, Z_b, m_a, ln_lambda, c_gamma),
                       ln_lambda)


# ------------------------------------------------------ Shkarofsky integrals

def shkarofsky_integrals(FL_fine, jexp, edges, N0):
    """I_j and J_j at the piece edges from samples of F_L on each piece.

    ``FL_fine`` has shape (n_pieces, N0) on ``chebyshev_nodes(edges[k], edges[k+1], N0)``.
    Returns (I, J) on ``edges``; I vanishes at the first edge and J at the last.
    """
    edges = np.asarray(edges, dtype=float)
    F = np.asarray(FL_fine, dtype=float)
    if F.shape != (edges.size - 1, N0):
        raise ValueError("samples do not match the piece layout")
    x, w = clenshaw_curtis_rule(N0)
    y = 0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * np.diff(edges)[:, None] * x
    y[:, 0], y[:, -1] = edges[:-1], edges[1:]
    half = 0.5 * np.diff(edges)
    pos = y > 0
    yp = np.where(pos, y, 1.0)
    p_int = np.where(pos, yp ** (jexp + 2) * F, 0.0) @ w * half
    q_int = np.where(pos, yp ** (2 - jexp) * F, 0.0) @ w * half
    P = np.concatenate([[0.0], np.cumsum(p_int)])
    Q = np.concatenate([np.cumsum(q_int[::-1])[::-1], [0.0]])
    z = np.where(edges > 0, edges, 1.0)
    I = np.where(edges > 0, P / z**jexp, 0.0)
    origin = 0.0 if jexp > 0 else (Q[0] if jexp == 0 else np.inf)
    J = np.where(edges > 0, Q * z**jexp, origin)
    return I, J


@dataclass(frozen=True)
class PotentialTable:
    z: np.ndarray    # evaluation speeds in the background normalization
    F: np.ndarray    # (L+1, n) background amplitudes
    H: np.ndarray
    dH: np.ndarray
    G: np.ndarray
    dG: np.ndarray
    ddG: np.ndarray

    @property
    def L_max(self):
        return self.H.shape[0] - 1


def _pieces(z_nodes, components, N0, h_lim):
    # split each node interval into pieces no wider than h_lim, drop what lies
    # beyond the support of the background and extend with a tail for J
    zcut = max(abs(c.uhat) + TAIL_SIGMAS * c.sigma for c in components)
    a, b = z_nodes[:-1], z_nodes[1:]
    m = np.where(a >= zcut, 1, np.maximum(1, np.ceil((b - a) / h_lim - 1e-9))).astype(int)
    idx = np.repeat(np.arange(a.size), m)
    step = np.arange(idx.size) - np.repeat(np.cumsum(m) - m, m) + 1
    inner = a[idx] + (b - a)[idx] * step / m[idx]
    node_at = np.concatenate([[0], np.cumsum(m)])
    top = z_nodes[-1]
    tail = np.zeros(0)
    if zcut > top:
        mt = max(1, int(math.ceil((zcut - top) / h_lim)))
        tail = top + (zcut - top) * np.arange(1, mt + 1) / mt
    edges = np.concatenate([[z_nodes[0]], inner, tail])
    edges[node_at] = z_nodes
    return edges, node_at, zcut


def potential_table(components, z_nodes, L_max, N0, h_lim):
    """Potential amplitudes H_L, G_L and their z-derivatives at ``z_nodes``.

    ``components`` are the background King components; ``z_nodes`` must be
    increasing and start at 0. F_L is evaluated analytically on every piece.
    """
    z_nodes = np.asarray(z_nodes, dtype=float)
    if z_nodes[0] != 0.0 or np.any(np.diff(z_nodes) <= 0):
        raise ValueError("z nodes must start at 0 and increase")
    edges, node_at, zcut = _pieces(z_nodes, components, N0, h_lim)
    npiece = edges.size - 1
    x, _ = clenshaw_curtis_rule(N0)
    y = 0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * np.diff(edges)[:, None] * x
    y[:, 0], y[:, -1] = edges[:-1], edges[1:]
    live = edges[:-1] < zcut
    Fy = np.zeros((L_max + 1, npiece, N0))
    if np.any(live):
        vals = reconstruct(components, y[live].ravel(), L_max)[0]
        Fy[:, live] = vals.reshape(L_max + 1, int(live.sum()), N0)
    _, w = clenshaw_curtis_rule(N0)
    half = 0.5 * np.diff(edges)
    pos = y > 0
    ys = np.where(pos, y, 1.0)

    def prefix(power, FL):
        piece = np.where(pos, ys**power * FL, 0.0) @ w * half
        return np.concatenate([[0.0], np.cumsum(piece)])[node_at]

    def suffix(power, FL):
        piece = np.where(pos, ys**power * FL, 0.0) @ w * half
        return np.concatenate([np.cumsum(piece[::-1])[::-1], [0.0]])[node_at]

    n = z_nodes.size
    H, dH, G, dG, ddG = (np.zeros((L_max + 1, n)) for _ in range(5))
    z = z_nodes[1:]
    for L in range(L_max + 1):
        FL = Fy[L]
        PL, PL2 = prefix(L + 2, FL), prefix(L + 4, FL)       # P_L, P_{L+2}
        QL1, QLm = suffix(1 - L, FL), suffix(3 - L, FL)      # Q_{L+1}, Q_{L-1}
        IL, IL2 = PL[1:] / z**L, PL2[1:] / z ** (L + 2)
        JL1 = QL1[1:] * z ** (L + 1)
        zJLm = QLm[1:] * z**L                                # z J_{L-1}
        a = 1.0 / ((2 * L + 1) * (2 * L + 3))
        b = 1.0 / ((2 * L + 1) * (2 * L - 1))
        cn = -L * (L - 1) / ((2 * L - 1) * (2 * L + 1))
        cp = (L + 1) * (L + 2) / ((2 * L + 1) * (2 * L + 3))
        H[L, 1:] = (IL + JL1) / ((2 * L + 1) * z)
        dH[L, 1:] = (-(L + 1) * IL + L * JL1) / ((2 * L + 1) * z * z)
        G[L, 1:] = a * z * (IL2 + JL1) - b * (z * IL + zJLm)
        dG[L, 1:] = (b * ((L - 1) * IL - L * zJLm / z)
                     - a * ((L + 1) * IL2 - (L + 2) * JL1))
        ddG[L, 1:] = (cn * (IL + zJLm / z) + cp * (IL2 + JL1)) / z
        # limits at z = 0
        if L == 0:
            H[0, 0] = QL1[0]
            G[0, 0] = QLm[0]
            ddG[0, 0] = 2.0 / 3.0 * QL1[0]
        elif L == 1:
            dH[1, 0] = QL1[0] / 3.0
            dG[1, 0] = -QLm[0] / 3.0
        elif L == 2:
            ddG[2, 0] = -2.0 / 15.0 * QLm[0]
    F = reconstruct(components, z_nodes, L_max)[0]
    return PotentialTable(z_nodes, F, H, dH, G, dG, ddG)


# -------------------------------------------------------- operator assembly

def _angular_rule(l_f, l_b, l_out):
    return gauss_legendre(min(128, (l_f + l_b + l_out) // 2 + 2))


def assemble_operator(f_derivs, potentials, pair, l_out=None):
    """Normalized collision amplitudes C_l,ab(v) on a's field nodes.

    ``f_derivs`` has shape (3, l_M + 1, n) holding f_l, f_l' and f_l'' on a's
    normalized nodes v (first node at v = 0); ``potentials`` is evaluated at
    z = v * pair.z_scale. Output rows run over l = 0..max(l_M, L_M) unless
    ``l_out`` is given. The value at v = 0 is extrapolated from the
    neighbouring nodes; every moment weights it by zero.
    """
    f, df, ddf = f_derivs
    l_f = f.shape[0] - 1
    l_b = potentials.L_max
    if l_out is None:
        l_out = max(l_f, l_b)
    n = f.shape[1]
    if potentials.z.size != n:
        raise OperatorError("potential table and distribution use different node counts")
    v_all = potentials.z / pair.z_scale
    v = v_all[1:]
    z = potentials.z[1:]
    out = np.zeros((l_out + 1, n))
    if l_f == 0 and l_b == 0:
        F0, H1, G1, G2 = potentials.F[0, 1:], potentials.dH[0, 1:], potentials.dG[0, 1:], potentials.ddG[0, 1:]
        c = pair.mass_ratio * F0 * f[0, 1:]
        if pair.c_h != 0.0:
            c = c + pair.c_h * H1 * df[0, 1:]
        c = c + pair.c_g * (G2 * ddf[0, 1:] + 2.0 * (G1 / z) * (df[0, 1:] / v))
        out[0, 1:] = 4.0 * math.pi * c
    else:
        rule = _angular_rule(l_f, l_b, l_out)
        mu = rule.nodes
        tb = assoc_legendre_table(l_b, mu)
        tf = assoc_legendre_table(l_f, mu)

        def field(amp, key, table):
            return amp[:, 1:].T @ table[key]

        Ff = field(potentials.F, "P", tb)
        B = field(f, "P", tf)
        Br, Brr = field(df, "P", tf), field(ddf, "P", tf)
        Bt, Brt = field(f, "P1", tf), field(df, "P1", tf)
        Btt, Bct = field(f, "P12", tf), field(f, "P1mu", tf)
        Ar, Arr = field(potentials.dG, "P", tb), field(potentials.ddG, "P", tb)
        At, Art = field(potentials.G, "P1", tb), field(potentials.dG, "P1", tb)
        Att, Act = field(potentials.G, "P12", tb), field(potentials.G, "P1mu", tb)
        zc, vc = z[:, None], v[:, None]
        hess = (Arr * Brr
                + 2.0 * (Art / zc - At / zc**2) * (Brt / vc - Bt / vc**2)
                + (Att / zc**2 + Ar / zc) * (Btt / vc**2 + Br / vc)
                + (Ar / zc + Act / zc**2) * (Br / vc + Bct / vc**2))
        total = pair.mass_ratio * Ff * B + pair.c_g * hess
        if pair.c_h != 0.0:
            Hr = field(potentials.dH, "P", tb)
            Ht = field(potentials.H, "P1", tb)
            total = total + pair.c_h * (Hr * Br + (Ht / zc) * (Bt / vc))
        P = legendre_table(l_out, mu)
        norm = (2 * np.arange(l_out + 1) + 1) / 2.0
        out[:, 1:] = 4.0 * math.pi * norm[:, None] * ((P * rule.weights) @ total.T)
    if not np.all(np.isfinite(out[:, 1:])):
        bad = np.argwhere(~np.isfinite(out[:, 1:]))[0]
        raise OperatorError(f"non-finite collision amplitude at l={bad[0]}, node={bad[1] + 1}")
    out[:, 0] = _extrapolate_origin(v_all, out)
    return out


def _extrapolate_origin(v, vals):
    # cubic through the first four interior nodes
    if v.size < 5:
        return vals[:, 1]
    x = v[1:5]
    coef = np.array([np.prod([(0.0 - x[m]) / (x[k] - x[m]) for m in range(4) if m != k])
                     for k in range(4)])
    return vals[:, 1:5] @ coef


def multi_species_sum(per_pair, nu):
    """Sum_b nu_ab C_l,ab with nu_ab = Gamma_ab n_b / v_bth^3 (per tau0).

    ``per_pair`` is a list of amplitude arrays (rows may differ in length);
    the result has as many rows as the longest.
    """
    rows = max(c.shape[0] for c in per_pair)
    out = np.zeros((rows, per_pair[0].shape[1]))
    for c, w in zip(per_pair, nu):
        out[: c.shape[0]] += w * c
    return out


def cfl_coefficients(potentials, pair, nu):
    """Advection and diffusion strengths A = nu |C_H| max|H_L'|, D = nu C_G max|G_L''|.

    The potential amplitudes enter without the operator's overall 4 pi.
    """
    a = nu * abs(pair.c_h) * float(np.max(np.abs(potentials.dH)))
    d = nu * pair.c_g * float(np.max(np.abs(potentials.ddG)))
    return a, d
