"""King-function mixtures: moment equations, parameter fitting and reconstruction.

A normalized species distribution is approximated by

    f_l(v) = C_KFE * sum_s nhat_s * K_l(v; uhat_s, sigma_s)

which is the Legendre amplitude of a sum of drifted Gaussians
nhat_s / (pi^1.5 sigma_s^3) exp(-|v - uhat_s e_z|^2 / sigma_s^2).
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

from .specfun import king_derivatives, king_table, double_factorial

C_KFE = math.sqrt(2.0) / math.pi
ZERO_DRIFT = 1e-14
SCHEMES = ("L01jd2nh", "L01jd2", "L01jd2NK")
CONSERVED = ((0, 0), (1, 1), (2, 0))
CONSERVATION_WEIGHT = 1e6


class KingFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class KingComponent:
    nhat: float
    uhat: float
    sigma: float

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.nhat, self.uhat, self.sigma)):
            raise ValueError("King component must be finite")
        if self.nhat <= 0 or self.sigma <= 0:
            raise ValueError("King component needs nhat > 0 and sigma > 0")


@dataclass(frozen=True)
class KfeControls:
    NK_init: int = 1
    NK_min: int = 1
    NK_max: int = 3
    rtol_n: float = 0.1
    rtol_merge: float = 1e-10
    rtol_NK: float = 1e-11
    scheme: str = "L01jd2NK"

    def __post_init__(self):
        if not 1 <= self.NK_min <= self.NK_init <= self.NK_max <= 3:
            raise ValueError("need 1 <= NK_min <= NK_init <= NK_max <= 3")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class FitResult:
    components: list
    residual: float
    converged: bool
    iterations: int
    rel_errors: dict = field(default_factory=dict)


def sort_components(components):
    return sorted(components, key=lambda c: (c.sigma, c.uhat, c.nhat))


# ------------------------------------------------------------ moment sets

def jl_set(scheme, nk, zero_drift=False):
    """(j, l) moments posing the parameter equations for one species."""
    if scheme == "L01jd2nh":
        if zero_drift:
            return [(2 * jp - 2, 0) for jp in range(1, 2 * nk + 1)]
        return [(j, l) for l in (0, 1) for j in range(l, 3 * nk, 2)]
    if scheme == "L01jd2":
        if zero_drift:
            return [(2 * jp, 0) for jp in range(1, nk + 1)]
        return [(2 * jp - l, l) for l in (0, 1) for jp in range(1, nk + 1)]
    raise ValueError(f"no fixed moment set for scheme {scheme!r}")


def _check_jl(j, l):
    if l not in (0, 1) or j < l or (j - l) % 2:
        raise ValueError(f"moment ({j},{l}) is outside the King moment equations")


@lru_cache(maxsize=None)
def _cpe_coefficients(j, l):
    half = (j - l) // 2
    cm = double_factorial(l + j + 1) / double_factorial(2 * l - 1) / 2.0**half
    cg = [2.0**g * double_factorial(2 * l + 1) * math.comb(half, g) / double_factorial(2 * l + 2 * g + 1)
          for g in range(half + 1)]
    return cm, cg


def _cpe_single(j, l, n, u, s, grad=False):
    # value (and d/dn, d/du, d/ds) of one component's contribution
    cm, cg = _cpe_coefficients(j, l)
    val = du = ds = 0.0
    for g, c in enumerate(cg):
        pu, ps = l + 2 * g, j - l - 2 * g
        term = c * u**pu * s**ps
        val += term
        if grad:
            if pu:
                du += c * pu * u ** (pu - 1) * s**ps
            if ps:
                ds += c * ps * u**pu * s ** (ps - 1)
    if not grad:
        return cm * n * val
    return cm * n * val, cm * val, cm * n * du, cm * n * ds


def cpe_moments(components, jl):
    """Closed-form normalized moments of a King mixture for each (j, l)."""
    out = []
    for j, l in jl:
        _check_jl(j, l)
        out.append(sum(_cpe_single(j, l, c.nhat, c.uhat, c.sigma) for c in components))
    return np.array(out)


def cpe_jacobian(components, jl):
    """d moments / d(nhat_1.., uhat_1.., sigma_1..), shape (len(jl), 3 NK)."""
    nk = len(components)
    jac = np.zeros((len(jl), 3 * nk))
    for i, (j, l) in enumerate(jl):
        _check_jl(j, l)
        for s, c in enumerate(components):
            _, dn, du, ds = _cpe_single(j, l, c.nhat, c.uhat, c.sigma, grad=True)
            jac[i, s], jac[i, nk + s], jac[i, 2 * nk + s] = dn, du, ds
    return jac


# ----------------------------------------------------------------- fitting

def _pack(components):
    return np.array([c.nhat for c in components] + [c.uhat for c in components]
                    + [c.sigma for c in components])


def _unpack(p):
    nk = p.size // 3
    return [KingComponent(float(p[s]), float(p[nk + s]), float(p[2 * nk + s])) for s in range(nk)]


def _valid(p):
    nk = p.size // 3
    return np.all(np.isfinite(p)) and np.all(p[:nk] > 0) and np.all(p[2 * nk:] > 0)


def _free_mask(nk, scheme, zero_drift):
    mask = np.ones(3 * nk, dtype=bool)
    if scheme == "L01jd2":
        mask[:nk] = False
    if zero_drift:
        mask[nk:2 * nk] = False
    return mask


def fit_parameters(targets, nk, init, scheme="L01jd2nh", max_iter=200, tol=1e-12, step_tol=1e-14):
    """Levenberg-Marquardt fit of King components to target moments.

    ``targets`` maps (j, l) to the normalized moment value. The moment set is
    chosen from ``scheme`` and ``nk``; rows for density, momentum and energy are
    weighted heavily and polished to exactness after the fit. Components that
    share one drift sit on a saddle of the drifting problem, so a failed fit
    is retried from guesses with the drifts spread apart.
    """
    best = _fit_once(targets, nk, init, scheme, max_iter, tol, step_tol)
    if best.converged or nk == 1:
        return best
    start = sort_components(init) if len(init) == nk else _resize_guess(init, nk)
    guesses = _spread_guesses(start, keep_weights=(scheme == "L01jd2"))
    if scheme == "L01jd2nh":
        prony = moment_guess(targets, nk)
        if prony is not None:
            guesses = [prony, *guesses]
        elif all(abs(v) < ZERO_DRIFT for jl, v in targets.items() if jl[1] == 1):
            # the zero-drift problem is a Gauss quadrature: no positive rule, no mixture
            return best
    for guess in guesses:
        res = _fit_once(targets, nk, guess, scheme, max_iter, tol, step_tol)
        if res.residual < best.residual:
            best = res
        if best.converged:
            break
    return best


def _spread_guesses(comps, keep_weights=False):
    # frozen-weight fits must keep the incoming weights
    n = sum(c.nhat for c in comps)
    u = sum(c.nhat * c.uhat for c in comps) / n
    s = sum(c.nhat * c.sigma for c in comps) / n
    nk = len(comps)
    weights = [c.nhat for c in comps] if keep_weights else [n / nk] * nk
    for spread in (0.1, 0.3, 0.5):
        sig = s * np.linspace(1 - spread, 1 + spread, nk)
        for du in (0.0, 0.05, -0.05, 0.15, -0.15):
            us = u + du * np.linspace(-1.0, 1.0, nk)
            yield [KingComponent(w, float(a), float(b)) for w, a, b in zip(weights, us, sig)]


def _fit_once(targets, nk, init, scheme, max_iter, tol, step_tol):
    if scheme not in ("L01jd2nh", "L01jd2"):
        raise ValueError("fit needs a concrete scheme (L01jd2nh or L01jd2)")
    init = sort_components(init)
    if len(init) != nk:
        init = _resize_guess(init, nk)
    zero_drift = all(abs(targets.get(jl, 0.0)) < ZERO_DRIFT for jl in targets if jl[1] == 1)
    if zero_drift:
        init = [KingComponent(c.nhat, 0.0, c.sigma) for c in init]
    jl = jl_set(scheme, nk, zero_drift)
    missing = [x for x in jl if x not in targets]
    if missing:
        raise ValueError(f"targets lack moments {missing}")
    tv = np.array([targets[x] for x in jl])
    if not np.all(np.isfinite(tv)):
        raise KingFitError("non-finite target moments")
    scale = np.where(np.abs(tv) > ZERO_DRIFT, np.abs(tv), 1.0)
    wrow = np.array([CONSERVATION_WEIGHT if x in CONSERVED else 1.0 for x in jl])
    mask = _free_mask(nk, scheme, zero_drift)

    crow = np.array([x in CONSERVED for x in jl])
    orow = ~crow

    def resid(p):
        return (cpe_moments(_unpack(p), jl) - tv) / scale

    def merit(r):
        return np.sum((wrow * r) ** 2)

    p = _pack(init)
    r = resid(p)
    cost = merit(r)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(r)) < tol:
            converged = True
            break
        jac = (cpe_jacobian(_unpack(p), jl) / scale[:, None])[:, mask]
        step = _constrained_lm_step(jac[crow], r[crow], jac[orow], r[orow], lam)
        trial = p.copy()
        trial[mask] += step
        if _valid(trial):
            trial = _polish_conserved(trial, jl, tv, scale, mask)
            rt = resid(trial)
            ct = merit(rt)
        else:
            ct = np.inf
        if np.isnan(ct):
            raise KingFitError("NaN residual during King fit")
        if ct < cost:
            p, r, cost = trial, rt, ct
            lam = max(lam / 10.0, 1e-15)
            if np.max(np.abs(step) / np.maximum(np.abs(p[mask]), 1e-300)) < step_tol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e16:
                break
    if np.any(np.isnan(r)):
        raise KingFitError("NaN residual during King fit")
    p = _polish_conserved(p, jl, tv, scale, mask)
    comps = sort_components(_unpack(p))
    model = cpe_moments(comps, jl)
    rel = {x: abs(m - t) / abs(t) if t != 0 else abs(m) for x, m, t in zip(jl, model, tv)}
    res = float(np.max(np.abs((model - tv) / scale)))
    return FitResult(comps, res, converged or res < tol, it, rel)


def _constrained_lm_step(jc, rc, jo, ro, lam):
    # Newton on the conservation rows, damped Gauss-Newton on the rest in
    # the null space of the linearized conservation rows
    n = jc.shape[1] if jc.size else jo.shape[1]
    if jc.shape[0]:
        base = np.linalg.lstsq(jc, -rc, rcond=None)[0]
        _, sv, vt = np.linalg.svd(jc)
        rank = int(np.sum(sv > sv[0] * 1e-13)) if sv.size else 0
        null = vt[rank:].T
    else:
        base = np.zeros(n)
        null = np.eye(n)
    if null.shape[1] == 0 or jo.shape[0] == 0:
        return base
    a = jo @ null
    b = -(ro + jo @ base)
    d = np.sqrt(lam * np.maximum(np.einsum("ij,ij->j", a, a), 1e-300))
    y = np.linalg.lstsq(np.vstack([a, np.diag(d)]), np.concatenate([b, np.zeros(d.size)]),
                        rcond=None)[0]
    return base + null @ y


def _polish_conserved(p, jl, tv, scale, mask):
    # minimum-norm Newton steps on the conservation rows only
    rows = [i for i, x in enumerate(jl) if x in CONSERVED]
    if not rows:
        return p
    for _ in range(5):
        comps = _unpack(p)
        r = (cpe_moments(comps, [jl[i] for i in rows]) - tv[rows]) / scale[rows]
        if np.max(np.abs(r)) < 1e-15:
            break
        jac = (cpe_jacobian(comps, [jl[i] for i in rows]) / scale[rows, None])[:, mask]
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        trial = p.copy()
        trial[mask] += step
        if not _valid(trial):
            break
        p = trial
    return p


def _resize_guess(init, nk):
    comps = list(init)
    while len(comps) < nk:
        c = max(comps, key=lambda x: x.nhat)
        comps.remove(c)
        comps += split_component(c)
    while len(comps) > nk:
        comps = merge_closest(comps)
    return sort_components(comps)


def split_component(c, spread=0.1):
    """Two half-weight components straddling ``c`` with the same mass and momentum."""
    return [KingComponent(c.nhat / 2, c.uhat, c.sigma * (1 - spread)),
            KingComponent(c.nhat / 2, c.uhat, c.sigma * (1 + spread))]


def moment_guess(targets, nk):
    """Components from the even l = 0 moments by Gauss quadrature in sigma^2.

    With x_s = sigma_s^2 the zero-drift moments are M_{2k,0} = c_k sum_s nhat_s x_s^k,
    c_k = (2k+1)!!/2^k, so 2 nk of them fix the nodes and weights of an
    nk-point quadrature (Prony). The mean drift is shared by every component.
    Returns None when no mixture with positive weights and widths matches.
    """
    try:
        mu = np.array([targets[(2 * k, 0)] / (double_factorial(2 * k + 1) / 2.0**k)
                       for k in range(2 * nk)])
    except KeyError:
        return None
    hankel = np.array([[mu[i + k] for k in range(nk)] for i in range(nk)])
    try:
        c = np.linalg.solve(hankel, -mu[nk:2 * nk])
    except np.linalg.LinAlgError:
        return None
    x = np.roots(np.concatenate([[1.0], c[::-1]]))
    if np.any(np.abs(x.imag) > 1e-12 * np.abs(x.real)) or np.any(x.real <= 0):
        return None
    x = np.sort(x.real)
    w = np.linalg.solve(np.vander(x, nk, increasing=True).T, mu[:nk])
    if np.any(w <= 0) or np.unique(x).size < nk:
        return None
    u = targets.get((1, 1), 0.0) / (3.0 * mu[0])
    return [KingComponent(float(wi), float(u), float(math.sqrt(xi))) for wi, xi in zip(w, x)]


def maxwellian_guess(targets):
    """Single component matching density, momentum and energy moments."""
    n = targets[(0, 0)]
    u = targets.get((1, 1), 0.0) / (3.0 * n)
    s2 = (2.0 / 3.0) * (targets[(2, 0)] / n - u * u)
    return KingComponent(n, u, math.sqrt(s2))


# --------------------------------------------------- scheme and NK control

def indistinguishable(c1, c2, rtol=1e-10):
    ds = abs(c1.sigma / c2.sigma - 1.0)
    z1, z2 = abs(c1.uhat) < ZERO_DRIFT, abs(c2.uhat) < ZERO_DRIFT
    if z1 and z2:
        di = 0.0
    elif z1 or z2:
        return False
    else:
        di = abs(c1.uhat / c2.uhat - 1.0)
    return ds + di <= rtol


def merge(c1, c2):
    n = c1.nhat + c2.nhat
    return KingComponent(n, (c1.nhat * c1.uhat + c2.nhat * c2.uhat) / n,
                         (c1.nhat * c1.sigma + c2.nhat * c2.sigma) / n)


def merge_indistinguishable(components, rtol=1e-10):
    """Combine the first indistinguishable pair; returns (components, merged?)."""
    comps = sort_components(components)
    for i in range(len(comps)):
        for k in range(i + 1, len(comps)):
            if indistinguishable(comps[i], comps[k], rtol):
                rest = [c for m, c in enumerate(comps) if m not in (i, k)]
                return sort_components(rest + [merge(comps[i], comps[k])]), True
    return comps, False


def merge_closest(components):
    comps = sort_components(components)
    best = min(range(len(comps) - 1), key=lambda i: abs(comps[i + 1].sigma / comps[i].sigma - 1))
    rest = comps[:best] + comps[best + 2:]
    return sort_components(rest + [merge(comps[best], comps[best + 1])])


def select_scheme_and_NK(prev, fitted, controls):
    """Scheme for the next solve and the number of King functions to carry."""
    nk = len(fitted)
    if controls.scheme == "L01jd2":
        return "L01jd2", nk
    if controls.scheme == "L01jd2NK" and len(prev) == len(fitted):
        a, b = sort_components(prev), sort_components(fitted)
        dn = np.mean([abs(y.nhat - x.nhat) / x.nhat for x, y in zip(a, b)])
        scheme = "L01jd2" if dn <= controls.rtol_n else "L01jd2nh"
    else:
        scheme = "L01jd2nh"
    _, merged = merge_indistinguishable(fitted, controls.rtol_merge)
    nk_next = min(controls.NK_max, max(controls.NK_min, nk - int(merged)))
    return scheme, nk_next


# ---------------------------------------------------------- reconstruction

def reconstruct(components, grid, lmax, derivative_order=0):
    """Amplitudes f_l (and speed derivatives) of a King mixture.

    Returns an array of shape (derivative_order + 1, lmax + 1, n_nodes).
    ``grid`` is a SpeedGrid (field nodes) or an array of speeds.
    """
    v = np.atleast_1d(np.asarray(getattr(grid, "field_nodes", grid), dtype=float))
    out = np.zeros((derivative_order + 1, lmax + 1, v.size))
    for c in components:
        if derivative_order == 0:
            out[0] += c.nhat * king_table(v, c.uhat, c.sigma, lmax)
        else:
            for d, arr in enumerate(king_derivatives(v, c.uhat, c.sigma, lmax, derivative_order)):
                out[d] += c.nhat * arr
    return C_KFE * out
