"""Special functions for the Legendre/King velocity-space expansion.

The King function is the Legendre amplitude (up to a constant) of a drifted
Gaussian ``exp(-|v - iota e_z|^2 / sigma^2)``:

    K_l(v; iota, sigma) = (l + 1/2) / (sigma^2 sqrt(2 |iota| v)) * sign(iota)^l
                          * exp(-(v^2 + iota^2) / sigma^2) * I_{l+1/2}(2 |iota| v / sigma^2)

Everything here is vectorised over the speed argument.
"""

from dataclasses import dataclass
import math

import numpy as np

SQRT_2PI_INV = 1.0 / math.sqrt(2.0 * math.pi)

# below this value of xi = 2|iota|v/sigma^2 the ascending series is used
SERIES_SWITCH = 1e-2
SERIES_RTOL = 1e-18


@dataclass(frozen=True)
class KingParams:
    iota: float
    sigma: float
    l: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.iota) and math.isfinite(self.sigma)):
            raise ValueError("King parameters must be finite")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.l < 0:
            raise ValueError("harmonic order must be non-negative")


def odd_double_factorial(l):
    """(2l-1)!! with the convention (-1)!! = 1."""
    out = 1.0
    for k in range(1, 2 * l, 2):
        out *= k
    return out


def double_factorial(n):
    """n!! for n >= -1."""
    if n < -1:
        raise ValueError("double factorial defined for n >= -1")
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


# ---------------------------------------------------------------- Legendre

def _check_mu(mu, strict=False):
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise ValueError("mu must be finite")
    if strict:
        if np.any(np.abs(mu) >= 1.0):
            raise ValueError("|mu| must be < 1 for associated Legendre terms")
    elif np.any(np.abs(mu) > 1.0):
        raise ValueError("|mu| must be <= 1")
    return mu


def legendre_table(lmax, mu):
    """P_0..P_lmax at mu, shape (lmax+1,) + mu.shape."""
    mu = _check_mu(mu)
    out = np.empty((lmax + 1,) + mu.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = mu
    for l in range(1, lmax):
        out[l + 1] = ((2 * l + 1) * mu * out[l] - l * out[l - 1]) / (l + 1)
    return out


def legendre(l, mu):
    """Legendre polynomial P_l(mu) by the three-term recurrence."""
    if l < 0:
        raise ValueError("l must be non-negative")
    val = legendre_table(l, mu)[l]
    return float(val) if np.ndim(val) == 0 else val


def _legendre_derivative_tables(lmax, mu):
    P = legendre_table(lmax, mu)
    dP = np.zeros_like(P)
    ddP = np.zeros_like(P)
    for l in range(1, lmax + 1):
        dP[l] = (dP[l - 2] if l >= 2 else 0.0) + (2 * l - 1) * P[l - 1]
        ddP[l] = (ddP[l - 2] if l >= 2 else 0.0) + (2 * l - 1) * dP[l - 1]
    return P, dP, ddP


def assoc_legendre_table(lmax, mu):
    """Associated-Legendre bundle used by the angular operator terms.

    Returns a dict of arrays of shape (lmax+1, n_mu):
      P    : P_l(mu)
      P1   : P_l^1 = dP_l(cos theta)/d theta = -sqrt(1-mu^2) P_l'
      P2   : P_l^2 = (1-mu^2) P_l''
      P1mu : mu / sqrt(1-mu^2) * P_l^1 = cot(theta) dP_l/d theta
      P12  : P_l^2 + P_l^{1,mu} = d^2 P_l / d theta^2
    """
    mu = _check_mu(np.atleast_1d(mu), strict=True)
    P, dP, ddP = _legendre_derivative_tables(lmax, mu)
    s = np.sqrt(1.0 - mu * mu)
    P1 = -s * dP
    P2 = (1.0 - mu * mu) * ddP
    P1mu = -mu * dP
    return {"P": P, "P1": P1, "P2": P2, "P1mu": P1mu, "P12": P2 + P1mu}


def assoc_legendre_terms(l, mu):
    """(P_l, P_l^1, P_l^2, P_l^{1,mu}, P_l^{1,2}) at a single interior mu."""
    if l < 0:
        raise ValueError("l must be non-negative")
    mu = float(mu)
    t = assoc_legendre_table(l, np.array([mu]))
    return tuple(float(t[k][l, 0]) for k in ("P", "P1", "P2", "P1mu", "P12"))


# ------------------------------------------------------------------ Bessel

def bessel_i_half_scaled_table(lmax, x):
    """exp(-x) * I_{l+1/2}(x) for l = 0..lmax, shape (lmax+1, len(x)).

    Closed forms for l = 0, 1 and upward recurrence where x >= 4 lmax (upward
    recurrence sheds digits when the order approaches x); elsewhere the ratios
    I_{l+3/2}/I_{l+1/2} are built by downward recurrence (continued fraction)
    and chained from I_{1/2}.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("Bessel argument must be finite and positive")
    out = np.empty((lmax + 1, x.size))
    root = np.sqrt(2.0 / (math.pi * x))
    em = -np.expm1(-2.0 * x)  # 1 - exp(-2x)
    out[0] = root * em / 2.0
    if lmax == 0:
        return out

    up = x >= 4 * lmax
    if np.any(up):
        xu = x[up]
        ep = 1.0 + np.exp(-2.0 * xu)
        vals = np.empty((lmax + 1, xu.size))
        vals[0] = out[0, up]
        vals[1] = root[up] * (ep / 2.0 - em[up] / (2.0 * xu))
        for l in range(1, lmax):
            vals[l + 1] = vals[l - 1] - (2 * l + 1) / xu * vals[l]
        out[:, up] = vals

    down = ~up
    if np.any(down):
        xd = x[down]
        nstart = lmax + 30 + int(2 * np.max(xd))
        r = np.zeros_like(xd)
        ratios = np.empty((lmax, xd.size))
        for l in range(nstart, 0, -1):
            r = 1.0 / ((2 * l + 1) / xd + r)
            if l - 1 < lmax:
                ratios[l - 1] = r
        vals = np.empty((lmax + 1, xd.size))
        vals[0] = out[0, down]
        for l in range(lmax):
            vals[l + 1] = vals[l] * ratios[l]
        out[:, down] = vals
    return out


def bessel_i_half(l, x):
    """Modified Bessel function of the first kind I_{l+1/2}(x), x > 0."""
    if l < 0:
        raise ValueError("l must be non-negative")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    scaled = bessel_i_half_scaled_table(l, xa)[l]
    with np.errstate(over="ignore"):
        val = scaled * np.exp(xa)
    return float(val[0]) if np.ndim(x) == 0 else val


# ------------------------------------------------------------ King function

def _validate_king(v, iota, sigma):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not (math.isfinite(iota) and math.isfinite(sigma)):
        raise ValueError("King parameters must be finite")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        raise ValueError("speed must be finite and non-negative")
    return v


def king_table(v, iota, sigma, lmax):
    """K_l(v; iota, sigma) for l = 0..lmax, shape (lmax+1, len(v))."""
    v = _validate_king(v, iota, sigma)
    out = np.zeros((lmax + 1, v.size))
    s2 = sigma * sigma
    if iota == 0.0:
        out[0] = SQRT_2PI_INV / sigma**3 * np.exp(-(v * v) / s2)
        return out

    xi = 2.0 * iota * v / s2
    x = np.abs(xi)
    small = x < SERIES_SWITCH
    with np.errstate(under="ignore"):
        if np.any(small):
            xs = xi[small]
            x2 = xs * xs
            base = SQRT_2PI_INV / sigma**3 * np.exp(-(v[small] ** 2 + iota * iota) / s2)
            xil = np.ones_like(xs)
            for l in range(lmax + 1):
                total = np.ones_like(xs)
                term = np.ones_like(xs)
                k = 0
                while True:
                    k += 1
                    term = term * x2 / (2 * k * (2 * k + 2 * l + 1))
                    total = total + term
                    if np.all(term <= SERIES_RTOL * total):
                        break
                out[l, small] = base * xil / odd_double_factorial(l) * total
                xil = xil * xs
        big = ~small
        if np.any(big):
            xb = x[big]
            vb = v[big]
            scaled = bessel_i_half_scaled_table(lmax, xb)
            pref = np.exp(-((vb - abs(iota)) ** 2) / s2) / (s2 * np.sqrt(2.0 * abs(iota) * vb))
            sgn = 1.0 if iota > 0 else -1.0
            for l in range(lmax + 1):
                out[l, big] = (l + 0.5) * sgn**l * pref * scaled[l]
    return out


def king(vhat, p_or_iota, sigma=None, l=None):
    """King function K_l(vhat; iota, sigma).

    Accepts either ``king(v, KingParams(...))`` or ``king(v, iota, sigma, l)``.
    """
    if isinstance(p_or_iota, KingParams):
        p = p_or_iota
    else:
        p = KingParams(float(p_or_iota), float(sigma), int(l))
    val = king_table(vhat, p.iota, p.sigma, p.l)[p.l]
    return float(val[0]) if np.ndim(vhat) == 0 else val


def _king_origin_coeff(iota, sigma, l):
    """Leading coefficient a_l of K_l(v) ~ a_l v^l as v -> 0."""
    s2 = sigma * sigma
    return (SQRT_2PI_INV / sigma**3 * math.exp(-iota * iota / s2)
            * (2.0 * iota / s2) ** l / odd_double_factorial(l))


def king_derivatives(v, iota, sigma, lmax, order=2):
    """King functions and their first ``order`` speed derivatives.

    Returns a list [K, dK/dv, d2K/dv2][:order+1], each of shape (lmax+1, len(v)).
    Uses dK_l/dv = (l/v - 2v/sigma^2) K_l + (2 iota/sigma^2) (2l+1)/(2l+3) K_{l+1}
    with the analytic limits at v = 0.
    """
    v = _validate_king(v, iota, sigma)
    K = king_table(v, iota, sigma, lmax + order)
    res = [K[: lmax + 1]]
    if order == 0:
        return res
    s2 = sigma * sigma
    c = 2.0 * iota / s2
    zero = v == 0.0
    vs = np.where(zero, 1.0, v)
    ls = np.arange(lmax + order + 1)[:, None]
    coup = ((2 * ls + 1) / (2 * ls + 3))[:-1]

    K1 = np.empty((lmax + order, v.size))
    K1[:] = (ls[:-1] / vs - 2.0 * vs / s2) * K[:-1] + c * coup * K[1:]
    if np.any(zero):
        K1[:, zero] = 0.0
        if lmax + order > 1:
            K1[1, zero] = _king_origin_coeff(iota, sigma, 1)
    res.append(K1[: lmax + 1])
    if order == 1:
        return res

    lk = ls[: lmax + 1]
    K2 = ((-lk / vs**2 - 2.0 / s2) * K[: lmax + 1]
          + (lk / vs - 2.0 * vs / s2) * K1[: lmax + 1]
          + c * coup[: lmax + 1] * K1[1: lmax + 2])
    if np.any(zero):
        K2[:, zero] = 0.0
        a0 = _king_origin_coeff(iota, sigma, 0)
        K2[0, zero] = 2.0 * a0 * (2.0 * iota * iota / (3.0 * s2 * s2) - 1.0 / s2)
        if lmax >= 2:
            K2[2, zero] = 2.0 * _king_origin_coeff(iota, sigma, 2)
    res.append(K2)
    return res


def drifted_gaussian_amplitude(v, nhat, uhat, sigma, l):
    """Closed-form Legendre amplitude G_l of n/sigma^3 exp(-|v - u e_z|^2/sigma^2).

    Finite sum over exponentials, valid for u != 0 and v > 0; it loses digits
    as 2uv/sigma^2 -> 0, where the King-function route should be used.
    Satisfies K_l = (2 pi)^(-1/2) G_l / nhat.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    xi = 2.0 * uhat * v / sigma**2
    em = np.exp(-((v - uhat) / sigma) ** 2)
    ep = np.exp(-((v + uhat) / sigma) ** 2)
    total = np.zeros_like(v)
    for m in range(l + 1):
        cm = (2 * l + 1) / 2.0 * math.factorial(l + m) / (2**m * math.factorial(m) * math.factorial(l - m))
        total += cm * xi ** (-(m + 1)) * ((-1) ** m * em - (-1) ** l * ep)
    return nhat / sigma**3 * total
