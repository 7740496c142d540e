"""Gauss-Legendre, Romberg and composite Clenshaw-Curtis quadrature."""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

ROMBERG_FLOOR = 1e-300
EPS = np.finfo(float).eps


@dataclass(frozen=True)
class GaussRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return self.nodes.size

    def integrate(self, values):
        """Sum of weights * values along the last axis."""
        return np.asarray(values) @ self.weights


@dataclass(frozen=True)
class RombergResult:
    value: float
    error_estimate: float


def _legendre_and_derivative(n, x):
    p0 = np.ones_like(x)
    p1 = x.copy()
    for m in range(2, n + 1):
        p0, p1 = p1, ((2 * m - 1) * x * p1 - (m - 1) * p0) / m
    return p1, n * (x * p1 - p0) / (x * x - 1.0)


@lru_cache(maxsize=None)
def _gauss_legendre_cached(n):
    # Newton on P_n from the usual cosine starting guesses
    k = np.arange(1, n + 1)
    x = np.cos(math.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        p, dp = _legendre_and_derivative(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-16:
            break
    _, dp = _legendre_and_derivative(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(n):
    """n-point Gauss-Legendre rule on [-1, 1], 1 <= n <= 128."""
    if not isinstance(n, (int, np.integer)) or n < 1 or n > 128:
        raise ValueError("Gauss-Legendre order must be an integer in [1, 128]")
    if n == 1:
        return GaussRule(np.array([0.0]), np.array([2.0]))
    x, w = _gauss_legendre_cached(int(n))
    return GaussRule(x, w)


def romberg_depth(count):
    """n2 such that count == 2**n2 + 1, else ValueError."""
    m = count - 1
    if m < 2 or m & (m - 1):
        raise ValueError(f"Romberg needs 2**n2 + 1 samples (n2 >= 1), got {count}")
    return m.bit_length() - 1


def romberg(samples, a=0.0, b=1.0):
    """Romberg integral of uniformly sampled data over [a, b].

    ``samples`` may carry leading batch axes; integration runs along the last
    axis. The full Richardson table is built. Among the entries R[n2, m] of the
    finest row, the one whose change against R[n2-1, m] is smallest is returned,
    so integrands whose trapezoid sums converge spectrally (Gaussian tails) are
    not spoiled by extrapolating through coarse levels. The error estimate is
    that change plus a round-off term, relative to max(|value|, 1e-300).
    """
    f = np.asarray(samples, dtype=float)
    n2 = romberg_depth(f.shape[-1])
    span = b - a
    rows = []
    for k in range(n2 + 1):
        stride = 2 ** (n2 - k)
        sub = f[..., ::stride]
        h = span / 2**k
        row = [h * (sub.sum(axis=-1) - 0.5 * (sub[..., 0] + sub[..., -1]))]
        for m in range(1, k + 1):
            c = 4.0**m
            row.append((c * row[m - 1] - rows[-1][m - 1]) / (c - 1.0))
        rows.append(row)
    last, prev = rows[-1], rows[-2]
    cand = np.stack(last[:-1])
    gaps = np.abs(cand - np.stack(prev))
    best = np.argmin(gaps, axis=0)
    value = np.take_along_axis(cand, best[None], axis=0)[0]
    gap = np.take_along_axis(gaps, best[None], axis=0)[0]
    roundoff = EPS * abs(span) / (f.shape[-1] - 1) * np.abs(f).sum(axis=-1)
    err = (gap + roundoff) / np.maximum(np.abs(value), ROMBERG_FLOOR)
    if np.ndim(value) == 0:
        return RombergResult(float(value), float(err))
    return RombergResult(value, err)


@lru_cache(maxsize=None)
def _cc_rule(npts):
    n = npts - 1
    theta = math.pi * np.arange(npts) / n
    x = -np.cos(theta)  # ascending Chebyshev extrema
    w = np.zeros(npts)
    kmax = n // 2
    for i in range(npts):
        s = 0.0
        for k in range(1, kmax + 1):
            bk = 1.0 if (2 * k == n) else 2.0
            s += bk / (4 * k * k - 1) * math.cos(2 * k * theta[i])
        c = 1.0 if i in (0, n) else 2.0
        w[i] = c / n * (1.0 - s)
    x = 0.5 * (x - x[::-1])
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def clenshaw_curtis_rule(npts):
    """Clenshaw-Curtis nodes (ascending, endpoints included) and weights on [-1, 1]."""
    if npts < 2:
        raise ValueError("Clenshaw-Curtis needs at least 2 points")
    return _cc_rule(int(npts))


def chebyshev_nodes(a, b, npts):
    """Clenshaw-Curtis nodes mapped to [a, b]; endpoints are exact."""
    x, _ = clenshaw_curtis_rule(npts)
    z = 0.5 * (a + b) + 0.5 * (b - a) * x
    z[0] = a
    z[-1] = b
    return z


def _power_with_origin(z, power, samples):
    # z**power * samples, with the origin sample taken as its limit
    z = np.asarray(z, dtype=float)
    out = np.zeros(np.broadcast(z, samples).shape)
    pos = z > 0
    out[..., pos] = z[pos] ** power * samples[..., pos]
    if power == 0:
        out[..., ~pos] = samples[..., ~pos]
    return out


def clenshaw_curtis_sub(jexp, samples, z_nodes):
    """Sum_k w_k z_k^(jexp+2) F(z_k) on one subinterval's Chebyshev points.

    At z = 0 the integrand is taken as its limit: 0 for positive powers; for
    non-positive powers the background amplitude is assumed to vanish there.
    """
    z = np.asarray(z_nodes, dtype=float)
    f = np.asarray(samples, dtype=float)
    if f.shape[-1] != z.size:
        raise ValueError("samples and nodes differ in length")
    _, w = clenshaw_curtis_rule(z.size)
    half = 0.5 * (z[-1] - z[0])
    return _power_with_origin(z, jexp + 2, f) @ w * half


def composite_clenshaw_curtis(samples, edges, npts):
    """Per-subinterval CC integrals of samples laid out piece by piece.

    ``samples`` has shape (..., n_pieces, npts) on the nodes from
    ``chebyshev_nodes(edges[i], edges[i+1], npts)``; returns shape (..., n_pieces).
    """
    _, w = clenshaw_curtis_rule(npts)
    half = 0.5 * np.diff(np.asarray(edges, dtype=float))
    return (np.asarray(samples) @ w) * half
