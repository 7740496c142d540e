"""Legendre (spherical-harmonic, m = 0) transforms in pitch angle.

Amplitudes follow f_l(v) = (2l+1)/2 * int_{-1}^{1} f(v, mu) P_l(mu) dmu, so that
f(v, mu) = sum_l f_l(v) P_l(mu).
"""

from dataclasses import dataclass

import numpy as np

from .kfe import KingComponent, reconstruct
from .quadrature import GaussRule, gauss_legendre
from .specfun import legendre_table

DEFAULT_ATOL_DF = 1e-10
L_CAP = 60


@dataclass(frozen=True)
class AmplitudeSet:
    amplitudes: np.ndarray  # (l_max + 1, n_nodes)
    l_max: int
    atol_df: float = DEFAULT_ATOL_DF

    def __post_init__(self):
        if self.amplitudes.shape[0] != self.l_max + 1:
            raise ValueError("amplitude rows must equal l_max + 1")
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("amplitudes must be finite")


@dataclass(frozen=True)
class AngularGrid:
    rule: GaussRule

    @classmethod
    def for_order(cls, l_max):
        return cls(gauss_legendre(l_max + 1))

    @property
    def mu(self):
        return self.rule.nodes

    @property
    def weights(self):
        return self.rule.weights


def forward_transform(samples, angular, l_max=None, atol_df=DEFAULT_ATOL_DF):
    """Amplitudes from samples f(v_alpha, mu_beta) at the Gauss nodes.

    ``samples`` has shape (n_nodes, n_mu). By default l_max = n_mu - 1.
    """
    f = np.asarray(samples, dtype=float)
    mu = angular.mu
    if f.ndim != 2 or f.shape[1] != mu.size:
        raise ValueError(f"samples need shape (n_nodes, {mu.size}), got {f.shape}")
    if l_max is None:
        l_max = mu.size - 1
    P = legendre_table(l_max, mu)
    norm = (2 * np.arange(l_max + 1) + 1) / 2.0
    amps = norm[:, None] * ((P * angular.weights) @ f.T)
    return AmplitudeSet(amps, l_max, atol_df)


def inverse_transform(amps, mu):
    """Samples f(v_alpha, mu_beta) = sum_l f_l(v_alpha) P_l(mu_beta); shape (n_nodes, n_mu)."""
    a = amps.amplitudes if isinstance(amps, AmplitudeSet) else np.asarray(amps, dtype=float)
    P = legendre_table(a.shape[0] - 1, np.atleast_1d(mu))
    return a.T @ P


def truncation_order_components(components, nodes, atol_df=DEFAULT_ATOL_DF, l_cap=L_CAP):
    """Smallest l_M with max_v |f_{l_M + 1}| <= atol_df for a King mixture."""
    if all(c.uhat == 0.0 for c in components):
        return 0
    amps = reconstruct(components, nodes, l_cap + 1)[0]
    peak = np.max(np.abs(amps), axis=1)
    for lm in range(l_cap + 1):
        if peak[lm + 1] <= atol_df:
            return lm
    return l_cap


def truncation_order(uhat, atol_df=DEFAULT_ATOL_DF, nodes=None):
    """l_M of a unit drifting Maxwellian with normalized drift ``uhat``."""
    if abs(uhat) >= 1:
        raise ValueError("|uhat| must be < 1")
    if atol_df <= 0:
        raise ValueError("atol_df must be positive")
    if nodes is None:
        nodes = np.linspace(0.0, 10.0, 129)
    return truncation_order_components([KingComponent(1.0, float(uhat), 1.0)], nodes, atol_df)
