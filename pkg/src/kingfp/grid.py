"""Normalized speed grids: uniform field nodes plus Chebyshev subinterval nodes."""

from dataclasses import dataclass, field
import warnings

import numpy as np

from .quadrature import chebyshev_nodes

DEFAULT_N2 = 7
DEFAULT_N0 = 7
DEFAULT_VHAT_MAX = 10.0
VHAT_MAX_BRACKET = (3.0, 50.0)
VHAT_MAX_LEVEL = 4.44e-17


class GridAdaptWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SpeedGrid:
    n2: int
    N0: int
    vhat_max: float
    field_nodes: np.ndarray = field(repr=False)
    sub_nodes: np.ndarray = field(repr=False)  # (N_n - 1, N0)

    @property
    def n_field(self):
        return self.field_nodes.size

    @property
    def n_fine(self):
        return (self.N0 - 1) * (self.n_field - 2) + self.N0

    @property
    def spacing(self):
        return self.vhat_max / 2**self.n2

    @property
    def fine_nodes(self):
        """All distinct subinterval nodes in ascending order (length n_fine)."""
        inner = self.sub_nodes[:, :-1].ravel()
        return np.append(inner, self.sub_nodes[-1, -1])

    @property
    def field_index(self):
        """Positions of the field nodes inside ``fine_nodes``."""
        return np.arange(0, self.n_fine, self.N0 - 1)

    def scaled(self, factor):
        """Same node layout with every normalized speed multiplied by ``factor``."""
        return build_grid(self.n2, self.N0, self.vhat_max * factor)


def build_grid(n2, N0, vhat_max):
    """Uniform field nodes on [0, vhat_max] with N0 Chebyshev points per interval."""
    if int(n2) != n2 or n2 < 3:
        raise ValueError("n2 must be an integer >= 3")
    if int(N0) != N0 or N0 < 3:
        raise ValueError("N0 must be an integer >= 3")
    if not np.isfinite(vhat_max) or vhat_max <= 0:
        raise ValueError("vhat_max must be positive")
    n2, N0 = int(n2), int(N0)
    nn = 2**n2 + 1
    nodes = np.linspace(0.0, vhat_max, nn)
    sub = np.empty((nn - 1, N0))
    for i in range(nn - 1):
        sub[i] = chebyshev_nodes(nodes[i], nodes[i + 1], N0)
    nodes.flags.writeable = False
    sub.flags.writeable = False
    return SpeedGrid(n2, N0, float(vhat_max), nodes, sub)


def map_to_background(grid, vth_ratio):
    """Speeds in the background species' normalization, z = (v_ath / v_bth) * vhat.

    ``grid`` is a SpeedGrid (all fine nodes are mapped) or an array of speeds.
    """
    if not np.isfinite(vth_ratio) or vth_ratio <= 0:
        raise ValueError("thermal-speed ratio must be positive")
    nodes = grid.fine_nodes if isinstance(grid, SpeedGrid) else np.asarray(grid, dtype=float)
    return vth_ratio * nodes


def _tail_level(components, nk, v):
    from .kfe import reconstruct

    f0, f1 = reconstruct(components, np.atleast_1d(v), 1)[0]
    j = 2.5 * nk
    return v**j * f0 + v ** (j + 1) * np.abs(f1) - VHAT_MAX_LEVEL


def adapt_vhat_max(components, nk, current, bracket=VHAT_MAX_BRACKET, tol=1e-10):
    """Speed bound where the weighted l = 0, 1 amplitudes fall to 4.44e-17.

    Bisection on ``bracket``; without a sign change the current bound is kept
    and a GridAdaptWarning is issued.
    """
    lo, hi = bracket
    glo = _tail_level(components, nk, lo)[0]
    ghi = _tail_level(components, nk, hi)[0]
    if not (np.isfinite(glo) and np.isfinite(ghi)) or glo * ghi > 0:
        warnings.warn("no sign change while adapting vhat_max; keeping current bound",
                      GridAdaptWarning, stacklevel=2)
        return float(current)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        gm = _tail_level(components, nk, mid)[0]
        if gm * glo > 0:
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)
