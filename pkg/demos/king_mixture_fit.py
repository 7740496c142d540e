"""Fitting King mixtures to the moments of a non-Gaussian distribution.

The target is a Maxwellian with small Sonine corrections, whose speed
moments are known in closed form. One King component matches density,
momentum and energy. Two components also capture the j = 4 moment, and
the error left in the higher moments shows how much of the tail the
mixture still misses.

    python3 demos/king_mixture_fit.py
"""

import math

import numpy as np

from kingfp.kfe import KingComponent, cpe_moments, fit_parameters, reconstruct, split_component


def gamma_moment(p):
    return 2 / math.sqrt(math.pi) * math.gamma((p + 3) / 2)


def target_moment(j, a2=0.1, a3=-0.02):
    s2 = 15 / 8 * gamma_moment(j) - 5 / 2 * gamma_moment(j + 2) + 1 / 2 * gamma_moment(j + 4)
    s3 = (35 / 16 * gamma_moment(j) - 35 / 8 * gamma_moment(j + 2) + 7 / 4 * gamma_moment(j + 4)
          - gamma_moment(j + 6) / 6)
    return gamma_moment(j) + a2 * s2 + a3 * s3


js = [0, 2, 4, 6, 8]
targets = {(j, 0): target_moment(j) for j in js}
targets[(1, 1)] = 0.0

fits = {
    1: fit_parameters(targets, 1, [KingComponent(1.0, 0.0, 1.0)], "L01jd2"),
    2: fit_parameters(targets, 2, split_component(KingComponent(1.0, 0.0, 1.0)), "L01jd2"),
}

print(f"{'j':>3} {'target':>12} {'NK=1 error':>12} {'NK=2 error':>12}")
for j in js:
    errs = [abs(cpe_moments(fits[nk].components, [(j, 0)])[0] / targets[(j, 0)] - 1) for nk in (1, 2)]
    print(f"{j:3d} {targets[(j, 0)]:12.6f} {errs[0]:12.2e} {errs[1]:12.2e}")

for nk, fit in fits.items():
    parts = ", ".join(f"(n={c.nhat:.4f}, sigma={c.sigma:.4f})" for c in fit.components)
    print(f"NK={nk}: {parts}")

# isotropic amplitude of the two-component mixture on a few speeds
v = np.array([0.0, 0.5, 1.0, 2.0, 3.0])
f0 = reconstruct(fits[2].components, v, 0)[0, 0]
print("\nf_0(v) of the NK=2 mixture:", np.array2string(f0, precision=5))
