"""Electron-deuterium temperature equilibration.

Electrons start at 1 keV and deuterons at 10 keV. The exchange rate
falls by orders of magnitude as the temperatures close, so the run uses
adaptive steps that grow with it.

    python3 demos/electron_deuterium.py
"""

import numpy as np

from kingfp.cli import load_config, simulate

cfg = load_config("eD.cfg")
out = simulate(cfg)
rec = out.record
t, T, dt = np.array(rec.t), np.array(rec.T), np.array(rec.dt)

print(f"{'t/tau0':>10} {'dt':>10} {'T_e':>9} {'T_D':>9}")
for k in np.unique(np.linspace(0, len(t) - 1, 12).astype(int)):
    print(f"{t[k]:10.3f} {dt[k]:10.3g} {T[k, 0]:9.4f} {T[k, 1]:9.4f}")

print(f"\n{len(t) - 1} levels, step size grew from {dt[1]:.3g} to {dt[-1]:.3g}")
print(f"max dK {max(rec.dK):.1e}, min ds {min(rec.ds):.1e}, most implicit stages {max(rec.iterations)}")
if out.failure:
    print("solver failure:", out.failure)
