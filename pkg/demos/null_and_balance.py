"""Walk the static side of the trap: find the AC null, then watch the
DC equilibrium height climb onto it as the central voltage approaches
the balance point.

Run from anywhere after installing the package:

    python3 demos/null_and_balance.py
"""

import numpy as np

from planartrap.analysis import balance_voltage, find_ac_null, find_equilibrium_height
from planartrap.fields import DriveParams, VoltageState
from planartrap.geometry import TrapGeometry
from planartrap.particles import Particle

GAMMA = -1.08e-3            # the reference particle of the height-curve figure

geom = TrapGeometry()
drive = DriveParams.from_rms(963.0)
particle = Particle.from_gamma(GAMMA)

null = find_ac_null(geom)
vb = balance_voltage(geom, GAMMA)
print(f"AC null: y = {null.y_null * 1e3:.3f} mm above the plane "
      f"(centerline x = {geom.centerline_x * 1e3:.2f} mm)")
print(f"balance voltage for gamma = {GAMMA:.2e} C/kg: {vb:.2f} V\n")

print(f"{'V_central':>10} {'y_eq [mm]':>10} {'null frac':>10}")
for frac in (0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 1.0):
    v = frac * vb
    eq = find_equilibrium_height(geom, drive,
                                 VoltageState(v_central=v, drive=drive),
                                 particle)
    print(f"{v:10.1f} {eq.y_min * 1e3:10.4f} {eq.y_min / null.y_null:10.4f}")

print("\nAt the balance voltage the particle sits on the null and the "
      "drive can no longer shake it; that is the dip every micromotion "
      "sweep is hunting for.")
