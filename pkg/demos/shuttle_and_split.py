"""Shuttle one particle a segment pitch down the axis, then split a
pair into the double well.  Prints the axial well positions next to the
simulated transfer so the two bookkeeping paths can be compared.

    python3 demos/shuttle_and_split.py
"""

import numpy as np

from planartrap.fields import DriveParams
from planartrap.geometry import TrapGeometry
from planartrap.particles import Particle
from planartrap.shuttle import (axial_profile, pattern_center_c, pattern_center_d,
                                pattern_split, run_shuttle_experiment,
                                run_split_experiment)

GAMMA = -2.1e-3

geom = TrapGeometry()
drive = DriveParams.from_rms(963.0)

prof_c = axial_profile(pattern_center_c(), geom, drive, GAMMA)
prof_d = axial_profile(pattern_center_d(), geom, drive, GAMMA)
prof_s = axial_profile(pattern_split(), geom, drive, GAMMA)
print("well minima along the axis [mm]:")
print(f"  centered on C: {np.round(prof_c.minima_mm(), 2)}")
print(f"  centered on D: {np.round(prof_d.minima_mm(), 2)}")
print(f"  double well:   {np.round(prof_s.minima_mm(), 2)}")

print("\nshuttling one particle C -> D ...")
distance, traj = run_shuttle_experiment(Particle.from_gamma(GAMMA))
print(f"  transferred {distance * 1e3:.2f} mm "
      f"({len(traj.events)} events along the way)")

print("\nsplitting a pair out of the C well ...")
d1, d2, traj2 = run_split_experiment(Particle.from_gamma(GAMMA),
                                     Particle.from_gamma(GAMMA))
print(f"  displacements {d1 * 1e3:+.2f} mm and {d2 * 1e3:+.2f} mm")
final = traj2.final_positions()
print(f"  final axial positions {np.round(final[:, 2] * 1e3, 2)} mm "
      f"vs double-well minima {np.round(prof_s.minima_mm(), 2)} mm")
