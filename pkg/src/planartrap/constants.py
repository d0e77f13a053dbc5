"""Physical constants and shared defaults.

Lengths are meters, voltages volts, masses kg, charges coulombs throughout
the package.  The only unit conversions live at the edges (camera pixels,
CSV files in mm).
"""

import numpy as np

# standard gravity, m/s^2
G_STD = 9.80665

# Coulomb constant used for pairwise interactions, N m^2 / C^2
COULOMB_K = 8.9875e9

# drive frequency: 60 Hz line through the step-up transformer
OMEGA_DEFAULT = 2.0 * np.pi * 60.0

# Variac-to-trap step-up ratio; 20 V RMS on the Variac reads 963 V RMS
# at the rails, and that single operating point fixes the model ratio.
TRANSFORMER_RATIO = 963.0 / 20.0

# operating AC amplitude at the usual Variac setting
V_AC_RMS_DEFAULT = 963.0

# air drag on a lycopodium-scale sphere: Stokes b = 6*pi*mu*R
AIR_VISCOSITY = 1.81e-5        # Pa s
PARTICLE_RADIUS_DEFAULT = 14.6e-6   # m, mid-range of the 26.0-32.5 um diameters
PARTICLE_DENSITY_DEFAULT = 1000.0   # kg/m^3, sphere placeholder


def stokes_drag(radius: float = PARTICLE_RADIUS_DEFAULT,
                viscosity: float = AIR_VISCOSITY) -> float:
    """Linear drag coefficient b (kg/s) for a sphere in air."""
    return 6.0 * np.pi * viscosity * radius


def sphere_mass(radius: float = PARTICLE_RADIUS_DEFAULT,
                density: float = PARTICLE_DENSITY_DEFAULT) -> float:
    """Mass of the default spherical particle."""
    return density * (4.0 / 3.0) * np.pi * radius ** 3


DRAG_DEFAULT = stokes_drag()
MASS_DEFAULT = sphere_mass()

# collision bookkeeping radius
COLLISION_RADIUS = 15e-6
