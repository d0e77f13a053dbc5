"""Virtual planar five-rail charged-particle trap laboratory.

Closed-form electrostatics for a striped planar trap, static analysis of
levitation heights and charge-to-mass ratios, time-domain particle
dynamics, axial shuttling, a synthetic camera pipeline, and a small lab
service that ties them together.
"""

from .constants import (
    G_STD,
    COULOMB_K,
    OMEGA_DEFAULT,
    TRANSFORMER_RATIO,
    V_AC_RMS_DEFAULT,
    DRAG_DEFAULT,
    MASS_DEFAULT,
    sphere_mass,
    stokes_drag,
)
from .geometry import BoundarySegment, Rect, TrapGeometry, default_geometry
from .particles import Particle
from .fields import (
    DriveParams,
    VoltageState,
    PotentialSample,
    strip_potential,
    strip_gradient,
    dc_potential_2d,
    dc_gradient_2d,
    ac_potential_2d,
    ac_gradient_2d,
    ac_gradient_sq,
    rect_potential_3d,
    rect_gradient_3d,
    pseudopotential,
    pseudopotential_energy,
    total_potential_energy,
    total_energy_per_charge,
    per_mass_potential,
    per_mass_gradient,
    sample_potential,
)

__version__ = "0.1.0"

__all__ = [
    "G_STD",
    "COULOMB_K",
    "OMEGA_DEFAULT",
    "TRANSFORMER_RATIO",
    "V_AC_RMS_DEFAULT",
    "DRAG_DEFAULT",
    "MASS_DEFAULT",
    "sphere_mass",
    "stokes_drag",
    "BoundarySegment",
    "Rect",
    "TrapGeometry",
    "default_geometry",
    "Particle",
    "DriveParams",
    "VoltageState",
    "PotentialSample",
    "strip_potential",
    "strip_gradient",
    "dc_potential_2d",
    "dc_gradient_2d",
    "ac_potential_2d",
    "ac_gradient_2d",
    "ac_gradient_sq",
    "rect_potential_3d",
    "rect_gradient_3d",
    "pseudopotential",
    "pseudopotential_energy",
    "total_potential_energy",
    "total_energy_per_charge",
    "per_mass_potential",
    "per_mass_gradient",
    "sample_potential",
    "__version__",
]
