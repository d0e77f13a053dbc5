"""Closed-form free-space potentials above the electrode plane.

Everything here is a half-space Dirichlet solution: the electrode plane
y = 0 carries a piecewise-linear voltage profile (conductors at fixed
voltage, linear interpolation ramps across the gaps) and the potential
above follows from the Poisson kernel.  For an infinite strip the integral
collapses to arctan terms; a linear ramp adds a log term.  Finite
rectangles use the solid-angle form.

All evaluators broadcast over numpy arrays and have analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import G_STD, OMEGA_DEFAULT
from .geometry import BoundarySegment, Rect, TrapGeometry


@dataclass(frozen=True)
class DriveParams:
    """AC drive: signed peak amplitude and angular frequency."""

    v_ac_amplitude: float
    omega: float = OMEGA_DEFAULT

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")

    @classmethod
    def from_rms(cls, v_rms: float, omega: float = OMEGA_DEFAULT) -> "DriveParams":
        return cls(v_ac_amplitude=np.sqrt(2.0) * v_rms, omega=omega)

    @property
    def v_rms(self) -> float:
        return self.v_ac_amplitude / np.sqrt(2.0)


@dataclass(frozen=True)
class VoltageState:
    """Instantaneous electrode settings."""

    v_central: float = 0.0
    drive: DriveParams = DriveParams(0.0)
    segments: dict | None = None      # {"A": V, ...}; None = all grounded
    v_endcap: float = 0.0

    def segment_voltage(self, name: str) -> float:
        if self.segments is None:
            return 0.0
        return float(self.segments.get(name, 0.0))


def _check_y(y):
    if np.any(np.asarray(y) <= 0):
        raise ValueError("potential is defined for y > 0 only (half-space solution)")


# ---------------------------------------------------------------------------
# 2D strip / ramp pieces
# ---------------------------------------------------------------------------

def _piece_potential(x, y, x1, x2, v1, v2):
    """Potential of one boundary piece; v1 == v2 gives the plain strip."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d2 = (x2 - x) ** 2 + y ** 2
    d1 = (x1 - x) ** 2 + y ** 2
    ang = np.arctan2(x2 - x, y) - np.arctan2(x1 - x, y)
    if v1 == v2:
        return v1 / np.pi * ang
    beta = (v2 - v1) / (x2 - x1)
    vx = v1 + beta * (x - x1)
    return (vx * ang + 0.5 * beta * y * np.log(d2 / d1)) / np.pi


def _piece_gradient(x, y, x1, x2, v1, v2):
    """(d/dx, d/dy) of _piece_potential, analytic."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d2 = (x2 - x) ** 2 + y ** 2
    d1 = (x1 - x) ** 2 + y ** 2
    if v1 == v2:
        gx = v1 / np.pi * (y / d1 - y / d2)
        gy = v1 / np.pi * ((x1 - x) / d1 - (x2 - x) / d2)
        return gx, gy
    beta = (v2 - v1) / (x2 - x1)
    vx = v1 + beta * (x - x1)
    ang = np.arctan2(x2 - x, y) - np.arctan2(x1 - x, y)
    gx = (beta * ang - y * v2 / d2 + y * v1 / d1) / np.pi
    d_ang = (x1 - x) / d1 - (x2 - x) / d2
    d_log = 2.0 * y / d2 - 2.0 * y / d1
    gy = (vx * d_ang + 0.5 * beta * np.log(d2 / d1) + 0.5 * beta * y * d_log) / np.pi
    return gx, gy


def strip_potential(seg: BoundarySegment, point) -> np.ndarray:
    """Free-space voltage above one boundary segment (strip or ramp)."""
    x, y = point
    _check_y(y)
    return _piece_potential(x, y, seg.x1, seg.x2, seg.v1, seg.v2)


def strip_gradient(seg: BoundarySegment, point):
    x, y = point
    _check_y(y)
    return _piece_gradient(x, y, seg.x1, seg.x2, seg.v1, seg.v2)


def _boundary_potential(segs, x, y):
    tot = 0.0
    for s in segs:
        tot = tot + _piece_potential(x, y, s.x1, s.x2, s.v1, s.v2)
    return tot


def _boundary_gradient(segs, x, y):
    gx = 0.0
    gy = 0.0
    for s in segs:
        px, py = _piece_gradient(x, y, s.x1, s.x2, s.v1, s.v2)
        gx = gx + px
        gy = gy + py
    return gx, gy


# ---------------------------------------------------------------------------
# Trap cross-section models
# ---------------------------------------------------------------------------

def dc_potential_2d(geom: TrapGeometry, v_central: float, point):
    """Central electrode at v_central with its gap ramps; rails grounded."""
    x, y = point
    _check_y(y)
    return _boundary_potential(geom.dc_boundary(v_central), x, y)


def dc_gradient_2d(geom: TrapGeometry, v_central: float, point):
    x, y = point
    _check_y(y)
    return _boundary_gradient(geom.dc_boundary(v_central), x, y)


def ac_potential_2d(geom: TrapGeometry, point):
    """Spatial factor of the AC potential, unit rail amplitude."""
    x, y = point
    _check_y(y)
    return _boundary_potential(geom.ac_boundary(), x, y)


def ac_gradient_2d(geom: TrapGeometry, point):
    x, y = point
    _check_y(y)
    return _boundary_gradient(geom.ac_boundary(), x, y)


def ac_gradient_sq(geom: TrapGeometry, point):
    """|grad phi_AC|^2 per unit amplitude; the pseudopotential shape."""
    gx, gy = ac_gradient_2d(geom, point)
    return gx * gx + gy * gy


def ac_potential_zero_gap_reference(geom: TrapGeometry, point):
    """Literal zero-gap rail formula, kept as an independent reference.

    (V/pi)[arctan((a+b-x)/y) + arctan((c+x)/y) - arctan((a-x)/y) - arctan(x/y)]
    with unit amplitude, valid when both rails touch the central electrode.
    """
    x, y = point
    _check_y(y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b, c = geom.a, geom.b, geom.c
    return (np.arctan2(a + b - x, y) + np.arctan2(c + x, y)
            - np.arctan2(a - x, y) - np.arctan2(x, y)) / np.pi


# ---------------------------------------------------------------------------
# Finite rectangles (segments, endcaps)
# ---------------------------------------------------------------------------

def rect_potential_3d(rect: Rect, v: float, point3d):
    """Solid-angle potential of a rectangle at voltage v in the plane."""
    x, y, z = point3d
    _check_y(y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    tot = 0.0
    for i, xi in enumerate((rect.x1, rect.x2)):
        for j, zj in enumerate((rect.z1, rect.z2)):
            u = xi - x
            w = zj - z
            r = np.sqrt(u * u + y * y + w * w)
            term = np.arctan2(u * w, y * r)
            tot = tot + ((-1.0) ** (i + j)) * term
    return v / (2.0 * np.pi) * tot


def rect_gradient_3d(rect: Rect, v: float, point3d):
    """(d/dx, d/dy, d/dz) of rect_potential_3d, analytic."""
    x, y, z = point3d
    _check_y(y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    gx = 0.0
    gy = 0.0
    gz = 0.0
    for i, xi in enumerate((rect.x1, rect.x2)):
        for j, zj in enumerate((rect.z1, rect.z2)):
            u = xi - x
            w = zj - z
            r2 = u * u + y * y + w * w
            r = np.sqrt(r2)
            den = r * (y * y * r2 + u * u * w * w)
            sgn = (-1.0) ** (i + j)
            gx = gx + sgn * (-y * w * (y * y + w * w)) / den
            gy = gy + sgn * (-u * w * (r2 + y * y)) / den
            gz = gz + sgn * (-y * u * (y * y + u * u)) / den
    k = v / (2.0 * np.pi)
    return k * gx, k * gy, k * gz


def segment_stack_potential(geom: TrapGeometry, voltages: VoltageState, point3d):
    """Potential of all driven segments, undriven outer segments and
    endcaps at the given 3D point."""
    tot = 0.0
    rects = geom.segment_rects()
    for name, (left, right) in rects.items():
        v = voltages.segment_voltage(name)
        if v != 0.0:
            tot = tot + rect_potential_3d(left, v, point3d)
            tot = tot + rect_potential_3d(right, v, point3d)
    if voltages.v_endcap != 0.0:
        for r in geom.endcap_rects:
            tot = tot + rect_potential_3d(r, voltages.v_endcap, point3d)
        for r in geom.undriven_segment_rects():
            tot = tot + rect_potential_3d(r, voltages.v_endcap, point3d)
    return tot


def segment_stack_gradient(geom: TrapGeometry, voltages: VoltageState, point3d):
    gx = gy = gz = 0.0
    rects = geom.segment_rects()
    for name, (left, right) in rects.items():
        v = voltages.segment_voltage(name)
        if v != 0.0:
            for r in (left, right):
                px, py, pz = rect_gradient_3d(r, v, point3d)
                gx, gy, gz = gx + px, gy + py, gz + pz
    if voltages.v_endcap != 0.0:
        extra = list(geom.endcap_rects) + geom.undriven_segment_rects()
        for r in extra:
            px, py, pz = rect_gradient_3d(r, voltages.v_endcap, point3d)
            gx, gy, gz = gx + px, gy + py, gz + pz
    return gx, gy, gz


# ---------------------------------------------------------------------------
# Pseudopotential and total energy
# ---------------------------------------------------------------------------

def pseudopotential(geom: TrapGeometry, drive: DriveParams,
                    q_over_m: float, point):
    """Ponderomotive energy per unit charge (J/C) at a 2D cross-section point.

    psi/q = (gamma / 4 Omega^2) * V_pk^2 * |grad phi_AC|^2.  Multiply by q
    for joules; with negative gamma this per-charge value is negative while
    the energy itself is positive.
    """
    if drive.omega == 0:
        raise ValueError("zero-frequency drive")
    gsq = ac_gradient_sq(geom, point)
    return q_over_m * drive.v_ac_amplitude ** 2 / (4.0 * drive.omega ** 2) * gsq


def pseudopotential_energy(geom: TrapGeometry, drive: DriveParams,
                           q: float, m: float, point):
    """psi in joules for explicit charge and mass."""
    if drive.omega == 0:
        raise ValueError("zero-frequency drive")
    gsq = ac_gradient_sq(geom, point)
    return q * q * drive.v_ac_amplitude ** 2 / (4.0 * m * drive.omega ** 2) * gsq


def total_potential_energy(geom: TrapGeometry, drive: DriveParams,
                           voltages: VoltageState, particle,
                           point, z: float | None = None):
    """Time-independent energy U (J): gravity + DC + pseudopotential.

    ``particle`` needs .q and .m.  2D by default; pass z to include
    segment/endcap rectangles.
    """
    q, m = particle.q, particle.m
    if m <= 0:
        raise ValueError("mass must be positive")
    if q == 0:
        raise ValueError("charge must be nonzero")
    x, y = point
    u = m * G_STD * np.asarray(y, dtype=float)
    u = u + q * dc_potential_2d(geom, voltages.v_central, point)
    u = u + pseudopotential_energy(geom, drive, q, m, point)
    if z is not None:
        u = u + q * segment_stack_potential(geom, voltages, (x, y, z))
    return u


def total_energy_per_charge(geom: TrapGeometry, drive: DriveParams,
                            voltages: VoltageState, particle,
                            point, z: float | None = None):
    """U/q in volts, the quantity plotted against electrode settings.

    For negative q this flips the sign of the gravity and pseudopotential
    terms relative to U itself.
    """
    u = total_potential_energy(geom, drive, voltages, particle, point, z)
    return u / particle.q


def total_energy_gradient(geom: TrapGeometry, drive: DriveParams,
                          voltages: VoltageState, particle,
                          point, z: float | None = None):
    """Analytic (dU/dx, dU/dy[, dU/dz])."""
    q, m = particle.q, particle.m
    x, y = point
    dgx, dgy = dc_gradient_2d(geom, voltages.v_central, point)
    agx, agy = ac_gradient_2d(geom, point)
    # d/dr of psi = q^2 Vpk^2/(4 m Om^2) * 2 (grad s . d grad s) needs second
    # derivatives of s; use the harmonic identity instead: for s harmonic,
    # grad|grad s|^2 = 2 (H . grad s) with Hessian H.  We form H analytically
    # from the gradient pieces by differentiating once more numerically-free:
    sxx, sxy, syy = _ac_hessian(geom, point)
    k = q * q * drive.v_ac_amplitude ** 2 / (4.0 * m * drive.omega ** 2)
    px = k * 2.0 * (agx * sxx + agy * sxy)
    py = k * 2.0 * (agx * sxy + agy * syy)
    ux = q * dgx + px
    uy = m * G_STD + q * dgy + py
    if z is None:
        return ux, uy
    gx3, gy3, gz3 = segment_stack_gradient(geom, voltages, (x, y, z))
    return ux + q * gx3, uy + q * gy3, q * gz3


def _piece_hessian(x, y, x1, x2, v1, v2):
    """Second derivatives (sxx, sxy, syy) of one boundary piece."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u2 = x2 - x
    u1 = x1 - x
    d2 = u2 * u2 + y * y
    d1 = u1 * u1 + y * y
    if v1 == v2:
        # gx = v/pi (y/d1 - y/d2)
        sxx = v1 / np.pi * (2.0 * y * u1 / d1 ** 2 - 2.0 * y * u2 / d2 ** 2)
        sxy = v1 / np.pi * ((u1 * u1 - y * y) / d1 ** 2 - (u2 * u2 - y * y) / d2 ** 2)
        syy = -sxx
        return sxx, sxy, syy
    beta = (v2 - v1) / (x2 - x1)
    # gx = (beta*ang - y*v2/d2 + y*v1/d1)/pi
    # d/dx ang = y/d1 - y/d2 ; d/dx (y/d) = 2*y*u/d^2 (u = xi - x)
    sxx = (beta * (y / d1 - y / d2)
           - v2 * 2.0 * y * u2 / d2 ** 2 + v1 * 2.0 * y * u1 / d1 ** 2) / np.pi
    # d/dy gx: d/dy ang = u1/d1 - u2/d2 ; d/dy (y/d) = (u^2 - y^2)/d^2
    sxy = (beta * (u1 / d1 - u2 / d2)
           - v2 * (u2 * u2 - y * y) / d2 ** 2 + v1 * (u1 * u1 - y * y) / d1 ** 2) / np.pi
    syy = -sxx
    return sxx, sxy, syy


def _ac_hessian(geom: TrapGeometry, point):
    x, y = point
    sxx = sxy = syy = 0.0
    for s in geom.ac_boundary():
        hxx, hxy, hyy = _piece_hessian(x, y, s.x1, s.x2, s.v1, s.v2)
        sxx, sxy, syy = sxx + hxx, sxy + hxy, syy + hyy
    return sxx, sxy, syy


def dc_unit_potential(geom: TrapGeometry, point):
    """DC shape function: central electrode at 1 V."""
    return dc_potential_2d(geom, 1.0, point)


def dc_unit_gradient(geom: TrapGeometry, point):
    return dc_gradient_2d(geom, 1.0, point)


def per_mass_potential(geom: TrapGeometry, drive: DriveParams,
                       gamma: float, v_central: float, point):
    """U/m (J/kg) in the cross-section for charge-to-mass ratio gamma.

    Statics depend on q and m only through gamma, so the analysis layer
    works with this reduced form throughout:
        u = g*y + gamma*Vc*phi1(x,y) + gamma^2 Vpk^2/(4 Om^2) |grad s|^2
    """
    x, y = point
    u = G_STD * np.asarray(y, dtype=float)
    u = u + gamma * v_central * dc_unit_potential(geom, point)
    k = gamma * gamma * drive.v_ac_amplitude ** 2 / (4.0 * drive.omega ** 2)
    return u + k * ac_gradient_sq(geom, point)


def per_mass_gradient(geom: TrapGeometry, drive: DriveParams,
                      gamma: float, v_central: float, point):
    """(d/dx, d/dy) of per_mass_potential, analytic."""
    dgx, dgy = dc_unit_gradient(geom, point)
    agx, agy = ac_gradient_2d(geom, point)
    sxx, sxy, syy = _ac_hessian(geom, point)
    k = gamma * gamma * drive.v_ac_amplitude ** 2 / (4.0 * drive.omega ** 2)
    ux = gamma * v_central * dgx + k * 2.0 * (agx * sxx + agy * sxy)
    uy = G_STD + gamma * v_central * dgy + k * 2.0 * (agx * sxy + agy * syy)
    return ux, uy


@dataclass(frozen=True)
class PotentialSample:
    """One exported grid sample."""

    x: float
    y: float
    z: float | None
    phi: float
    e_field: tuple
    pseudo_energy_per_charge: float


def sample_potential(geom: TrapGeometry, drive: DriveParams,
                     voltages: VoltageState, q_over_m: float,
                     x, y, z=None) -> PotentialSample:
    """Assemble a PotentialSample at one point (DC potential + field +
    per-charge pseudopotential)."""
    phi = dc_potential_2d(geom, voltages.v_central, (x, y))
    gx, gy = dc_gradient_2d(geom, voltages.v_central, (x, y))
    if z is not None:
        phi = phi + segment_stack_potential(geom, voltages, (x, y, z))
        sx, sy, sz = segment_stack_gradient(geom, voltages, (x, y, z))
        e = (-(gx + sx), -(gy + sy), -sz)
    else:
        e = (-gx, -gy)
    psi = pseudopotential(geom, drive, q_over_m, (x, y))
    return PotentialSample(x=float(x), y=float(y),
                           z=None if z is None else float(z),
                           phi=float(phi), e_field=tuple(float(v) for v in e),
                           pseudo_energy_per_charge=float(psi))
