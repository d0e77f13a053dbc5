"""Static analysis: AC null, equilibrium heights, charge-to-mass estimation.

Everything here works in the trap cross-section at x = a/2 with the
per-mass reduced potential u = U/m, so results depend on the particle only
through gamma = q/m.  Heights are searched on (0, 50 mm]; a missing
interior minimum is reported as the ejection regime, not an error.

Stability is a two-part test.  The vertical well must have positive
curvature, and once the equilibrium has climbed to the AC null the
transverse curvature must still be positive.  Below the null a negative
transverse curvature on the symmetry axis only shifts the particle
sideways into the pseudopotential wall, so it does not count as loss.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .constants import G_STD
from .fields import (
    DriveParams,
    VoltageState,
    ac_gradient_2d,
    ac_gradient_sq,
    dc_unit_gradient,
    dc_unit_potential,
    per_mass_gradient,
)
from .geometry import TrapGeometry

Y_CAP = 0.05            # heights above this are treated as untrapped
_Y_FLOOR_FRACTION = 4e-3   # search floor as a fraction of the trap width


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NullPoint:
    x: float
    y_null: float


@dataclass(frozen=True)
class EquilibriumResult:
    """Vertical equilibrium on the symmetry axis.

    curvature is d2U/dy2 in J/m^2 for the particle that was passed in;
    x_curvature likewise along x.  trappable adds the transverse gate on
    top of the plain vertical test.
    """

    y_min: float
    curvature: float
    stable: bool
    x_curvature: float = float("nan")
    trappable: bool = False
    u_min: float = float("nan")

    @property
    def ejected(self) -> bool:
        return not self.trappable


@dataclass(frozen=True)
class GammaEstimate:
    gamma: float
    sigma: float
    method: str                 # "height-fit" or "null-balance"
    chi2_reduced: float | None = None

    def to_dict(self) -> dict:
        return {"method": self.method, "gamma_C_per_kg": self.gamma,
                "sigma_C_per_kg": self.sigma,
                "chi2_reduced": self.chi2_reduced}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass
class HeightVoltageSeries:
    """Measured (or simulated) heights and micromotion versus central DC.

    Stored in SI units; the CSV format uses millimetres for lengths to
    match how the camera calibration reports them.
    """

    v_central: np.ndarray
    y: np.ndarray
    sigma_y: np.ndarray
    alpha: np.ndarray
    sigma_alpha: np.ndarray
    meta: dict = field(default_factory=dict)

    CSV_COLUMNS = ("voltage_V", "height_mm", "sigma_height_mm",
                   "micromotion_mm", "sigma_micromotion_mm")

    def __post_init__(self):
        self.v_central = np.atleast_1d(np.asarray(self.v_central, dtype=float))
        n = self.v_central.size
        for name in ("y", "sigma_y", "alpha", "sigma_alpha"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.size != n:
                raise ValueError(f"{name} length {arr.size} != {n}")
            setattr(self, name, arr)

    def __len__(self) -> int:
        return self.v_central.size

    def to_csv(self, path_or_buf) -> None:
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            f = open(path_or_buf, "w", newline="")
            close = True
        else:
            f = path_or_buf
        try:
            w = csv.writer(f)
            w.writerow(self.CSV_COLUMNS)
            for i in range(len(self)):
                w.writerow([f"{self.v_central[i]:.9g}",
                            f"{self.y[i] * 1e3:.9g}",
                            f"{self.sigma_y[i] * 1e3:.9g}",
                            f"{self.alpha[i] * 1e3:.9g}",
                            f"{self.sigma_alpha[i] * 1e3:.9g}"])
        finally:
            if close:
                f.close()

    @classmethod
    def from_csv(cls, path_or_buf) -> "HeightVoltageSeries":
        if isinstance(path_or_buf, (str, bytes)):
            with open(path_or_buf, newline="") as f:
                return cls._read(f)
        return cls._read(path_or_buf)

    @classmethod
    def _read(cls, f) -> "HeightVoltageSeries":
        r = csv.DictReader(f)
        missing = set(cls.CSV_COLUMNS) - set(r.fieldnames or ())
        if missing:
            raise ValueError(f"missing columns: {sorted(missing)}")
        cols = {k: [] for k in cls.CSV_COLUMNS}
        for row in r:
            for k in cls.CSV_COLUMNS:
                cols[k].append(float(row[k]))
        return cls(v_central=np.array(cols["voltage_V"]),
                   y=np.array(cols["height_mm"]) * 1e-3,
                   sigma_y=np.array(cols["sigma_height_mm"]) * 1e-3,
                   alpha=np.array(cols["micromotion_mm"]) * 1e-3,
                   sigma_alpha=np.array(cols["sigma_micromotion_mm"]) * 1e-3)

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


class NullNotCrossedError(ValueError):
    """Micromotion never reached an interior minimum during the sweep."""


# ---------------------------------------------------------------------------
# AC null
# ---------------------------------------------------------------------------

def find_ac_null(geom: TrapGeometry, tol: float = 1e-9) -> NullPoint:
    """Locate the AC null on the symmetry axis.

    On x = a/2 the x-gradient of the AC shape vanishes by mirror symmetry,
    so the null is the single zero of the y-gradient (the crest of the
    shape function along the axis).  A sign-change scan brackets it and
    Brent's method polishes the root.
    """
    x0 = geom.centerline_x
    span = geom.total_width
    ys = np.geomspace(1e-4 * span, 5.0 * span, 800)
    _, sy = ac_gradient_2d(geom, (np.full_like(ys, x0), ys))
    sign = np.sign(sy)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if flips.size == 0:
        raise ValueError("no AC null on the symmetry axis (degenerate geometry)")
    i = flips[0]
    y_null = brentq(lambda y: ac_gradient_2d(geom, (x0, y))[1],
                    ys[i], ys[i + 1], xtol=tol)
    gsq = float(ac_gradient_sq(geom, (x0, y_null)))
    gmax = float(np.max(ac_gradient_sq(geom, (np.full_like(ys, x0), ys))))
    if not gsq < 1e-12 * gmax:
        raise ValueError("candidate null is not a deep gradient minimum")
    return NullPoint(x=x0, y_null=float(y_null))


# ---------------------------------------------------------------------------
# Vertical equilibrium
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _axis_tables(geom: TrapGeometry, n: int, y_lo: float, y_hi: float):
    """Grid of the two voltage-independent axis profiles (cached)."""
    ys = np.linspace(y_lo, y_hi, n)
    x = np.full_like(ys, geom.centerline_x)
    phi1 = dc_unit_potential(geom, (x, ys))
    gsq = ac_gradient_sq(geom, (x, ys))
    return ys, phi1, gsq


def equilibrium_heights(geom: TrapGeometry, drive: DriveParams, gamma: float,
                        volts, y_cap: float = Y_CAP,
                        n_grid: int = 600, refine_iters: int = 36):
    """Vectorized lowest-branch vertical minima for many voltages at once.

    Returns an array of heights with NaN where no interior minimum exists.
    The lowest interior local minimum is tracked deliberately: a particle
    swept up from low voltage rides that branch, and at high voltage a
    second, higher well can appear that the particle never visits.
    """
    volts = np.atleast_1d(np.asarray(volts, dtype=float))
    y_lo = _Y_FLOOR_FRACTION * geom.total_width
    ys, phi1, gsq = _axis_tables(geom, n_grid, y_lo, y_cap)
    k = gamma * gamma * drive.v_ac_amplitude ** 2 / (4.0 * drive.omega ** 2)
    u = (G_STD * ys)[None, :] + gamma * np.outer(volts, phi1) + k * gsq[None, :]

    interior = (u[:, 1:-1] < u[:, :-2]) & (u[:, 1:-1] <= u[:, 2:])
    has_min = interior.any(axis=1)
    idx = np.where(has_min, interior.argmax(axis=1) + 1, 1)

    a = ys[np.clip(idx - 1, 0, n_grid - 1)]
    b = ys[np.clip(idx + 1, 0, n_grid - 1)]

    # golden-section, all rows in lockstep
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _u_eval(geom, drive, gamma, volts, c)
    fd = _u_eval(geom, drive, gamma, volts, d)
    for _ in range(refine_iters):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + invphi * (b - a))
        c_new = np.where(left, b - invphi * (b - a), d)
        fd_new = np.where(left, fc, _u_eval(geom, drive, gamma, volts, d_new))
        fc_new = np.where(left, _u_eval(geom, drive, gamma, volts, c_new), fd)
        c, d, fc, fd = c_new, d_new, fc_new, fd_new
    y_min = 0.5 * (a + b)
    return np.where(has_min, y_min, np.nan)


def _u_eval(geom, drive, gamma, volts, y):
    """Per-mass axis potential for per-row voltages (y same shape)."""
    x = np.full_like(y, geom.centerline_x)
    phi1 = dc_unit_potential(geom, (x, y))
    gsq = ac_gradient_sq(geom, (x, y))
    k = gamma * gamma * drive.v_ac_amplitude ** 2 / (4.0 * drive.omega ** 2)
    return G_STD * y + gamma * volts * phi1 + k * gsq


def _axis_curvatures(geom, drive, gamma, v_central, y, h=5e-7):
    """(d2u/dy2, d2u/dx2) per mass at (a/2, y) by differencing the
    analytic gradient.  Broadcasts over arrays of (v_central, y)."""
    v_central = np.asarray(v_central, dtype=float)
    y = np.asarray(y, dtype=float)
    x0 = np.broadcast_to(np.asarray(geom.centerline_x), y.shape).astype(float)
    _, gy_p = per_mass_gradient(geom, drive, gamma, v_central, (x0, y + h))
    _, gy_m = per_mass_gradient(geom, drive, gamma, v_central, (x0, y - h))
    cyy = (gy_p - gy_m) / (2.0 * h)
    gx_p, _ = per_mass_gradient(geom, drive, gamma, v_central, (x0 + h, y))
    gx_m, _ = per_mass_gradient(geom, drive, gamma, v_central, (x0 - h, y))
    cxx = (gx_p - gx_m) / (2.0 * h)
    return cyy, cxx


def find_equilibrium_height(geom: TrapGeometry, drive: DriveParams,
                            voltages: VoltageState, particle,
                            y_cap: float = Y_CAP,
                            y_null: float | None = None) -> EquilibriumResult:
    """Minimize U(a/2, y) for one particle and classify stability.

    When the well has vanished the result carries NaNs and
    stable = trappable = False; that is the static ejection signature.
    """
    if particle.q == 0:
        raise ValueError("charge must be nonzero")
    gamma = particle.gamma
    v = voltages.v_central
    y_arr = equilibrium_heights(geom, drive, gamma, [v], y_cap=y_cap)
    y_min = float(y_arr[0])
    if not np.isfinite(y_min):
        return EquilibriumResult(y_min=float("nan"), curvature=float("nan"),
                                 stable=False, x_curvature=float("nan"),
                                 trappable=False)
    cyy, cxx = _axis_curvatures(geom, drive, gamma, v, y_min)
    cyy, cxx = float(cyy), float(cxx)
    stable = cyy > 0.0
    if y_null is None:
        y_null = find_ac_null(geom).y_null
    above_null = y_min > y_null + 1e-9
    trappable = stable and ((not above_null) or cxx > 0.0)
    m = particle.m
    u_min = float(_u_eval(geom, drive, gamma, np.asarray([v]),
                          np.asarray([y_min]))[0]) * m
    return EquilibriumResult(y_min=y_min, curvature=cyy * m, stable=stable,
                             x_curvature=cxx * m, trappable=trappable,
                             u_min=u_min)


def balance_voltage(geom: TrapGeometry, gamma: float,
                    y_null: float | None = None) -> float:
    """Central DC voltage that parks the equilibrium exactly at the null.

    At the null the pseudopotential force vanishes, so the vertical force
    balance is gravity against the DC field alone and inverts in closed
    form: V = -g / (gamma * d(phi_unit)/dy at the null).
    """
    if gamma == 0:
        raise ValueError("gamma must be nonzero")
    if y_null is None:
        y_null = find_ac_null(geom).y_null
    _, slope = dc_unit_gradient(geom, (geom.centerline_x, y_null))
    slope = float(slope)
    if slope == 0:
        raise ValueError("flat DC profile at the null")
    return -G_STD / (gamma * slope)


def static_eject_voltage(geom: TrapGeometry, drive: DriveParams, gamma: float,
                         v_magnitude_max: float = 1500.0,
                         coarse_step: float = 2.0,
                         tol: float = 0.01) -> float:
    """Smallest |V_central| at which the particle can no longer be held.

    Scans increasing voltage magnitude with the full stability test (well
    present, vertical curvature positive, transverse gate) and bisects the
    first stable-to-unstable step.  NaN when no stable voltage exists at
    all; +inf when nothing up to the cap destabilizes it.
    """
    y_null = find_ac_null(geom).y_null
    sign = -1.0 if gamma < 0 else 1.0   # lifting polarity

    def ok(vmag: float) -> bool:
        return bool(_trappable_mask(geom, drive, gamma,
                                    np.asarray([sign * vmag]), y_null)[0])

    vmags = np.arange(0.0, v_magnitude_max + coarse_step, coarse_step)
    state = _trappable_mask(geom, drive, gamma, sign * vmags, y_null)
    if not state.any():
        return float("nan")
    first_true = int(np.argmax(state))
    after = np.nonzero(~state[first_true:])[0]
    if after.size == 0:
        return float("inf")
    i = first_true + int(after[0])
    lo, hi = vmags[i - 1], vmags[i]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return sign * 0.5 * (lo + hi)


def _trappable_mask(geom, drive, gamma, volts, y_null) -> np.ndarray:
    """Full stability verdict for an array of central voltages."""
    volts = np.atleast_1d(np.asarray(volts, dtype=float))
    ys = equilibrium_heights(geom, drive, gamma, volts)
    ok = np.isfinite(ys)
    if not ok.any():
        return ok
    y_safe = np.where(ok, ys, 1e-3)
    cyy, cxx = _axis_curvatures(geom, drive, gamma, volts, y_safe)
    gated = (y_safe > y_null + 1e-9) & (cxx <= 0.0)
    return ok & (cyy > 0.0) & ~gated


# ---------------------------------------------------------------------------
# Charge-to-mass estimation
# ---------------------------------------------------------------------------

def model_height_curve(geom: TrapGeometry, drive: DriveParams, gamma: float,
                       volts) -> np.ndarray:
    """y_min(V; gamma) for an array of voltages (NaN where absent)."""
    return equilibrium_heights(geom, drive, gamma, volts)


def _chi2_of_gamma(gamma, series, geom, drive):
    model = model_height_curve(geom, drive, gamma, series.v_central)
    bad = ~np.isfinite(model)
    resid = np.where(bad, 0.0, (series.y - np.where(bad, 0.0, model))
                     / series.sigma_y)
    chi2 = float(np.sum(resid ** 2)) + 1e6 * int(bad.sum())
    return chi2


def fit_gamma_height_curve(series: HeightVoltageSeries, geom: TrapGeometry,
                           drive: DriveParams,
                           gamma_bounds=(-8e-3, -5e-5)) -> GammaEstimate:
    """Method 1: one-parameter weighted least squares of the height curve.

    chi^2(gamma) is profiled directly; sigma comes from the delta-chi^2 = 1
    interval, which is exact for a single parameter and makes no
    linearization of the (nonlinear) model.
    """
    if len(series) < 3:
        raise ValueError("need at least 3 points to fit")
    if np.any(series.sigma_y <= 0):
        raise ValueError("sigma_y must be positive for every fitted point")
    if np.allclose(series.v_central, series.v_central[0]):
        raise ValueError("all voltages identical; height curve is degenerate")
    lo, hi = gamma_bounds
    scan = -np.geomspace(-hi, -lo, 60)[::-1]   # negative gammas, ascending
    chi = np.array([_chi2_of_gamma(g, series, geom, drive) for g in scan])
    i = int(np.argmin(chi))
    blo = scan[max(i - 1, 0)]
    bhi = scan[min(i + 1, scan.size - 1)]
    res = minimize_scalar(_chi2_of_gamma, bounds=(blo, bhi), method="bounded",
                          args=(series, geom, drive),
                          options={"xatol": 1e-9})
    g_hat = float(res.x)
    chi2_min = float(res.fun)

    def excess(g):
        return _chi2_of_gamma(g, series, geom, drive) - chi2_min - 1.0

    sigma_sides = []
    for direction in (-1.0, +1.0):
        step = max(abs(g_hat) * 1e-4, 1e-8)
        g_edge = g_hat
        f_edge = -1.0
        for _ in range(60):
            g_try = g_hat + direction * step
            f_try = excess(g_try)
            if f_try > 0:
                root = brentq(excess, min(g_edge, g_try), max(g_edge, g_try),
                              xtol=1e-10)
                sigma_sides.append(abs(root - g_hat))
                break
            g_edge, f_edge = g_try, f_try
            step *= 1.8
        del f_edge
    sigma = float(np.mean(sigma_sides)) if sigma_sides else float("nan")
    n = len(series)
    return GammaEstimate(gamma=g_hat, sigma=sigma, method="height-fit",
                         chi2_reduced=chi2_min / (n - 1))


def gamma_from_null_balance(y_null: float, v_central_at_min_micromotion: float,
                            geom: TrapGeometry, sigma_y_null: float = 0.0,
                            sigma_v: float = 0.0) -> GammaEstimate:
    """Method 2: invert the force balance at the observed null crossing."""
    if y_null <= 0:
        raise ValueError("y_null must be positive")
    v = v_central_at_min_micromotion
    if v == 0:
        raise ValueError("zero central voltage cannot balance gravity")
    x0 = geom.centerline_x
    _, slope = dc_unit_gradient(geom, (x0, y_null))
    slope = float(slope)
    if slope == 0:
        raise ValueError("flat DC profile at the given height")
    gamma = -G_STD / (v * slope)
    # first-order propagation: d(gamma)/dV = -gamma/V, and through the
    # height via the curvature of the unit profile
    h = 1e-7
    _, sp = dc_unit_gradient(geom, (x0, y_null + h))
    _, sm = dc_unit_gradient(geom, (x0, y_null - h))
    dslope = (float(sp) - float(sm)) / (2.0 * h)
    dg_dv = -gamma / v
    dg_dy = -gamma * dslope / slope
    sigma = float(np.hypot(dg_dv * sigma_v, dg_dy * sigma_y_null))
    return GammaEstimate(gamma=float(gamma), sigma=sigma,
                         method="null-balance")


def micromotion_minimum(series: HeightVoltageSeries, refine: bool = True,
                        strict: bool = True):
    """Voltage and height of minimal micromotion amplitude.

    Camera-derived amplitudes bottom out at the stationary-spot reading,
    so near the null the series can sit on a flat run of tied minima.
    The run is treated as one feature: its midpoint is the raw vertex
    estimate, and with refine=True the crossing of straight lines fitted
    to the flanks on either side of the run replaces it when the two
    agree.  strict=True raises NullNotCrossedError when the minimum run
    touches an end of the sweep (the amplitude never turned around, so
    the null was not crossed).
    """
    if len(series) < 3:
        raise ValueError("need at least 3 points")
    a = series.alpha
    i = int(np.argmin(a))
    j0 = j1 = i
    while j0 > 0 and a[j0 - 1] == a[i]:
        j0 -= 1
    while j1 < len(a) - 1 and a[j1 + 1] == a[i]:
        j1 += 1
    interior = j0 > 0 and j1 < len(a) - 1
    if strict and not interior:
        raise NullNotCrossedError(
            "micromotion amplitude is monotone over the sweep")
    v = series.v_central
    if not interior:
        edge = 0 if j0 == 0 else len(a) - 1
        return float(v[edge]), float(series.y[edge])
    v_at_min = 0.5 * (float(v[j0]) + float(v[j1]))
    order = np.argsort(v)
    y_at_min = float(np.interp(v_at_min, v[order], series.y[order]))
    if refine:
        vtx = _vee_vertex(v, a, j0, j1)
        if vtx is not None:
            v_at_min = vtx
            y_at_min = float(np.interp(vtx, v[order], series.y[order]))
    return v_at_min, y_at_min


def _vee_vertex(v, a, j0, j1, halfwidth=3):
    """Intersect straight lines fitted to the flanks beside the tied
    minimum run [j0, j1]; reject a crossing outside the run by more
    than one grid step."""
    lo = max(0, j0 - halfwidth)
    hi = min(len(v), j1 + 1 + halfwidth)
    left_v, left_a = v[lo:j0], a[lo:j0]
    right_v, right_a = v[j1 + 1:hi], a[j1 + 1:hi]
    if left_v.size < 2 or right_v.size < 2:
        return None
    m1, b1 = np.polyfit(left_v, left_a, 1)
    m2, b2 = np.polyfit(right_v, right_a, 1)
    if m1 == m2:
        return None
    vtx = (b2 - b1) / (m1 - m2)
    step = np.median(np.abs(np.diff(v))) if v.size > 1 else 0.0
    span_lo = min(v[j0], v[j1]) - max(step, 1e-12)
    span_hi = max(v[j0], v[j1]) + max(step, 1e-12)
    if not span_lo <= vtx <= span_hi:
        return None
    return float(vtx)


def reduced_chi_squared(model_heights, series: HeightVoltageSeries,
                        n_params: int = 1) -> float:
    """chi^2 per degree of freedom of a model against measured heights."""
    model = np.asarray(model_heights, dtype=float)
    n = len(series)
    if model.size != n:
        raise ValueError("model length mismatch")
    if n <= n_params:
        raise ValueError("need more points than parameters")
    if np.any(series.sigma_y == 0):
        raise ValueError("zero height uncertainty")
    resid = (series.y - model) / series.sigma_y
    return float(np.sum(resid ** 2) / (n - n_params))


# ---------------------------------------------------------------------------
# Geometry calibration helpers
# ---------------------------------------------------------------------------

def solve_gap_for_null(geom: TrapGeometry, y_null_target: float,
                       lo: float = 1e-4, hi: float = 0.1) -> float:
    """Rail-to-segment gap that puts the AC null at the requested height.

    The outer gap sets how far the AC rails' outer ramps reach, which is
    the main lever on the null height at fixed rail widths.
    """
    def err(gap):
        g = geom.replace(gap_ac_segment=gap)
        return find_ac_null(g).y_null - y_null_target

    return float(brentq(err, lo, hi, xtol=1e-12))


def solve_gap_for_dc_slope(geom: TrapGeometry, y_ref: float,
                           slope_target: float,
                           lo: float = 1e-6, hi: float = 2e-3) -> float:
    """Central-to-rail gap giving the requested unit DC slope at (a/2, y_ref).

    The inner gap controls how much of the central electrode's field
    survives at height, i.e. the voltage scale of the force balance.
    """
    def err(gap):
        g = geom.replace(gap_central_ac=gap)
        _, s = dc_unit_gradient(g, (g.centerline_x, y_ref))
        return float(s) - slope_target

    return float(brentq(err, lo, hi, xtol=1e-15))
