"""Segmented-electrode patterns, axial profiles, shuttling and splitting.

A pattern assigns each driven segment pair (A through E along z) one of
three relay-selectable levels; the endcaps and undriven outer segments
hold a fixed bias.  Transport works by switching between patterns: the
axial wells of the new pattern sit elsewhere and the particle crawls to
the nearest one at Stokes terminal speed, so the experiments integrate
tens of seconds of physical time.  The runners therefore default to the
period-averaged drive treatment; the full 60 Hz integration gives the
same axial motion at vastly smaller steps.

Profiles are sampled at the AC null height on the trap axis.  Values are
stored per unit charge magnitude, signed so that local minima are the
trapping wells of the given charge sign; for the negative charges used
throughout that is -phi plus constant gravity and ponderomotive offsets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import analysis as _an
from .constants import G_STD
from .dynamics import (
    RectStack,
    SimConfig,
    TimedChange,
    Trajectory,
    VoltageProgram,
    simulate_multi,
)
from .fields import DriveParams, VoltageState, ac_gradient_sq
from .geometry import SEGMENT_NAMES, TrapGeometry
from .particles import Particle

HIGH_V = -495.0
LOW_V = -259.0
OFF_V = -0.01
ENDCAP_V = -244.0
RELAY_DELAY_S = 4.2e-3

_LEVELS = ("high", "low", "off")


@dataclass(frozen=True)
class SegmentPattern:
    """Relay levels for the five driven segment pairs plus endcap bias."""

    levels: tuple               # (("A", "high"), ...) in A..E order
    endcap_v: float = ENDCAP_V
    high_v: float = HIGH_V
    low_v: float = LOW_V
    off_v: float = OFF_V

    def __post_init__(self):
        names = tuple(n for n, _ in self.levels)
        if names != SEGMENT_NAMES:
            raise ValueError(f"pattern must assign exactly {SEGMENT_NAMES}, got {names}")
        for _, lev in self.levels:
            if lev not in _LEVELS:
                raise ValueError(f"unknown level {lev!r}")
        if not (abs(self.high_v) > abs(self.low_v) > abs(self.off_v)):
            raise ValueError("levels must satisfy |high| > |low| > |off|")

    @classmethod
    def from_mapping(cls, mapping, **kw) -> "SegmentPattern":
        return cls(levels=tuple((n, mapping[n]) for n in SEGMENT_NAMES), **kw)

    def level_of(self, name: str) -> str:
        return dict(self.levels)[name]

    def segment_voltages(self) -> dict:
        v = {"high": self.high_v, "low": self.low_v, "off": self.off_v}
        return {name: v[lev] for name, lev in self.levels}

    def voltage_state(self, drive: DriveParams, v_central: float = 0.0) -> VoltageState:
        return VoltageState(v_central=v_central, drive=drive,
                            segments=self.segment_voltages(),
                            v_endcap=self.endcap_v)

    def mirrored(self) -> "SegmentPattern":
        """Swap A with E and B with D (reflection through the trap center)."""
        m = dict(self.levels)
        swapped = {"A": m["E"], "B": m["D"], "C": m["C"], "D": m["B"], "E": m["A"]}
        return SegmentPattern.from_mapping(swapped, endcap_v=self.endcap_v,
                                           high_v=self.high_v, low_v=self.low_v,
                                           off_v=self.off_v)

    def to_dict(self) -> dict:
        return {"levels": dict(self.levels), "endcap_v": self.endcap_v,
                "high_v": self.high_v, "low_v": self.low_v, "off_v": self.off_v}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "SegmentPattern":
        d = json.loads(text)
        return cls.from_mapping(d["levels"],
                                endcap_v=d.get("endcap_v", ENDCAP_V),
                                high_v=d.get("high_v", HIGH_V),
                                low_v=d.get("low_v", LOW_V),
                                off_v=d.get("off_v", OFF_V))


def pattern_center_c() -> SegmentPattern:
    """Initial well centered on segment C (trap center)."""
    return SegmentPattern.from_mapping(
        {"A": "high", "E": "high", "B": "low", "D": "low", "C": "off"})


def pattern_center_d() -> SegmentPattern:
    """Final shuttle well centered near segment D."""
    return SegmentPattern.from_mapping(
        {"A": "high", "B": "high", "C": "low", "E": "low", "D": "off"})


def pattern_split() -> SegmentPattern:
    """Double-well pattern: center barrier high, outer walls low."""
    return SegmentPattern.from_mapping(
        {"C": "high", "A": "low", "E": "low", "B": "off", "D": "off"})


def pattern_all_off() -> SegmentPattern:
    """Endcap-only confinement; stage 1 of the splitting sequence."""
    return SegmentPattern.from_mapping({n: "off" for n in SEGMENT_NAMES})


@dataclass
class VoltageSchedule:
    """Ordered pattern switches; effects land relay_delay after each time."""

    entries: list               # [(time_s, SegmentPattern), ...]
    relay_delay: float = RELAY_DELAY_S

    def __post_init__(self):
        if not self.entries:
            raise ValueError("schedule needs at least one entry")
        times = [t for t, _ in self.entries]
        if times[0] != 0.0:
            raise ValueError("first schedule entry must be at t = 0")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        if self.relay_delay < 0:
            raise ValueError("relay_delay must be >= 0")

    def compile(self, drive: DriveParams | None = None,
                v_central: float = 0.0) -> VoltageProgram:
        """Flatten to per-target timed changes for the integrator.

        The t = 0 pattern becomes the base state (the particle is assumed
        already settled in it); later entries emit one change per target
        that actually differs, each at entry time + relay_delay.
        """
        drive = drive if drive is not None else DriveParams(0.0)
        base = self.entries[0][1].voltage_state(drive, v_central=v_central)
        changes = []
        prev = self.entries[0][1]
        for t, pat in self.entries[1:]:
            pv, nv = prev.segment_voltages(), pat.segment_voltages()
            for name in SEGMENT_NAMES:
                if nv[name] != pv[name]:
                    changes.append(TimedChange(t + self.relay_delay, name, nv[name]))
            if pat.endcap_v != prev.endcap_v:
                changes.append(TimedChange(t + self.relay_delay, "endcap",
                                           pat.endcap_v))
            prev = pat
        return VoltageProgram(base, changes, drive=drive)

    def to_json(self, **kw) -> str:
        return json.dumps({"relay_delay_s": self.relay_delay,
                           "entries": [{"t_s": t, "pattern": p.to_dict()}
                                       for t, p in self.entries]}, **kw)

    @classmethod
    def from_json(cls, text: str) -> "VoltageSchedule":
        d = json.loads(text)
        entries = [(e["t_s"],
                    SegmentPattern.from_json(json.dumps(e["pattern"])))
                   for e in d["entries"]]
        return cls(entries=entries, relay_delay=d.get("relay_delay_s", 4.2e-3))


# ---------------------------------------------------------------------------
# Axial potential profile
# ---------------------------------------------------------------------------

@dataclass
class AxialProfile:
    z: np.ndarray               # m
    values: np.ndarray          # V per unit |charge|; minima are wells
    minima_z: np.ndarray        # m
    gamma: float
    y_sample: float

    def minima_mm(self) -> np.ndarray:
        return self.minima_z * 1e3

    def to_csv(self, path_or_buf) -> None:
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            f = open(path_or_buf, "w", newline="")
            close = True
        else:
            f = path_or_buf
        try:
            w = csv.writer(f)
            w.writerow(("z_mm", "U_per_q"))
            for zz, vv in zip(self.z, self.values):
                w.writerow([f"{zz * 1e3:.9g}", f"{vv:.9g}"])
        finally:
            if close:
                f.close()


def axial_profile(pattern: SegmentPattern, geom: TrapGeometry,
                  drive: DriveParams, gamma: float,
                  z_range: tuple = (-0.045, 0.045),
                  step: float = 1e-4) -> AxialProfile:
    """Energy-per-|charge| along z at (a/2, y_null).

    The rail fields and gravity are z-invariant and enter only as constant
    offsets; the z structure comes entirely from the segment/endcap
    rectangle stack.  Minima are strict sign changes of the discrete
    derivative.
    """
    if gamma == 0:
        raise ValueError("gamma must be nonzero")
    if step > 1e-4 + 1e-12:
        raise ValueError("profile step must be <= 0.1 mm")
    y_null = _an.find_ac_null(geom).y_null
    x0 = geom.centerline_x
    z = np.arange(z_range[0], z_range[1] + step / 2, step)
    stack = RectStack(geom, pattern.voltage_state(drive))
    phi = stack.potential(np.full_like(z, x0), np.full_like(z, y_null), z)
    gsq = float(ac_gradient_sq(geom, (x0, y_null)))
    pond = abs(gamma) * drive.v_ac_amplitude ** 2 / (4.0 * drive.omega ** 2) * gsq
    values = np.sign(gamma) * phi + G_STD * y_null / abs(gamma) + pond
    d = np.diff(values)
    idx = np.nonzero((d[:-1] < 0) & (d[1:] > 0))[0] + 1
    return AxialProfile(z=z, values=values, minima_z=z[idx], gamma=gamma,
                        y_sample=y_null)


def profile_minima_separation(profile_a: AxialProfile,
                              profile_b: AxialProfile) -> float:
    """Distance between the single minima of two one-well profiles."""
    if profile_a.minima_z.size != 1 or profile_b.minima_z.size != 1:
        raise ValueError("both profiles must have exactly one minimum")
    return float(profile_b.minima_z[0] - profile_a.minima_z[0])


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _default_config(duration: float, seed: int = 0) -> SimConfig:
    # terminal-velocity transport: tens of seconds of physical time, so
    # integrate the period-averaged equations at millisecond steps
    return SimConfig(dt=2e-3, ac_mode="pseudo", duration=duration,
                     sample_stride=50, seed=seed)


def _place_on_axis(particle: Particle, geom: TrapGeometry, drive: DriveParams,
                   z: float) -> Particle:
    y_eq = float(_an.equilibrium_heights(geom, drive, particle.gamma, [0.0])[0])
    if not np.isfinite(y_eq):
        raise ValueError("particle is not trappable at zero central voltage")
    p = particle.copy()
    p.r = np.array([geom.centerline_x, y_eq, z])
    p.v = np.zeros(3)
    return p


def run_shuttle_experiment(particle: Particle, config: SimConfig | None = None,
                           geom: TrapGeometry | None = None,
                           drive: DriveParams | None = None,
                           final_pattern: SegmentPattern | None = None,
                           switch_s: float = 1.0,
                           transfer_s: float = 95.0):
    """Settle in the center-C well, switch patterns, report the net axial
    displacement after the transfer completes.

    Returns (distance, trajectory); ejection during transfer shows up in
    the trajectory event log and leaves the displacement wherever the
    particle froze.
    """
    geom = geom if geom is not None else TrapGeometry()
    drive = drive if drive is not None else DriveParams.from_rms(963.0)
    final_pattern = final_pattern if final_pattern is not None else pattern_center_d()
    start = pattern_center_c()
    prof_c = axial_profile(start, geom, drive, particle.gamma)
    z0 = float(prof_c.minima_z[prof_c.minima_z.size // 2])
    p = _place_on_axis(particle, geom, drive, z0)
    schedule = VoltageSchedule([(0.0, start), (switch_s, final_pattern)])
    if config is None:
        config = _default_config(switch_s + transfer_s)
    traj = simulate_multi([p], schedule, config, geom=geom, drive=drive)
    distance = float(traj.r[-1, 0, 2] - z0)
    return distance, traj


def run_split_experiment(particle_1: Particle, particle_2: Particle,
                         config: SimConfig | None = None,
                         geom: TrapGeometry | None = None,
                         drive: DriveParams | None = None,
                         dwell_s: float = 0.5,
                         switch_s: float = 1.0,
                         transfer_s: float = 110.0,
                         start_offset: float = 1.2e-3):
    """Two particles in the center well, then all-off, then the double
    well.  Returns (d1, d2, trajectory) with signed displacements.

    If both particles end in the same well the event log gains a
    split-failure entry.
    """
    geom = geom if geom is not None else TrapGeometry()
    drive = drive if drive is not None else DriveParams.from_rms(963.0)
    p1 = _place_on_axis(particle_1, geom, drive, -abs(start_offset))
    p2 = _place_on_axis(particle_2, geom, drive, +abs(start_offset))
    schedule = VoltageSchedule([(0.0, pattern_center_c()),
                                (switch_s, pattern_all_off()),
                                (switch_s + dwell_s, pattern_split())])
    if config is None:
        config = _default_config(switch_s + dwell_s + transfer_s)
        config.enable_coulomb = True
    traj = simulate_multi([p1, p2], schedule, config, geom=geom, drive=drive)
    z_end = traj.r[-1, :, 2]
    d1 = float(z_end[0] - p1.r[2])
    d2 = float(z_end[1] - p2.r[2])
    prof = axial_profile(pattern_split(), geom, drive, particle_1.gamma)
    if prof.minima_z.size >= 2:
        nearest = [int(np.argmin(np.abs(prof.minima_z - zz))) for zz in z_end]
        if nearest[0] == nearest[1]:
            from .dynamics import Event
            traj.events.append(Event(t=float(traj.t[-1]), kind="split-failure",
                                     data={"wells": nearest}))
    return d1, d2, traj
