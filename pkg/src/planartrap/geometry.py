"""Electrode layout for the five-rail planar trap.

Coordinates: the origin sits at the bottom-left corner of the central
electrode cross-section, x across the rails, y up out of the plane, z along
the rails.  The central DC electrode occupies [0, a] in x, the AC rails sit
beyond the inner gaps, and the segmented DC electrodes (two mirror rows of
seven, middle five driven as A-E) sit beyond the outer gaps.

Gap widths are model inputs.  The shipped defaults are calibrated: the
inner gap against the measured balance point of the reference particle and
the outer gap against the 4.75 mm AC null height, see ``default_geometry``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np

# Calibrated default gaps (meters).  These are frozen outputs of
# calibrate_gap_central_ac / calibrate_gap_ac_segment run on the default
# electrode widths; the analysis test suite re-derives both.
GAP_CENTRAL_AC_DEFAULT = 3.0018228154999064e-4
GAP_AC_SEGMENT_DEFAULT = 1.5215617576680088e-2

SEGMENT_NAMES = ("A", "B", "C", "D", "E")


@dataclass(frozen=True)
class BoundarySegment:
    """A straight piece of the in-plane boundary condition.

    v1 == v2 describes a conductor held at a fixed voltage, v1 != v2 a
    linear interpolation ramp across a dielectric gap.
    """

    x1: float
    x2: float
    v1: float
    v2: float

    def __post_init__(self):
        if not self.x1 < self.x2:
            raise ValueError(f"boundary segment needs x1 < x2, got [{self.x1}, {self.x2}]")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned electrode rectangle in the z=const plane of the board."""

    x1: float
    x2: float
    z1: float
    z2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.z1 < self.z2):
            raise ValueError("degenerate rectangle")


@dataclass(frozen=True)
class TrapGeometry:
    a: float = 3.2e-3                 # central DC electrode width
    b: float = 4.2e-3                 # right AC rail width
    c: float = 4.2e-3                 # left AC rail width
    gap_central_ac: float = GAP_CENTRAL_AC_DEFAULT
    gap_ac_segment: float = GAP_AC_SEGMENT_DEFAULT
    gap_segment_segment: float = 0.5e-3
    seg_width_z: float = 18.9e-3      # segmented electrode extent along z
    seg_depth_x: float = 15.5e-3      # segmented electrode extent along x
    rail_length_z: float = 139.6e-3
    endcap_rects: tuple = ()          # filled in __post_init__ when empty

    def __post_init__(self):
        for name in ("a", "b", "c", "seg_width_z", "seg_depth_x", "rail_length_z"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("gap_central_ac", "gap_ac_segment", "gap_segment_segment"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.endcap_rects:
            object.__setattr__(self, "endcap_rects", self._default_endcaps())

    # -- derived layout -------------------------------------------------

    @property
    def centerline_x(self) -> float:
        return 0.5 * self.a

    @property
    def total_width(self) -> float:
        """Span from the left rail's outer edge to the right rail's."""
        return self.rail_right[1] - self.rail_left[0]

    @property
    def rail_right(self) -> tuple[float, float]:
        x1 = self.a + self.gap_central_ac
        return (x1, x1 + self.b)

    @property
    def rail_left(self) -> tuple[float, float]:
        x2 = -self.gap_central_ac
        return (x2 - self.c, x2)

    @property
    def segment_row_right_x(self) -> tuple[float, float]:
        x1 = self.rail_right[1] + self.gap_ac_segment
        return (x1, x1 + self.seg_depth_x)

    @property
    def segment_row_left_x(self) -> tuple[float, float]:
        x2 = self.rail_left[0] - self.gap_ac_segment
        return (x2 - self.seg_depth_x, x2)

    @property
    def segment_pitch_z(self) -> float:
        return self.seg_width_z + self.gap_segment_segment

    def segment_z_extents(self) -> dict[str, tuple[float, float]]:
        """z extents of the five driven segments A..E, centered on z=0.

        Seven segments per row exist physically; the middle five are the
        driven ones, so A..E have centers at -2p .. +2p.
        """
        p = self.segment_pitch_z
        out = {}
        for i, name in enumerate(SEGMENT_NAMES):
            zc = (i - 2) * p
            out[name] = (zc - 0.5 * self.seg_width_z, zc + 0.5 * self.seg_width_z)
        return out

    def segment_rects(self) -> dict[str, tuple[Rect, Rect]]:
        """Driven segment rectangles, (left-row, right-row) per name."""
        lx = self.segment_row_left_x
        rx = self.segment_row_right_x
        out = {}
        for name, (z1, z2) in self.segment_z_extents().items():
            out[name] = (Rect(lx[0], lx[1], z1, z2), Rect(rx[0], rx[1], z1, z2))
        return out

    def undriven_segment_rects(self) -> list[Rect]:
        """The two outermost segments per row (not under A-E control)."""
        p = self.segment_pitch_z
        lx = self.segment_row_left_x
        rx = self.segment_row_right_x
        out = []
        for zc in (-3 * p, 3 * p):
            z1, z2 = zc - 0.5 * self.seg_width_z, zc + 0.5 * self.seg_width_z
            out.append(Rect(lx[0], lx[1], z1, z2))
            out.append(Rect(rx[0], rx[1], z1, z2))
        return out

    def _default_endcaps(self) -> tuple:
        """Four corner rectangles just beyond the rail ends."""
        lx = self.segment_row_left_x
        rx = self.segment_row_right_x
        z_in = 0.5 * self.rail_length_z
        z_out = z_in + 20e-3
        return (
            Rect(lx[0], lx[1], -z_out, -z_in),
            Rect(rx[0], rx[1], -z_out, -z_in),
            Rect(lx[0], lx[1], z_in, z_out),
            Rect(rx[0], rx[1], z_in, z_out),
        )

    # -- boundary segment lists for the 2D strip model ------------------

    def dc_boundary(self, v_central: float) -> list[BoundarySegment]:
        """Central electrode at v_central, everything else grounded."""
        g = self.gap_central_ac
        segs = [BoundarySegment(0.0, self.a, v_central, v_central)]
        if g > 0:
            segs.insert(0, BoundarySegment(-g, 0.0, 0.0, v_central))
            segs.append(BoundarySegment(self.a, self.a + g, v_central, 0.0))
        return segs

    def ac_boundary(self) -> list[BoundarySegment]:
        """Both AC rails at unit amplitude, everything else grounded."""
        g1 = self.gap_central_ac
        g2 = self.gap_ac_segment
        lx1, lx2 = self.rail_left
        rx1, rx2 = self.rail_right
        segs = []
        if g2 > 0:
            segs.append(BoundarySegment(lx1 - g2, lx1, 0.0, 1.0))
        segs.append(BoundarySegment(lx1, lx2, 1.0, 1.0))
        if g1 > 0:
            segs.append(BoundarySegment(lx2, 0.0, 1.0, 0.0))
            segs.append(BoundarySegment(self.a, rx1, 0.0, 1.0))
        segs.append(BoundarySegment(rx1, rx2, 1.0, 1.0))
        if g2 > 0:
            segs.append(BoundarySegment(rx2, rx2 + g2, 1.0, 0.0))
        return segs

    # -- variations -----------------------------------------------------

    def replace(self, **kw) -> "TrapGeometry":
        """Copy with fields changed; endcaps regenerate unless given."""
        kw.setdefault("endcap_rects", ())
        return replace(self, **kw)

    def with_scaled_gaps(self, scale: float) -> "TrapGeometry":
        """Scale the dielectric gap widths holding gap centerlines fixed.

        Models etch-clearance variation on the manufactured board: each gap
        widens or narrows symmetrically about its drawn centerline, so the
        copper electrodes give up (or gain) the difference on both sides.
        Gap centerlines and the segment pitch stay put, which keeps the
        overall layout anchored while the copper widths breathe.
        """
        if scale <= 0:
            raise ValueError("scale must be positive")
        d1 = (scale - 1.0) * self.gap_central_ac
        d2 = (scale - 1.0) * self.gap_ac_segment
        d3 = (scale - 1.0) * self.gap_segment_segment
        a = self.a - d1
        b = self.b - 0.5 * d1 - 0.5 * d2
        c = self.c - 0.5 * d1 - 0.5 * d2
        seg_w = self.seg_width_z - d3
        if min(a, b, c, seg_w) <= 0:
            raise ValueError("gap scaling consumes an electrode entirely")
        return replace(
            self,
            a=a, b=b, c=c,
            gap_central_ac=scale * self.gap_central_ac,
            gap_ac_segment=scale * self.gap_ac_segment,
            gap_segment_segment=scale * self.gap_segment_segment,
            seg_width_z=seg_w,
            endcap_rects=(),
        )

    def scaled(self, k: float) -> "TrapGeometry":
        """Uniform scaling of every length by k (dimensional-analysis probe)."""
        if k <= 0:
            raise ValueError("k must be positive")
        return TrapGeometry(
            a=k * self.a, b=k * self.b, c=k * self.c,
            gap_central_ac=k * self.gap_central_ac,
            gap_ac_segment=k * self.gap_ac_segment,
            gap_segment_segment=k * self.gap_segment_segment,
            seg_width_z=k * self.seg_width_z,
            seg_depth_x=k * self.seg_depth_x,
            rail_length_z=k * self.rail_length_z,
            endcap_rects=tuple(
                Rect(k * r.x1, k * r.x2, k * r.z1, k * r.z2) for r in self.endcap_rects
            ),
        )

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["endcap_rects"] = [
            {"x1": r.x1, "x2": r.x2, "z1": r.z1, "z2": r.z2} for r in self.endcap_rects
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrapGeometry":
        d = dict(d)
        rects = d.pop("endcap_rects", None)
        geom = cls(**d) if rects is None else cls(
            **d, endcap_rects=tuple(Rect(**r) for r in rects)
        )
        return geom

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrapGeometry":
        return cls.from_dict(json.loads(text))


def default_geometry() -> TrapGeometry:
    """The calibrated default layout (a=3.2 mm, b=c=4.2 mm)."""
    return TrapGeometry()
