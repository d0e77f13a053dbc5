"""Synthetic camera frames and the streak-based measurement pipeline.

The camera views the y-z plane from the side: columns map to the axial
coordinate z and rows to height y, with row index growing downward.  A
particle is rendered as a Gaussian spot dragged along its sampled path
over the exposure; at one 60 Hz drive period per exposure the vertical
micromotion paints the full streak.  Rendered intensity is dwell-time
density with gain keyed to the path's vertical extremes, so streak-end
photometry (and with it the threshold skirt that pads the bounding box)
is independent of streak length; the interior stays above threshold
because the dwell contrast of a drive-period path is bounded.

Measurement mirrors the hardware pipeline: threshold, 4-connected
components, size filter, intensity-weighted centroid, and streak height
minus the stationary spot diameter for the micromotion amplitude.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .analysis import HeightVoltageSeries
from .dynamics import steady_segment, voltage_sweep_experiment
from .fields import DriveParams
from .geometry import TrapGeometry
from .particles import Particle

FRAME_WIDTH = 1616
FRAME_HEIGHT = 1240
SPOT_SIGMA_PX = 1.5
# nominal spot diameter for the amplitude estimator, calibrated against
# rendered streaks of known length (bbox height minus true length is flat
# at 3.7 px across the resolvable range); a stationary particle's visible
# spot spans 4-5 px, so sub-diameter readings bottom out near one pixel
SPOT_DIAMETER_PX = 3.7
THRESHOLD_DEFAULT = 60
AREA_RANGE_DEFAULT = (3, 100_000)
NOISE_MEAN = 8.0
NOISE_STD = 2.0
_STREAK_LEVEL = 180.0
_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole-free scale model: square pixels, fixed principal point.

    y_sign = -1 encodes the usual image convention that height increases
    toward smaller row indices.
    """

    mm_per_px: float = 0.06
    cx_px: float = FRAME_WIDTH / 2.0
    cy_px: float = 1100.0
    y_sign: float = -1.0
    fps: float = 60.0
    spot_diameter_px: float = SPOT_DIAMETER_PX

    def __post_init__(self):
        if self.mm_per_px <= 0:
            raise ValueError("mm_per_px must be positive")
        if self.y_sign not in (-1.0, 1.0):
            raise ValueError("y_sign must be -1 or +1")
        if self.fps <= 0:
            raise ValueError("frame rate must be positive")

    def px_from_mm(self, z_mm, y_mm):
        u = self.cx_px + np.asarray(z_mm, dtype=float) / self.mm_per_px
        v = self.cy_px + self.y_sign * np.asarray(y_mm, dtype=float) / self.mm_per_px
        return u, v

    def mm_from_px(self, u, v):
        z_mm = (np.asarray(u, dtype=float) - self.cx_px) * self.mm_per_px
        y_mm = self.y_sign * (np.asarray(v, dtype=float) - self.cy_px) * self.mm_per_px
        return z_mm, y_mm

    @classmethod
    def compact(cls, mm_per_px: float = 0.06) -> "CameraModel":
        """Small sensor cropped around the trap axis; used by the batch
        imaging pipeline where the full sensor is wasted pixels."""
        return cls(mm_per_px=mm_per_px, cx_px=100.0, cy_px=350.0)


def compact_frame_shape() -> tuple:
    return (200, 400)           # (width, height) matching CameraModel.compact


@dataclass
class Frame:
    """8-bit grayscale image with capture metadata."""

    pixels: np.ndarray
    exposure_s: float
    timestamp: float = 0.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("pixels must be a 2D array")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px
        if self.exposure_s <= 0:
            raise ValueError("exposure must be positive")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def render_frame(times, positions, camera: CameraModel,
                 exposure_s: float | None = None,
                 width: int = FRAME_WIDTH, height: int = FRAME_HEIGHT,
                 seed: int | None = 0, timestamp: float | None = None) -> Frame:
    """Integrate Gaussian spots along sampled paths into one exposure.

    positions is (S, 3) for one particle or (S, N, 3) for several, in
    meters; samples outside [t0, t0 + exposure] are ignored and particles
    wholly outside the field of view simply leave no light (an empty
    frame is a valid render).  seed=None disables the additive background
    noise, which the equivariance and monotonicity tests rely on.
    """
    t = np.asarray(times, dtype=float)
    r = np.asarray(positions, dtype=float)
    if r.ndim == 2:
        r = r[:, None, :]
    if r.ndim != 3 or r.shape[2] != 3 or r.shape[0] != t.size:
        raise ValueError("positions must be (S, 3) or (S, N, 3) matching times")
    if exposure_s is None:
        exposure_s = float(t[-1] - t[0]) if t.size > 1 else 1.0 / camera.fps
    if exposure_s <= 0:
        raise ValueError("exposure must be positive")
    keep = (t >= t[0]) & (t <= t[0] + exposure_s * (1 + 1e-12))
    t = t[keep]
    r = r[keep]
    dwell = np.gradient(t) if t.size > 1 else np.ones(1)

    density = np.zeros((height, width), dtype=float)
    rad = int(np.ceil(3.5 * SPOT_SIGMA_PX))
    offs = np.arange(-rad, rad + 1)
    du, dv = np.meshgrid(offs, offs, indexing="xy")
    for j in range(r.shape[1]):
        u, v = camera.px_from_mm(r[:, j, 2] * 1e3, r[:, j, 1] * 1e3)
        inb = (u > -rad) & (u < width + rad) & (v > -rad) & (v < height + rad)
        if not np.any(inb):
            continue
        uu, vv, w = u[inb], v[inb], dwell[inb]
        ui = np.rint(uu).astype(int)
        vi = np.rint(vv).astype(int)
        cols = ui[:, None, None] + du[None, :, :]
        rows = vi[:, None, None] + dv[None, :, :]
        g = np.exp(-(((cols - uu[:, None, None]) ** 2
                      + (rows - vv[:, None, None]) ** 2)
                     / (2.0 * SPOT_SIGMA_PX ** 2)))
        part = np.zeros_like(density)
        ok = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
        np.add.at(part, (rows[ok], cols[ok]),
                  (w[:, None, None] * g)[ok])
        on_path = (ui >= 0) & (ui < width) & (vi >= 0) & (vi < height)
        if not np.any(on_path):
            continue
        # auto-gain keyed to the brightness at the path's vertical
        # extremes: streak-end photometry (hence the threshold skirt)
        # then does not drift with streak length, which keeps the
        # bbox-minus-diameter amplitude estimator uniform.  The interior
        # dwell contrast of a drive-period path never exceeds the margin
        # between this level and the detection threshold.
        idx = np.where(on_path)[0]
        v_in = vv[on_path]
        lo = idx[np.argmin(v_in)]
        hi = idx[np.argmax(v_in)]
        ref = 0.5 * (part[vi[lo], ui[lo]] + part[vi[hi], ui[hi]])
        if ref > 0:
            density += part * (_STREAK_LEVEL / ref)

    if seed is not None:
        rng = np.random.default_rng(seed)
        density += rng.normal(NOISE_MEAN, NOISE_STD, size=density.shape)
    img = np.clip(np.rint(density), 0, 255).astype(np.uint8)
    return Frame(pixels=img, exposure_s=exposure_s,
                 timestamp=float(t[0]) if timestamp is None else timestamp)


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackedBlob:
    """One connected bright region of a binarized frame."""

    centroid: tuple             # (cx_px, cy_px), intensity-weighted
    bbox: tuple                 # (col_min, row_min, col_max, row_max) inclusive
    area: int                   # pixel count
    amplitude_px: float         # bbox height minus nominal spot diameter

    def __post_init__(self):
        cx, cy = self.centroid
        x0, y0, x1, y1 = self.bbox
        if not (x0 - 0.5 <= cx <= x1 + 0.5 and y0 - 0.5 <= cy <= y1 + 0.5):
            raise ValueError("centroid must lie inside the bounding box")

    @property
    def bbox_height(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1

    @property
    def bbox_width(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    def to_dict(self) -> dict:
        return {"cx_px": self.centroid[0], "cy_px": self.centroid[1],
                "bbox": list(self.bbox), "area": self.area,
                "amplitude_px": self.amplitude_px}


def detect_blobs(frame: Frame, threshold: int = THRESHOLD_DEFAULT,
                 area_range: tuple = AREA_RANGE_DEFAULT,
                 spot_diameter_px: float = SPOT_DIAMETER_PX) -> list:
    """Threshold, 4-connected components, size filter, weighted centroid.

    Centroids weight the original (not binarized) intensities, matching
    the hardware pipeline's subpixel position estimate.
    """
    if not (0 <= threshold <= 255):
        raise ValueError("threshold must be in [0, 255]")
    lo, hi = area_range
    binary = frame.pixels > threshold
    labels, n = ndimage.label(binary, structure=_FOUR_CONN)
    blobs = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        lab = labels[sl]
        k = lab[lab > 0].flat[0] if np.any(lab > 0) else 0
        mask = lab == k
        area = int(np.count_nonzero(mask))
        if not (lo <= area <= hi):
            continue
        vals = frame.pixels[sl].astype(float) * mask
        tot = vals.sum()
        rows, cols = np.mgrid[sl[0], sl[1]]
        cy = float((vals * rows).sum() / tot)
        cx = float((vals * cols).sum() / tot)
        bbox = (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1)
        amp = max(float(bbox[3] - bbox[1] + 1) - spot_diameter_px, 0.0)
        blobs.append(TrackedBlob(centroid=(cx, cy), bbox=bbox, area=area,
                                 amplitude_px=amp))
    blobs.sort(key=lambda b: -b.area)
    return blobs


def measure_micromotion(blob: TrackedBlob, camera: CameraModel) -> float:
    """Peak-to-peak vertical excursion in meters from the streak height."""
    amp_px = max(blob.bbox_height - camera.spot_diameter_px, 0.0)
    return amp_px * camera.mm_per_px * 1e-3


def measure_height(blob: TrackedBlob, camera: CameraModel) -> float:
    """Height above the trap plane in meters from the streak centroid."""
    _, y_mm = camera.mm_from_px(blob.centroid[0], blob.centroid[1])
    return float(y_mm) * 1e-3


def micromotion_stats(frames, camera: CameraModel,
                      threshold: int = THRESHOLD_DEFAULT,
                      area_range: tuple = AREA_RANGE_DEFAULT):
    """Mean and standard deviation of (height, amplitude) over frames.

    Uses the largest blob of each frame; frames with no detection are
    skipped.  Returns (y_mean_m, y_std_m, alpha_mean_m, alpha_std_m, n).
    """
    ys, amps = [], []
    for fr in frames:
        blobs = detect_blobs(fr, threshold, area_range,
                             spot_diameter_px=camera.spot_diameter_px)
        if not blobs:
            continue
        ys.append(measure_height(blobs[0], camera))
        amps.append(measure_micromotion(blobs[0], camera))
    if not ys:
        return (np.nan, np.nan, np.nan, np.nan, 0)
    ys = np.array(ys)
    amps = np.array(amps)
    return (float(ys.mean()), float(ys.std()),
            float(amps.mean()), float(amps.std()), ys.size)


def calibrate(ref_a, ref_b, cx_px: float = FRAME_WIDTH / 2.0,
              fps: float = 60.0,
              spot_diameter_px: float = SPOT_DIAMETER_PX) -> CameraModel:
    """Camera model from two vertical (row_px, height_mm) reference pairs.

    The signed slope fixes both the scale and the row direction; the
    usual camera has height growing toward smaller row indices, which
    comes out as y_sign = -1 automatically.
    """
    v1, y1 = float(ref_a[0]), float(ref_a[1])
    v2, y2 = float(ref_b[0]), float(ref_b[1])
    if v1 == v2 or y1 == y2:
        raise ValueError("reference points must differ in both px and mm")
    slope = (y2 - y1) / (v2 - v1)
    mm_per_px = abs(slope)
    y_sign = 1.0 if slope > 0 else -1.0
    cy_px = v1 - y1 / slope
    return CameraModel(mm_per_px=mm_per_px, cx_px=cx_px, cy_px=cy_px,
                       y_sign=y_sign, fps=fps,
                       spot_diameter_px=spot_diameter_px)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def write_pgm(frame: Frame, path: str) -> None:
    """Binary PGM plus a JSON sidecar holding the capture metadata."""
    with open(path, "wb") as f:
        f.write(f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        f.write(frame.pixels.tobytes())
    with open(_sidecar_path(path), "w") as f:
        json.dump({"exposure_s": frame.exposure_s,
                   "timestamp": frame.timestamp}, f)


def read_pgm(path: str) -> Frame:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    px = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
    exposure, timestamp = 1.0 / 60.0, 0.0
    sc = _sidecar_path(path)
    if os.path.exists(sc):
        with open(sc) as f:
            meta = json.load(f)
        exposure = meta.get("exposure_s", exposure)
        timestamp = meta.get("timestamp", timestamp)
    return Frame(pixels=px.copy(), exposure_s=exposure, timestamp=timestamp)


def _sidecar_path(path: str) -> str:
    base, _ = os.path.splitext(path)
    return base + ".json"


def blobs_to_csv(per_frame_blobs, path_or_buf=None) -> str | None:
    """Flat detection table: frame_idx, cx_px, cy_px, area, amplitude_px."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("frame_idx", "cx_px", "cy_px", "area", "amplitude_px"))
    for i, blobs in enumerate(per_frame_blobs):
        for b in blobs:
            w.writerow([i, f"{b.centroid[0]:.6g}", f"{b.centroid[1]:.6g}",
                        b.area, f"{b.amplitude_px:.6g}"])
    text = buf.getvalue()
    if path_or_buf is None:
        return text
    if isinstance(path_or_buf, (str, bytes)):
        with open(path_or_buf, "w", newline="") as f:
            f.write(text)
    else:
        path_or_buf.write(text)
    return None


def blobs_to_json(per_frame_blobs, **kw) -> str:
    return json.dumps([[b.to_dict() for b in blobs]
                       for blobs in per_frame_blobs], **kw)


def associate_tracks(per_frame_blobs, max_jump_px: float = 20.0) -> list:
    """Greedy nearest-neighbor association of blobs across frames.

    Returns a list of tracks, each a list of (frame_idx, TrackedBlob).
    A blob farther than max_jump_px from every open track starts a new
    one; tracks that miss a frame stay open (detection gaps happen when
    streaks graze the size filter).
    """
    tracks = []
    heads = []                  # last centroid per track
    for i, blobs in enumerate(per_frame_blobs):
        used = set()
        for b in blobs:
            c = np.asarray(b.centroid)
            best, best_d = -1, max_jump_px
            for k, head in enumerate(heads):
                if k in used or head is None:
                    continue
                d = float(np.hypot(*(c - head)))
                if d <= best_d:
                    best, best_d = k, d
            if best >= 0:
                tracks[best].append((i, b))
                heads[best] = c
                used.add(best)
            else:
                tracks.append([(i, b)])
                heads.append(c)
                used.add(len(tracks) - 1)
    return tracks


# ---------------------------------------------------------------------------
# Imaging sweep pipeline
# ---------------------------------------------------------------------------

def imaging_sweep_experiment(particle: Particle, sweep,
                             camera: CameraModel | None = None,
                             geom: TrapGeometry | None = None,
                             drive: DriveParams | None = None,
                             frames_per_step: int = 15,
                             seed: int = 0) -> HeightVoltageSeries:
    """Voltage sweep measured through the camera instead of read off the
    dynamics state: render the steady streak at each held voltage,
    detect, and average height and amplitude over the frame batch.

    Per-step sigmas are the frame-batch standard deviations, which is
    exactly what the hardware data files carry.
    """
    camera = camera if camera is not None else CameraModel.compact()
    geom = geom if geom is not None else TrapGeometry()
    drive = drive if drive is not None else DriveParams.from_rms(963.0)
    w, h = compact_frame_shape() if camera.cx_px <= 400 else \
        (FRAME_WIDTH, FRAME_HEIGHT)
    truth = voltage_sweep_experiment(particle, sweep, geom=geom, drive=drive)
    rows_v, rows_y, rows_sy, rows_a, rows_sa = [], [], [], [], []
    x0 = geom.centerline_x
    for k in range(truth.v_central.size):
        y_mean = truth.y[k]
        alpha = truth.alpha[k]
        frames = []
        for j in range(frames_per_step):
            t, r = steady_segment(y_mean, alpha, drive, x=x0, z=0.0,
                                  duration=1.0 / camera.fps,
                                  dt=1.0 / (camera.fps * 120.0),
                                  phase=2.0 * np.pi * j / frames_per_step)
            frames.append(render_frame(t, r, camera, width=w, height=h,
                                       seed=seed + 1000 * k + j))
        ym, sy, am, sa, n = micromotion_stats(frames, camera)
        if n == 0:
            break
        rows_v.append(truth.v_central[k])
        rows_y.append(ym)
        rows_sy.append(max(sy, 0.25 * camera.mm_per_px * 1e-3))
        rows_a.append(am)
        rows_sa.append(max(sa, 0.25 * camera.mm_per_px * 1e-3))
    return HeightVoltageSeries(
        v_central=np.array(rows_v), y=np.array(rows_y),
        sigma_y=np.array(rows_sy), alpha=np.array(rows_a),
        sigma_alpha=np.array(rows_sa), meta=dict(truth.meta))
