"""JSON run configuration shared by the command-line tools.

One file describes a bench setup: trap geometry, drive level, DC
voltages, the particle under study, integrator overrides, the camera,
and streaming-service settings.  Every section and key is optional;
omitted values fall back to the same defaults the library uses.  Unknown
keys are rejected rather than ignored, because a silently misspelled
"varaic_rms_v" costs an afternoon in the lab and should cost a traceback
here.
"""

from dataclasses import dataclass, field, replace
import json

from .constants import TRANSFORMER_RATIO
from .dynamics import SimConfig
from .fields import DriveParams
from .geometry import TrapGeometry
from .particles import Particle
from .service import (CENTRAL_V_RANGE, ENDCAP_V_RANGE, GAMMA_RANGE_DEFAULT,
                      SPEED_RANGE, VARIAC_RMS_RANGE)
from .shuttle import ENDCAP_V
from .vision import CameraModel


class ConfigError(ValueError):
    """Configuration file failed validation; message names the key."""


# JSON key -> constructor argument.  Geometry lengths are in mm because
# that is how the bench drawings and calipers read.
_GEOMETRY_KEYS = {
    "a_mm": "a",
    "b_mm": "b",
    "c_mm": "c",
    "gap_central_ac_mm": "gap_central_ac",
    "gap_ac_segment_mm": "gap_ac_segment",
    "gap_segment_segment_mm": "gap_segment_segment",
    "seg_width_z_mm": "seg_width_z",
    "seg_depth_x_mm": "seg_depth_x",
    "rail_length_z_mm": "rail_length_z",
}

_SIM_KEYS = {
    "dt_s": "dt",
    "ac_mode": "ac_mode",
    "drag_coefficient": "drag_coefficient",
    "enable_coulomb": "enable_coulomb",
    "sample_stride": "sample_stride",
    "seed": "seed",
    "y_cap_m": "y_cap",
    "duration_s": "duration",
}

_CAMERA_KEYS = ("mm_per_px", "cx_px", "cy_px", "y_sign", "fps",
                "spot_diameter_px")

_SECTIONS = ("geometry", "drive", "voltages", "particle", "sim",
             "camera", "service")


def _require_number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _require_int(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return int(value)


def _require_mapping(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected an object, got {value!r}")
    return value


def _reject_unknown(mapping, allowed, where):
    extra = set(mapping) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key {sorted(extra)[0]!r}")


def _check_range(value, lo, hi, where):
    if not (lo <= value <= hi):
        raise ConfigError(f"{where}: {value:g} outside [{lo:g}, {hi:g}]")
    return value


@dataclass
class LabConfig:
    """Resolved configuration ready to hand to the library."""

    geom: TrapGeometry = field(default_factory=TrapGeometry)
    variac_rms: float = 20.0
    v_central: float = -40.0
    v_endcap: float = ENDCAP_V
    gamma: float = -2.1e-3
    sim_overrides: dict = field(default_factory=dict)
    camera: CameraModel = field(default_factory=CameraModel.compact)
    rate_hz: float = 60.0
    speed: float = 1.0
    gamma_range: tuple = GAMMA_RANGE_DEFAULT

    @property
    def drive(self) -> DriveParams:
        return DriveParams.from_rms(self.variac_rms * TRANSFORMER_RATIO)

    def sim_config(self, base: SimConfig | None = None) -> SimConfig | None:
        """Apply the file's integrator overrides on top of a command's
        native defaults.  No overrides and no base gives None so callers
        keep their own internal defaults."""
        if not self.sim_overrides:
            return base
        base = base if base is not None else SimConfig()
        try:
            return replace(base, **self.sim_overrides)
        except ValueError as err:
            raise ConfigError(f"sim: {err}") from err

    def particle(self, gamma: float | None = None, **kw) -> Particle:
        return Particle.from_gamma(self.gamma if gamma is None else gamma,
                                   **kw)


def parse_config(doc: dict) -> LabConfig:
    """Validate a parsed JSON document and build a LabConfig."""
    _require_mapping(doc, "config")
    _reject_unknown(doc, _SECTIONS, "config")
    cfg = LabConfig()

    if "geometry" in doc:
        sec = _require_mapping(doc["geometry"], "geometry")
        _reject_unknown(sec, _GEOMETRY_KEYS, "geometry")
        kw = {arg: _require_number(sec[key], f"geometry.{key}") * 1e-3
              for key, arg in _GEOMETRY_KEYS.items() if key in sec}
        try:
            cfg.geom = TrapGeometry(**kw)
        except ValueError as err:
            raise ConfigError(f"geometry: {err}") from err

    if "drive" in doc:
        sec = _require_mapping(doc["drive"], "drive")
        _reject_unknown(sec, ("variac_rms_v",), "drive")
        if "variac_rms_v" in sec:
            cfg.variac_rms = _check_range(
                _require_number(sec["variac_rms_v"], "drive.variac_rms_v"),
                *VARIAC_RMS_RANGE, "drive.variac_rms_v")

    if "voltages" in doc:
        sec = _require_mapping(doc["voltages"], "voltages")
        _reject_unknown(sec, ("central_v", "endcap_v"), "voltages")
        if "central_v" in sec:
            cfg.v_central = _check_range(
                _require_number(sec["central_v"], "voltages.central_v"),
                *CENTRAL_V_RANGE, "voltages.central_v")
        if "endcap_v" in sec:
            cfg.v_endcap = _check_range(
                _require_number(sec["endcap_v"], "voltages.endcap_v"),
                *ENDCAP_V_RANGE, "voltages.endcap_v")

    if "particle" in doc:
        sec = _require_mapping(doc["particle"], "particle")
        _reject_unknown(sec, ("gamma",), "particle")
        if "gamma" in sec:
            g = _require_number(sec["gamma"], "particle.gamma")
            if g >= 0:
                raise ConfigError("particle.gamma: must be negative "
                                  "(negatively charged particles)")
            cfg.gamma = g

    if "sim" in doc:
        sec = _require_mapping(doc["sim"], "sim")
        _reject_unknown(sec, _SIM_KEYS, "sim")
        ov = {}
        for key, arg in _SIM_KEYS.items():
            if key not in sec:
                continue
            v = sec[key]
            where = f"sim.{key}"
            if arg in ("sample_stride", "seed"):
                ov[arg] = _require_int(v, where)
            elif arg == "enable_coulomb":
                if not isinstance(v, bool):
                    raise ConfigError(f"{where}: expected true/false")
                ov[arg] = v
            elif arg == "ac_mode":
                if v not in ("cos", "pseudo"):
                    raise ConfigError(f"{where}: must be 'cos' or 'pseudo'")
                ov[arg] = v
            elif arg == "duration":
                ov[arg] = None if v is None else _require_number(v, where)
            else:
                ov[arg] = _require_number(v, where)
        cfg.sim_overrides = ov
        cfg.sim_config(SimConfig())     # surface bad combinations now

    if "camera" in doc:
        sec = _require_mapping(doc["camera"], "camera")
        _reject_unknown(sec, _CAMERA_KEYS, "camera")
        kw = {k: _require_number(sec[k], f"camera.{k}")
              for k in _CAMERA_KEYS if k in sec}
        try:
            cfg.camera = replace(cfg.camera, **kw)
        except ValueError as err:
            raise ConfigError(f"camera: {err}") from err

    if "service" in doc:
        sec = _require_mapping(doc["service"], "service")
        _reject_unknown(sec, ("rate_hz", "speed", "gamma_range"), "service")
        if "rate_hz" in sec:
            r = _require_number(sec["rate_hz"], "service.rate_hz")
            if r <= 0:
                raise ConfigError("service.rate_hz: must be positive")
            cfg.rate_hz = r
        if "speed" in sec:
            cfg.speed = _check_range(
                _require_number(sec["speed"], "service.speed"),
                *SPEED_RANGE, "service.speed")
        if "gamma_range" in sec:
            gr = sec["gamma_range"]
            if (not isinstance(gr, (list, tuple)) or len(gr) != 2):
                raise ConfigError("service.gamma_range: expected [lo, hi]")
            lo = _require_number(gr[0], "service.gamma_range[0]")
            hi = _require_number(gr[1], "service.gamma_range[1]")
            if not (lo < hi < 0):
                raise ConfigError("service.gamma_range: need lo < hi < 0")
            cfg.gamma_range = (lo, hi)

    return cfg


def load_config(path: str | None) -> LabConfig:
    """Read and validate a config file; None gives all defaults."""
    if path is None:
        return LabConfig()
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return parse_config(doc)
