"""Live virtual-lab session: command handling, streaming, logs, sockets.

A Session owns exactly one running simulation.  Command handlers never
touch the integrator state directly: they validate, acknowledge, and
enqueue; pending commands are applied at the start of the next advance,
so the final state depends only on arrival order.  Segment patterns take
effect one relay delay after they are applied; DC and Variac settings
are solid-state and switch at the application tick.

The wire protocol is length-prefixed JSON (4-byte big-endian length)
over TCP, schema-versioned with a "v": "v1" field.  The same port also
accepts RFC 6455 WebSocket upgrades carrying identical JSON payloads in
text frames, which is what the browser panel speaks.  Session logs are
JSON-lines with a per-line CRC32 so corruption and truncation are
detected at the exact offending line.
"""

import base64
import hashlib
import json
import socket
import struct
import threading
import time
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .analysis import find_ac_null
from .constants import DRAG_DEFAULT, TRANSFORMER_RATIO
from .dynamics import (
    AC_PERIOD,
    Event,
    SimConfig,
    SimState,
    TimedChange,
    TrapFieldModel,
    VoltageProgram,
    _collision_pairs,
    _run,
    driven_alpha,
)
from .fields import DriveParams, VoltageState
from .geometry import SEGMENT_NAMES, TrapGeometry
from .particles import Particle
from .shuttle import (
    ENDCAP_V,
    RELAY_DELAY_S,
    SegmentPattern,
    pattern_all_off,
    pattern_center_c,
    pattern_center_d,
    pattern_split,
)

PROTOCOL_VERSION = "v1"
CENTRAL_V_RANGE = (-300.0, 0.0)
ENDCAP_V_RANGE = (-500.0, 0.0)
VARIAC_RMS_RANGE = (0.0, 123.0)
SPEED_RANGE = (0.1, 100.0)
MAX_PARTICLES = 16
GAMMA_RANGE_DEFAULT = (-5e-3, -5e-4)

COMMAND_NAMES = ("set_variac_rms", "set_central_v", "set_endcap_v",
                 "apply_pattern", "load_particles", "reset",
                 "pause", "resume", "set_speed")

_PATTERNS = {"center-c": pattern_center_c, "center-d": pattern_center_d,
             "split": pattern_split, "all-off": pattern_all_off}


class CommandError(ValueError):
    """Rejected command; .type is 'range', 'schema', or 'busy'."""

    def __init__(self, type_: str, message: str):
        super().__init__(message)
        self.type = type_

    def to_dict(self) -> dict:
        return {"type": self.type, "message": str(self)}


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CommandMessage:
    """One operator command; args are validated against the name."""

    name: str
    args: dict = field(default_factory=dict)
    id: int | None = None

    def to_dict(self) -> dict:
        d = {"v": PROTOCOL_VERSION, "kind": "command", "name": self.name,
             "args": dict(self.args)}
        if self.id is not None:
            d["id"] = self.id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CommandMessage":
        if not isinstance(d, dict) or d.get("kind") != "command":
            raise CommandError("schema", "not a command message")
        name = d.get("name")
        if name not in COMMAND_NAMES:
            raise CommandError("schema", f"unknown command {name!r}")
        args = d.get("args", {})
        if not isinstance(args, dict):
            raise CommandError("schema", "args must be an object")
        return cls(name=name, args=args, id=d.get("id"))


@dataclass(frozen=True)
class StateMessage:
    """Snapshot streamed to clients; events are the delta since the
    previous message of the same session.  Ordering is the stream order;
    while the session runs, t is strictly increasing, and a paused
    session repeats bit-identical snapshots."""

    t: float
    voltages: dict
    particles: list             # [(id, x_mm, y_mm, z_mm), ...]
    derived: dict               # {"y_mean_mm": ..., "alpha_mm": ...}
    events: list

    def to_dict(self) -> dict:
        return {"v": PROTOCOL_VERSION, "kind": "state",
                "t": self.t, "voltages": self.voltages,
                "particles": [list(p) for p in self.particles],
                "derived": self.derived, "events": self.events}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "StateMessage":
        return cls(t=d["t"], voltages=d["voltages"],
                   particles=[tuple(p) for p in d["particles"]],
                   derived=d["derived"], events=d["events"])


@dataclass
class SessionState:
    """Bookkeeping owned by one live session."""

    t: float = 0.0
    voltages: VoltageState | None = None
    sim: SimState | None = None
    mode: str = "idle"          # idle | loading | running
    events: list = field(default_factory=list)
    seed: int = 0


def _num(args: dict, key: str) -> float:
    v = args.get(key)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise CommandError("schema", f"{key} must be a number")
    return float(v)


def _check_range(value: float, lo: float, hi: float, what: str) -> float:
    if not (lo <= value <= hi):
        raise CommandError("range",
                           f"{what} {value:g} outside [{lo:g}, {hi:g}]")
    return value


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------

class Session:
    """One simulation plus its command queue and event log.

    The default configuration runs the secular (time-averaged drive)
    equations at dt = 2 ms with Coulomb coupling on, which keeps a
    handful of particles comfortably faster than real time; ac_mode
    'cos' is available for full-waveform sessions at the usual cost.
    Micromotion amplitude is then derived from the driven-response
    formula at each particle's position, and the reported height is
    averaged over a sliding window one drive period long.
    """

    def __init__(self, seed: int = 0, geom: TrapGeometry | None = None,
                 variac_rms: float = 20.0, v_central: float = -40.0,
                 v_endcap: float = ENDCAP_V,
                 pattern: SegmentPattern | None = None,
                 sim: SimConfig | None = None, speed: float = 1.0,
                 gamma_range: tuple = GAMMA_RANGE_DEFAULT):
        self.geom = geom if geom is not None else TrapGeometry()
        self.config = sim if sim is not None else SimConfig(
            dt=2e-3, ac_mode="pseudo", enable_coulomb=True,
            sample_stride=1)
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self.speed = float(speed)
        self.paused = False
        self.recorder = None
        self._event_cursor = 0
        self._next_id = 0
        self._inbox: list[CommandMessage] = []
        self._resetting = False
        self._pending_load = 0
        self._defaults = (float(variac_rms), float(v_central),
                          float(v_endcap))
        self._gamma_range = tuple(gamma_range)

        pattern = pattern if pattern is not None else pattern_center_c()
        self._init_electrics(variac_rms, v_central, v_endcap,
                             pattern.segment_voltages())
        self.state = SessionState(t=0.0, voltages=self.program.state_at(0.0),
                                  sim=self._empty_sim(), mode="idle",
                                  events=[], seed=self.seed)
        # sliding window spanning one drive period of recorded samples
        per = AC_PERIOD / (self.config.dt * self.config.sample_stride)
        self._window: deque = deque(maxlen=max(2, int(round(per)) + 1))
        self.y_null = find_ac_null(self.geom).y_null

    # -- electrics ---------------------------------------------------------

    def _init_electrics(self, variac_rms, v_central, v_endcap, segments):
        self.variac_rms = float(variac_rms)
        drive = DriveParams.from_rms(self.variac_rms * TRANSFORMER_RATIO)
        base = VoltageState(v_central=float(v_central), drive=drive,
                            segments=dict(segments),
                            v_endcap=float(v_endcap))
        self._pending: list[TimedChange] = []
        self._rebuild(base)

    def _rebuild(self, base: VoltageState):
        self.program = VoltageProgram(base, list(self._pending),
                                      drive=base.drive)
        self.model = TrapFieldModel(self.geom, self.program,
                                    include_segments=True,
                                    ac_mode=self.config.ac_mode)

    def _empty_sim(self) -> SimState:
        z = np.zeros((0, 3))
        zi = np.zeros(0, dtype=int)
        return SimState(t=0.0, r=z.copy(), v=z.copy(), q=np.zeros(0),
                        m=np.ones(0), ids=zi, active=np.zeros(0, dtype=bool))

    # -- command intake ----------------------------------------------------

    def handle_command(self, cmd) -> dict:
        """Validate and enqueue; returns the ack or typed-error dict."""
        try:
            if isinstance(cmd, dict):
                cmd = CommandMessage.from_dict(cmd)
            if self._resetting and cmd.name != "reset":
                raise CommandError("busy", "session is resetting")
            self._validate(cmd)
        except CommandError as e:
            ack = {"v": PROTOCOL_VERSION, "kind": "ack", "ok": False,
                   "error": e.to_dict()}
            if getattr(cmd, "id", None) is not None:
                ack["id"] = cmd.id
            return ack
        self._inbox.append(cmd)
        if cmd.name == "reset":
            self._resetting = True
        if cmd.name == "load_particles":
            self._pending_load += int(cmd.args["count"])
        ack = {"v": PROTOCOL_VERSION, "kind": "ack", "ok": True,
               "name": cmd.name}
        if cmd.id is not None:
            ack["id"] = cmd.id
        return ack

    def _validate(self, cmd: CommandMessage):
        name, args = cmd.name, cmd.args
        if name == "set_variac_rms":
            _check_range(_num(args, "value_v"), *VARIAC_RMS_RANGE,
                         "Variac RMS (V)")
        elif name == "set_central_v":
            _check_range(_num(args, "value_v"), *CENTRAL_V_RANGE,
                         "central DC (V)")
        elif name == "set_endcap_v":
            _check_range(_num(args, "value_v"), *ENDCAP_V_RANGE,
                         "endcap DC (V)")
        elif name == "set_speed":
            _check_range(_num(args, "factor"), *SPEED_RANGE,
                         "real-time factor")
        elif name == "apply_pattern":
            self._parse_pattern(args)
        elif name == "load_particles":
            count = args.get("count")
            if not isinstance(count, int) or isinstance(count, bool):
                raise CommandError("schema", "count must be an integer")
            n_now = int(self.state.sim.active.sum()) + self._pending_load
            if not (1 <= count <= MAX_PARTICLES - n_now):
                raise CommandError(
                    "range", f"count must leave the roster within "
                    f"{MAX_PARTICLES} (have {n_now})")
            rng = args.get("gamma_range")
            if rng is not None:
                if (not isinstance(rng, (list, tuple)) or len(rng) != 2
                        or not all(isinstance(g, (int, float)) for g in rng)):
                    raise CommandError("schema",
                                       "gamma_range must be [lo, hi]")
                lo, hi = float(rng[0]), float(rng[1])
                if not (-2e-2 <= lo < hi < 0.0):
                    raise CommandError(
                        "range", "gamma_range must satisfy "
                        "-2e-2 <= lo < hi < 0 C/kg")
        elif name in ("reset", "pause", "resume"):
            if args:
                raise CommandError("schema", f"{name} takes no arguments")
        return cmd

    def _parse_pattern(self, args: dict) -> SegmentPattern:
        name = args.get("name")
        levels = args.get("levels")
        if (name is None) == (levels is None):
            raise CommandError("schema",
                               "give exactly one of 'name' or 'levels'")
        if name is not None:
            if name not in _PATTERNS:
                raise CommandError(
                    "schema", f"unknown pattern {name!r}; expected one of "
                    f"{sorted(_PATTERNS)}")
            return _PATTERNS[name]()
        if not isinstance(levels, dict) or set(levels) != set(SEGMENT_NAMES):
            raise CommandError("schema",
                               "levels must map exactly segments A..E")
        try:
            return SegmentPattern.from_mapping(levels)
        except ValueError as e:
            raise CommandError("range", str(e)) from None

    # -- command application (inside advance) ------------------------------

    def _apply(self, cmd: CommandMessage):
        t = self.state.t
        name, args = cmd.name, cmd.args
        applied = self.program.state_at(t)
        if name == "set_variac_rms":
            self.variac_rms = float(args["value_v"])
            drive = DriveParams.from_rms(self.variac_rms * TRANSFORMER_RATIO)
            base = VoltageState(v_central=applied.v_central, drive=drive,
                                segments=dict(applied.segments or {}),
                                v_endcap=applied.v_endcap)
            self._rebuild(base)
        elif name == "set_central_v":
            base = VoltageState(v_central=float(args["value_v"]),
                                drive=applied.drive,
                                segments=dict(applied.segments or {}),
                                v_endcap=applied.v_endcap)
            self._rebuild(base)
        elif name == "set_endcap_v":
            base = VoltageState(v_central=applied.v_central,
                                drive=applied.drive,
                                segments=dict(applied.segments or {}),
                                v_endcap=float(args["value_v"]))
            self._rebuild(base)
        elif name == "apply_pattern":
            pat = self._parse_pattern(args)
            target = pat.segment_voltages()
            current = dict(applied.segments or {})
            for seg in SEGMENT_NAMES:
                if current.get(seg, 0.0) != target[seg]:
                    self._pending.append(TimedChange(
                        t + RELAY_DELAY_S, seg, target[seg]))
            if applied.v_endcap != pat.endcap_v:
                self._pending.append(TimedChange(
                    t + RELAY_DELAY_S, "endcap", pat.endcap_v))
            self._rebuild(applied)
        elif name == "load_particles":
            self._load(int(args["count"]), args.get("gamma_range"))
            self._pending_load -= int(args["count"])
        elif name == "set_speed":
            self.speed = float(args["factor"])
        elif name == "pause":
            self.paused = True
        elif name == "resume":
            self.paused = False
        elif name == "reset":
            self._do_reset()
            return      # reset wrote its own event
        self.state.events.append(Event(
            t=t, kind="command", data={"name": name, "args": dict(args)}))

    def _load(self, count: int, gamma_range):
        lo, hi = (float(gamma_range[0]), float(gamma_range[1])) \
            if gamma_range is not None else self._gamma_range
        x0 = self.geom.centerline_x
        parts = []
        for _ in range(count):
            gamma = float(self._rng.uniform(lo, hi))
            r = np.array([x0 + self._rng.uniform(-0.4e-3, 0.4e-3),
                          9e-3 + self._rng.uniform(0.0, 2e-3),
                          self._rng.uniform(-3e-3, 3e-3)])
            parts.append(Particle.from_gamma(gamma, r=r, id=self._next_id))
            self._next_id += 1
        add = SimState.from_particles(parts)
        s = self.state.sim
        self.state.sim = SimState(
            t=s.t, r=np.vstack([s.r, add.r]), v=np.vstack([s.v, add.v]),
            q=np.concatenate([s.q, add.q]), m=np.concatenate([s.m, add.m]),
            ids=np.concatenate([s.ids, add.ids]),
            active=np.concatenate([s.active, add.active]))
        self.state.mode = "loading"
        self._window.clear()

    def _do_reset(self):
        _collision_pairs.pop(id(self.state.events), None)
        variac, central, endcap = self._defaults
        self._rng = np.random.default_rng(self.seed)
        self._next_id = 0
        self._event_cursor = 0
        self.paused = False
        self._init_electrics(variac, central, endcap,
                             pattern_center_c().segment_voltages())
        self.state = SessionState(t=0.0, voltages=self.program.state_at(0.0),
                                  sim=self._empty_sim(), mode="idle",
                                  events=[Event(t=0.0, kind="reset",
                                                data={})],
                                  seed=self.seed)
        self._window.clear()
        self._resetting = False

    # -- time --------------------------------------------------------------

    def advance(self, sim_seconds: float):
        """Apply queued commands, then integrate forward.

        All queued commands land at the current clock before any
        stepping, which is what makes replay-by-log exact.
        """
        if sim_seconds < 0:
            raise ValueError("cannot advance backwards")
        inbox, self._inbox = self._inbox, []
        for cmd in inbox:
            self._apply(cmd)
            if self.recorder is not None:
                self.recorder.log_command(self.state.t, cmd)
        if self.paused:
            sim_seconds = 0.0       # the clock freezes with the command
        if sim_seconds == 0:
            self.state.voltages = self.program.state_at(self.state.t)
            return
        sim = self.state.sim
        n = int(round(sim_seconds / self.config.dt))
        if sim.q.size == 0:
            t1 = self.state.t + n * self.config.dt
            for c in self.program.changes:
                if self.state.t < c.t_s <= t1:
                    self.state.events.append(Event(
                        t=c.t_s, kind="relay",
                        data={"target": c.target, "value_V": c.value_V}))
            self.state.t = t1
        else:
            sim.t = self.state.t
            sim, ts, rs = _run(sim, self.model, self.config, n,
                               self.state.events, record=True)
            self.state.sim = sim
            self.state.t = sim.t
            for tk, rk in zip(ts, rs):
                if self._window and self._window[-1][0] == tk:
                    continue
                self._window.append((tk, rk[:, 1].copy()))
        self._prune_pending()
        self.state.voltages = self.program.state_at(self.state.t)
        self._update_mode()

    def _prune_pending(self):
        now = self.state.t
        self._pending = [c for c in self._pending if c.t_s > now]

    def _update_mode(self):
        sim = self.state.sim
        if not sim.active.any():
            if self.state.mode != "idle":
                self.state.mode = "idle"
            return
        if self.state.mode == "loading":
            if self.config.ac_mode == "pseudo":
                settled = float(np.abs(sim.v[sim.active]).max()) < 2e-4
            else:
                # micromotion never dies, so compare half-window means
                settled = (len(self._window) == self._window.maxlen
                           and self._secular_drift() < 2e-5)
            if settled:
                self.state.mode = "running"
        elif self.state.mode == "idle":
            self.state.mode = "loading"

    def _secular_drift(self) -> float:
        ys = np.stack([w[1] for w in self._window])[:, self.state.sim.active]
        half = ys.shape[0] // 2
        return float(np.abs(ys[:half].mean(axis=0)
                            - ys[half:].mean(axis=0)).max())

    # -- state emission ----------------------------------------------------

    def derived_measurements(self) -> dict:
        """Sliding-window mean height and micromotion amplitude in mm."""
        sim = self.state.sim
        act = sim.active
        if not act.any() or not self._window:
            return {"y_mean_mm": None, "alpha_mm": None}
        ys = np.stack([w[1] for w in self._window])[:, act]
        y_mean = float(ys.mean())
        if self.config.ac_mode == "pseudo":
            vs = self.program.state_at(self.state.t)
            b_over_m = self.config.drag_coefficient / sim.m[act]
            amps = [driven_alpha(self.geom, vs.drive, float(g), float(bm),
                                 vs.v_central, float(y))
                    for g, bm, y in zip(sim.gamma[act], b_over_m,
                                        sim.r[act, 1])]
            alpha = float(np.mean(amps))
        else:
            alpha = float(np.mean(ys.max(axis=0) - ys.min(axis=0)))
        return {"y_mean_mm": y_mean * 1e3, "alpha_mm": alpha * 1e3}

    def state_message(self) -> StateMessage:
        vs = self.state.voltages
        sim = self.state.sim
        parts = [(int(i), float(r[0] * 1e3), float(r[1] * 1e3),
                  float(r[2] * 1e3))
                 for i, r, a in zip(sim.ids, sim.r, sim.active) if a]
        new_events = [e.to_dict()
                      for e in self.state.events[self._event_cursor:]]
        self._event_cursor = len(self.state.events)
        msg = StateMessage(
            t=self.state.t,
            voltages={"variac_rms": self.variac_rms,
                      "trap_rms": float(vs.drive.v_ac_amplitude
                                        / np.sqrt(2.0)),
                      "central": vs.v_central, "endcap": vs.v_endcap,
                      "segments": {s: vs.segment_voltage(s)
                                   for s in SEGMENT_NAMES}},
            particles=parts, derived=self.derived_measurements(),
            events=new_events)
        if self.recorder is not None:
            self.recorder.log_state(msg)
        return msg


def handle_command(session: Session, cmd) -> dict:
    return session.handle_command(cmd)


def stream_state(session: Session, rate_hz: float = 60.0,
                 max_messages: int | None = None, pace: bool = False):
    """Ordered state messages at rate_hz; the simulation runs at
    session.speed times real time (quantized to whole integrator steps
    per tick).  Pausing freezes the clock, so a paused session repeats
    identical snapshots.  With pace=True each message waits for its
    wall-clock slot (a slow consumer then simply sees fewer, never
    reordered, messages pulled late)."""
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    n = 0
    wall0 = time.monotonic()
    while max_messages is None or n < max_messages:
        if pace:
            lag = wall0 + (n + 1) / rate_hz - time.monotonic()
            if lag > 0:
                time.sleep(lag)
        if session.paused:
            session.advance(0.0)
        else:
            session.advance(session.speed / rate_hz)
        yield session.state_message()
        n += 1


# ---------------------------------------------------------------------------
# Session logs (record / replay)
# ---------------------------------------------------------------------------

class SessionLogError(ValueError):
    """Log rejected; .line is the 1-based offending line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _crc_of(obj: dict) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return format(zlib.crc32(blob.encode()), "08x")


def _log_line(obj: dict) -> str:
    obj = dict(obj)
    obj["crc"] = _crc_of(obj)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class SessionRecorder:
    """Writes the command + state log for one session."""

    def __init__(self, path: str, session: Session):
        self.path = path
        self._f = open(path, "w")
        cfg = session.config
        variac, central, endcap = session._defaults
        self._write({"v": PROTOCOL_VERSION, "kind": "header",
                     "seed": session.seed, "speed": session.speed,
                     "variac_rms": variac, "central_v": central,
                     "endcap_v": endcap,
                     "sim": {"dt": cfg.dt, "ac_mode": cfg.ac_mode,
                             "drag_coefficient": cfg.drag_coefficient,
                             "enable_coulomb": cfg.enable_coulomb,
                             "sample_stride": cfg.sample_stride}})
        session.recorder = self

    def _write(self, obj: dict):
        self._f.write(_log_line(obj) + "\n")

    def log_command(self, t: float, cmd: CommandMessage):
        self._write({"kind": "command", "t": t, "name": cmd.name,
                     "args": cmd.args})

    def log_state(self, msg: StateMessage):
        self._write({"kind": "state", **msg.to_dict()})

    def close(self):
        self._f.close()


def read_log(path: str) -> list:
    """Parsed log lines; checksums verified line by line."""
    out = []
    with open(path) as f:
        for k, line in enumerate(f.read().split("\n"), start=1):
            if line == "":
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SessionLogError(k, f"unparseable line ({e.msg})") \
                    from None
            crc = obj.pop("crc", None)
            if crc is None:
                raise SessionLogError(k, "missing checksum")
            if crc != _crc_of(obj):
                raise SessionLogError(k, "checksum mismatch")
            out.append(obj)
    if not out:
        raise SessionLogError(1, "empty log")
    return out


def replay(path: str) -> list:
    """Re-run a recorded session; returns the regenerated state dicts.

    With the same build this reproduces the recorded stream bit for bit:
    commands re-apply at their logged clock readings and every state
    line advances the new session by the same step count the original
    took.
    """
    lines = read_log(path)
    head = lines[0]
    if head.get("kind") != "header":
        raise SessionLogError(1, "first line must be the header")
    sim = head.get("sim", {})
    session = Session(seed=head["seed"],
                      variac_rms=head["variac_rms"],
                      v_central=head["central_v"],
                      v_endcap=head["endcap_v"],
                      sim=SimConfig(dt=sim.get("dt", 2e-3),
                                    ac_mode=sim.get("ac_mode", "pseudo"),
                                    drag_coefficient=sim.get(
                                        "drag_coefficient", DRAG_DEFAULT),
                                    enable_coulomb=sim.get(
                                        "enable_coulomb", True),
                                    sample_stride=sim.get(
                                        "sample_stride", 1)),
                      speed=head.get("speed", 1.0))
    states = []
    for ln, obj in enumerate(lines[1:], start=2):
        kind = obj.get("kind")
        if kind == "command":
            session.handle_command({"kind": "command", "name": obj["name"],
                                    "args": obj["args"]})
        elif kind == "state":
            dt_sim = obj["t"] - session.state.t
            session.advance(max(dt_sim, 0.0))
            states.append(session.state_message().to_dict())
        else:
            raise SessionLogError(ln, f"unknown log kind {kind!r}")
    return states


# ---------------------------------------------------------------------------
# Socket front door
# ---------------------------------------------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _ws_accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _ws_text_frame(payload: bytes) -> bytes:
    n = len(payload)
    if n < 126:
        head = struct.pack("!BB", 0x81, n)
    elif n < (1 << 16):
        head = struct.pack("!BBH", 0x81, 126, n)
    else:
        head = struct.pack("!BBQ", 0x81, 127, n)
    return head + payload


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _ws_read_message(sock: socket.socket) -> bytes | None:
    """One complete client frame; answers pings, None on close/EOF."""
    while True:
        head = _recv_exact(sock, 2)
        if head is None:
            return None
        b0, b1 = head
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        length = b1 & 0x7F
        if length == 126:
            length = struct.unpack("!H", _recv_exact(sock, 2))[0]
        elif length == 127:
            length = struct.unpack("!Q", _recv_exact(sock, 8))[0]
        mask = _recv_exact(sock, 4) if masked else b"\x00" * 4
        data = _recv_exact(sock, length) if length else b""
        if data is None or (masked and mask is None):
            return None
        if masked:
            data = bytes(c ^ mask[i % 4] for i, c in enumerate(data))
        if opcode == 0x8:                       # close
            try:
                sock.sendall(struct.pack("!BB", 0x88, 0))
            except OSError:
                pass
            return None
        if opcode == 0x9:                       # ping -> pong
            sock.sendall(struct.pack("!BB", 0x8A, len(data)) + data)
            continue
        if opcode in (0x1, 0x2):
            return data


class _Client:
    def __init__(self, sock: socket.socket, kind: str):
        self.sock = sock
        self.kind = kind                        # "raw" | "ws"
        self.queue: deque = deque()
        self.lock = threading.Lock()
        self.cv = threading.Condition(self.lock)
        self.open = True
        self.dropped = 0

    def enqueue(self, payload: bytes, droppable: bool):
        with self.cv:
            if not self.open:
                return
            if droppable and len(self.queue) >= 8:
                self.queue.popleft()            # oldest state goes first
                self.dropped += 1
            self.queue.append(payload)
            self.cv.notify()

    def next_payload(self):
        with self.cv:
            while self.open and not self.queue:
                self.cv.wait(timeout=0.5)
            if not self.open and not self.queue:
                return None
            return self.queue.popleft() if self.queue else b""

    def close(self):
        with self.cv:
            self.open = False
            self.cv.notify_all()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class LabServer:
    """Serves one session to any number of raw-TCP or WebSocket clients."""

    def __init__(self, session: Session, host: str = "127.0.0.1",
                 port: int = 0, rate_hz: float = 60.0, pace: bool = True):
        self.session = session
        self.rate_hz = float(rate_hz)
        self.pace = pace
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._clients: list[_Client] = []
        self._threads: list[threading.Thread] = []
        self._sock = socket.create_server((host, port))
        self.host, self.port = self._sock.getsockname()[:2]
        self._spawn(self._accept_loop)
        self._spawn(self._tick_loop)

    def _spawn(self, fn, *args):
        th = threading.Thread(target=fn, args=args, daemon=True)
        th.start()
        self._threads.append(th)

    # -- loops -------------------------------------------------------------

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, _ = self._sock.accept()
            except OSError:
                return
            self._spawn(self._client_setup, sock)

    def _client_setup(self, sock: socket.socket):
        try:
            first = self._sniff(sock)
        except OSError:
            sock.close()
            return
        if first.startswith(b"GET "):
            if not self._ws_handshake(sock):
                sock.close()
                return
            client = _Client(sock, "ws")
        else:
            client = _Client(sock, "raw")
        with self._lock:
            self._clients.append(client)
        hello = {"v": PROTOCOL_VERSION, "kind": "hello",
                 "seed": self.session.seed, "rate_hz": self.rate_hz,
                 "mode": self.session.state.mode,
                 "y_null_mm": self.session.y_null * 1e3}
        client.enqueue(self._encode(client, hello), droppable=False)
        self._spawn(self._writer_loop, client)
        self._reader_loop(client)

    @staticmethod
    def _sniff(sock: socket.socket, wait_s: float = 0.5) -> bytes:
        """Peek the first bytes to tell WebSocket from raw framing.

        A WebSocket client speaks first (the GET upgrade); a raw client
        may silently wait for the hello, so an idle connection is raw
        after a short deadline.
        """
        deadline = time.monotonic() + wait_s
        data = b""
        sock.settimeout(0.05)
        try:
            while time.monotonic() < deadline:
                try:
                    data = sock.recv(4, socket.MSG_PEEK)
                except (TimeoutError, socket.timeout):
                    continue
                if not data or len(data) >= 4 or data != b"GET "[:len(data)]:
                    break
        finally:
            sock.settimeout(None)
        return data

    def _ws_handshake(self, sock: socket.socket) -> bool:
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk or len(data) > 65536:
                return False
            data += chunk
        headers = {}
        for line in data.split(b"\r\n")[1:]:
            if b":" in line:
                k, v = line.split(b":", 1)
                headers[k.strip().lower().decode()] = v.strip().decode()
        key = headers.get("sec-websocket-key")
        if key is None or "websocket" not in headers.get("upgrade",
                                                         "").lower():
            return False
        resp = ("HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {_ws_accept_key(key)}\r\n\r\n")
        sock.sendall(resp.encode())
        return True

    def _reader_loop(self, client: _Client):
        try:
            while not self._stop.is_set():
                if client.kind == "raw":
                    head = _recv_exact(client.sock, 4)
                    if head is None:
                        break
                    n = struct.unpack("!I", head)[0]
                    if n > (1 << 20):
                        break
                    body = _recv_exact(client.sock, n)
                    if body is None:
                        break
                else:
                    body = _ws_read_message(client.sock)
                    if body is None:
                        break
                try:
                    msg = json.loads(body)
                except json.JSONDecodeError:
                    ack = {"v": PROTOCOL_VERSION, "kind": "ack", "ok": False,
                           "error": {"type": "schema",
                                     "message": "unparseable JSON"}}
                else:
                    with self._lock:
                        ack = self.session.handle_command(msg)
                client.enqueue(self._encode(client, ack), droppable=False)
        finally:
            self._drop(client)

    def _writer_loop(self, client: _Client):
        while True:
            payload = client.next_payload()
            if payload is None:
                return
            if payload:
                try:
                    client.sock.sendall(payload)
                except OSError:
                    self._drop(client)
                    return

    def _tick_loop(self):
        n = 0
        wall0 = time.monotonic()
        while not self._stop.is_set():
            if self.pace:
                lag = wall0 + (n + 1) / self.rate_hz - time.monotonic()
                while lag > 0 and not self._stop.is_set():
                    time.sleep(min(lag, 0.1))
                    lag = wall0 + (n + 1) / self.rate_hz - time.monotonic()
                if self._stop.is_set():
                    return
            with self._lock:
                sess = self.session
                sess.advance(0.0 if sess.paused
                             else sess.speed / self.rate_hz)
                msg = sess.state_message()
                clients = list(self._clients)
            blob = json.dumps(msg.to_dict()).encode()
            raw = struct.pack("!I", len(blob)) + blob
            ws = _ws_text_frame(blob)
            for c in clients:
                c.enqueue(raw if c.kind == "raw" else ws, droppable=True)
            n += 1

    def _encode(self, client: _Client, obj: dict) -> bytes:
        blob = json.dumps(obj).encode()
        if client.kind == "raw":
            return struct.pack("!I", len(blob)) + blob
        return _ws_text_frame(blob)

    def _drop(self, client: _Client):
        with self._lock:
            if client in self._clients:
                self._clients.remove(client)
        client.close()

    def close(self):
        self._stop.set()
        self._sock.close()
        with self._lock:
            clients = list(self._clients)
            self._clients.clear()
        for c in clients:
            c.close()
        for th in self._threads:
            th.join(timeout=1.0)


def serve(session: Session | None = None, host: str = "127.0.0.1",
          port: int = 0, rate_hz: float = 60.0, pace: bool = True,
          seed: int = 0) -> LabServer:
    """Start a server (daemon threads); caller closes it."""
    if session is None:
        session = Session(seed=seed)
    return LabServer(session, host=host, port=port, rate_hz=rate_hz,
                     pace=pace)
