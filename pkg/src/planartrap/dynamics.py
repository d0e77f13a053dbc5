"""Time-domain particle dynamics in the trap.

The equation of motion per particle is

    m r'' = q E(r, t) - m g y_hat - b r' + Coulomb,

with E from the closed-form electrode potentials: 2D rail fields in the
cross-section (the AC rails driven as V_pk cos(Omega t)) and optional
finite-rectangle segments/endcaps along z.  Integration is fixed-step RK4
for determinism.

Two AC treatments exist.  "cos" integrates the literal 60 Hz drive and is
the default.  "pseudo" replaces it with the time-averaged ponderomotive
force, which removes the fast timescale for long experiments; tests verify
the two agree to the expected order.

The voltage sweep experiment is deliberately quasi-static: holds of
seconds per step with an overdamped particle mean each step is a settled
equilibrium plus a steady driven oscillation, so the series is computed
from the static model and the linear response formula rather than by
integrating minutes of 60 Hz motion.  settle_particle is the full-ODE
cross-check for single operating points.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import COULOMB_K, G_STD, COLLISION_RADIUS, DRAG_DEFAULT
from .fields import (
    DriveParams,
    VoltageState,
    ac_gradient_2d,
)
from .geometry import SEGMENT_NAMES, TrapGeometry
from .particles import Particle
from . import analysis as _an


class SimulationDiverged(RuntimeError):
    """Integration produced non-finite state."""


# ---------------------------------------------------------------------------
# Configuration and state
# ---------------------------------------------------------------------------

AC_PERIOD = 1.0 / 60.0


@dataclass
class SimConfig:
    dt: float = 1.0 / (60.0 * 500.0)
    drag_coefficient: float = DRAG_DEFAULT
    enable_coulomb: bool = False
    duration: float | None = None
    seed: int = 0
    sample_stride: int = 25
    y_cap: float = 0.05
    ac_mode: str = "cos"              # "cos" or "pseudo"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt > AC_PERIOD / 100.0 and self.ac_mode == "cos":
            raise ValueError("dt must resolve the drive: dt <= AC period / 100")
        if self.ac_mode not in ("cos", "pseudo"):
            raise ValueError("ac_mode must be 'cos' or 'pseudo'")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")


@dataclass
class SimState:
    t: float
    r: np.ndarray          # (N, 3)
    v: np.ndarray          # (N, 3)
    q: np.ndarray          # (N,)
    m: np.ndarray          # (N,)
    ids: np.ndarray        # (N,) int
    active: np.ndarray     # (N,) bool; ejected particles freeze

    @classmethod
    def from_particles(cls, particles) -> "SimState":
        parts = list(particles)
        return cls(
            t=0.0,
            r=np.array([p.r for p in parts], dtype=float),
            v=np.array([p.v for p in parts], dtype=float),
            q=np.array([p.q for p in parts], dtype=float),
            m=np.array([p.m for p in parts], dtype=float),
            ids=np.array([p.id for p in parts], dtype=int),
            active=np.ones(len(parts), dtype=bool),
        )

    @property
    def gamma(self) -> np.ndarray:
        return self.q / self.m

    def copy(self) -> "SimState":
        return replace(self, r=self.r.copy(), v=self.v.copy(),
                       active=self.active.copy())


@dataclass(frozen=True)
class Event:
    t: float
    kind: str              # ejection | settle | relay | collision | split-failure
    data: dict

    def to_dict(self) -> dict:
        return {"t_s": self.t, "kind": self.kind, **self.data}


# ---------------------------------------------------------------------------
# Voltage program (timed target changes)
# ---------------------------------------------------------------------------

_TARGETS = ("central", "endcap", "ac_rms") + SEGMENT_NAMES


@dataclass(frozen=True)
class TimedChange:
    t_s: float
    target: str
    value_V: float

    def __post_init__(self):
        if self.target not in _TARGETS:
            raise ValueError(f"unknown voltage target {self.target!r}")


class VoltageProgram:
    """Piecewise-constant electrode settings over time.

    Built from a base VoltageState plus a list of timed changes (already
    shifted by any relay delay by whoever built the list).  Exposes the
    settings and the pre-assembled rectangle stack per interval.
    """

    def __init__(self, base: VoltageState, changes=(), drive: DriveParams | None = None):
        self.base = base
        self.drive = drive if drive is not None else base.drive
        self.changes = sorted((TimedChange(*c) if not isinstance(c, TimedChange)
                               else c for c in changes), key=lambda c: c.t_s)
        self._times = np.array([c.t_s for c in self.changes], dtype=float)
        self._states: list[VoltageState | None] = [None] * (len(self.changes) + 1)

    def interval_index(self, t: float) -> int:
        return int(np.searchsorted(self._times, t, side="right"))

    def state_at(self, t: float) -> VoltageState:
        i = self.interval_index(t)
        if self._states[i] is None:
            vs = self.base
            v_central = vs.v_central
            v_endcap = vs.v_endcap
            segs = dict(vs.segments or {})
            drive = self.drive
            for c in self.changes[:i]:
                if c.target == "central":
                    v_central = c.value_V
                elif c.target == "endcap":
                    v_endcap = c.value_V
                elif c.target == "ac_rms":
                    drive = DriveParams.from_rms(c.value_V, drive.omega)
                else:
                    segs[c.target] = c.value_V
            self._states[i] = VoltageState(v_central=v_central, drive=drive,
                                           segments=segs, v_endcap=v_endcap)
        return self._states[i]

    def to_json(self) -> str:
        return json.dumps([{"t_s": c.t_s, "target": c.target,
                            "value_V": c.value_V} for c in self.changes],
                          indent=2)

    @classmethod
    def changes_from_json(cls, text: str) -> list[TimedChange]:
        raw = json.loads(text)
        out = []
        for item in raw:
            if isinstance(item, dict):
                out.append(TimedChange(float(item["t_s"]), str(item["target"]),
                                       float(item["value_V"])))
            else:
                t, target, v = item
                out.append(TimedChange(float(t), str(target), float(v)))
        return out

    @classmethod
    def from_json(cls, text: str, base: VoltageState,
                  drive: DriveParams | None = None) -> "VoltageProgram":
        return cls(base, cls.changes_from_json(text), drive=drive)


def constant_program(voltages: VoltageState,
                     drive: DriveParams | None = None) -> VoltageProgram:
    return VoltageProgram(voltages, (), drive=drive)


# ---------------------------------------------------------------------------
# Field model
# ---------------------------------------------------------------------------

class RailField:
    """Precompiled 2D rail evaluator for the integrator inner loop.

    Same closed forms as the fields module, but all boundary pieces laid
    out as arrays so one call evaluates every piece at every particle in
    a handful of vectorized operations.  The linear-ramp gradient reduces
    to the strip gradient when the slope is zero, so a single formula
    covers both piece kinds.  DC pieces are stored at unit central
    voltage and scaled per call.
    """

    def __init__(self, geom: TrapGeometry):
        def pack(pieces):
            return (np.array([s.x1 for s in pieces]),
                    np.array([s.x2 for s in pieces]),
                    np.array([s.v1 for s in pieces]),
                    np.array([s.v2 for s in pieces]))
        self.dc = pack(geom.dc_boundary(1.0))
        self.ac = pack(geom.ac_boundary())

    @staticmethod
    def _grad(pieces, x, y):
        """Summed gradient of a piece set at (N,) points; returns (gx, gy)."""
        x1, x2, v1, v2 = pieces
        u1 = x1[None, :] - x[:, None]
        u2 = x2[None, :] - x[:, None]
        yy = y[:, None]
        d1 = u1 * u1 + yy * yy
        d2 = u2 * u2 + yy * yy
        beta = (v2 - v1) / (x2 - x1)
        vx = v1[None, :] - beta[None, :] * u1
        A = np.arctan2(u2, yy) - np.arctan2(u1, yy)
        L = np.log(d2 / d1)
        dA = u1 / d1 - u2 / d2
        dL = 2.0 * yy / d2 - 2.0 * yy / d1
        gx = (beta[None, :] * A - yy * v2[None, :] / d2
              + yy * v1[None, :] / d1) / np.pi
        gy = (vx * dA + 0.5 * beta[None, :] * L
              + 0.5 * beta[None, :] * yy * dL) / np.pi
        return gx.sum(axis=1), gy.sum(axis=1)

    @staticmethod
    def _pot(pieces, x, y):
        x1, x2, v1, v2 = pieces
        u1 = x1[None, :] - x[:, None]
        u2 = x2[None, :] - x[:, None]
        yy = y[:, None]
        d1 = u1 * u1 + yy * yy
        d2 = u2 * u2 + yy * yy
        beta = (v2 - v1) / (x2 - x1)
        vx = v1[None, :] - beta[None, :] * u1
        A = np.arctan2(u2, yy) - np.arctan2(u1, yy)
        L = np.log(d2 / d1)
        return ((vx * A + 0.5 * beta[None, :] * yy * L) / np.pi).sum(axis=1)

    def gradient(self, x, y, v_central, ac_amp):
        gx, gy = self._grad(self.dc, x, y)
        gx *= v_central
        gy *= v_central
        if ac_amp != 0.0:
            ax, ay = self._grad(self.ac, x, y)
            gx += ac_amp * ax
            gy += ac_amp * ay
        return gx, gy

    def ac_gradient_and_hessian(self, x, y):
        """(ax, ay, sxx, sxy) of the unit AC shape; syy = -sxx by
        harmonicity.  Needed for the ponderomotive force."""
        x1, x2, v1, v2 = self.ac
        u1 = x1[None, :] - x[:, None]
        u2 = x2[None, :] - x[:, None]
        yy = y[:, None]
        d1 = u1 * u1 + yy * yy
        d2 = u2 * u2 + yy * yy
        beta = (v2 - v1) / (x2 - x1)
        vx = v1[None, :] - beta[None, :] * u1
        A = np.arctan2(u2, yy) - np.arctan2(u1, yy)
        L = np.log(d2 / d1)
        dA = u1 / d1 - u2 / d2
        dL = 2.0 * yy / d2 - 2.0 * yy / d1
        ax = (beta[None, :] * A - yy * v2[None, :] / d2
              + yy * v1[None, :] / d1) / np.pi
        ay = (vx * dA + 0.5 * beta[None, :] * L
              + 0.5 * beta[None, :] * yy * dL) / np.pi
        sxx = (beta[None, :] * (yy / d1 - yy / d2)
               - 2.0 * yy * v2[None, :] * u2 / d2 ** 2
               + 2.0 * yy * v1[None, :] * u1 / d1 ** 2) / np.pi
        sxy = (beta[None, :] * (u1 / d1 - u2 / d2)
               - v2[None, :] * (u2 * u2 - yy * yy) / d2 ** 2
               + v1[None, :] * (u1 * u1 - yy * yy) / d1 ** 2) / np.pi
        return (ax.sum(axis=1), ay.sum(axis=1),
                sxx.sum(axis=1), sxy.sum(axis=1))

    def potential(self, x, y, v_central, ac_amp):
        phi = v_central * self._pot(self.dc, x, y)
        if ac_amp != 0.0:
            phi = phi + ac_amp * self._pot(self.ac, x, y)
        return phi


class RectStack:
    """All driven rectangles of one voltage interval, corner-vectorized."""

    def __init__(self, geom: TrapGeometry, voltages: VoltageState):
        rects = []
        vals = []
        for name, (left, right) in geom.segment_rects().items():
            v = voltages.segment_voltage(name)
            if v != 0.0:
                rects += [left, right]
                vals += [v, v]
        if voltages.v_endcap != 0.0:
            extra = list(geom.endcap_rects) + geom.undriven_segment_rects()
            rects += extra
            vals += [voltages.v_endcap] * len(extra)
        self.n = len(rects)
        if self.n == 0:
            return
        # corner order (x1,z1) (x1,z2) (x2,z1) (x2,z2): signs + - - +
        self.xc = np.array([[r.x1, r.x1, r.x2, r.x2] for r in rects])
        self.zc = np.array([[r.z1, r.z2, r.z1, r.z2] for r in rects])
        self.sgn = np.array([1.0, -1.0, -1.0, 1.0])
        self.v = np.array(vals, dtype=float)

    def gradient(self, x, y, z):
        """Summed (d/dx, d/dy, d/dz) of the stack at (N,) points."""
        if self.n == 0:
            zero = np.zeros_like(np.asarray(x, dtype=float))
            return zero, zero.copy(), zero.copy()
        u = self.xc[None, :, :] - x[:, None, None]
        w = self.zc[None, :, :] - z[:, None, None]
        yy = y[:, None, None]
        r2 = u * u + yy * yy + w * w
        r = np.sqrt(r2)
        den = r * (yy * yy * r2 + u * u * w * w)
        coef = (self.v[None, :, None] * self.sgn[None, None, :]) / (2.0 * np.pi)
        gx = np.sum(coef * (-yy * w * (yy * yy + w * w)) / den, axis=(1, 2))
        gy = np.sum(coef * (-u * w * (r2 + yy * yy)) / den, axis=(1, 2))
        gz = np.sum(coef * (-yy * u * (yy * yy + u * u)) / den, axis=(1, 2))
        return gx, gy, gz

    def potential(self, x, y, z):
        if self.n == 0:
            return np.zeros_like(np.asarray(x, dtype=float))
        u = self.xc[None, :, :] - x[:, None, None]
        w = self.zc[None, :, :] - z[:, None, None]
        yy = y[:, None, None]
        r = np.sqrt(u * u + yy * yy + w * w)
        coef = (self.v[None, :, None] * self.sgn[None, None, :]) / (2.0 * np.pi)
        return np.sum(coef * np.arctan2(u * w, yy * r), axis=(1, 2))


class TrapFieldModel:
    """Evaluates grad(phi)(r, t) for the integrator.

    include_segments=False restricts to the 2D rail fields (z force 0),
    which is the cross-section experiment configuration.
    """

    def __init__(self, geom: TrapGeometry, program: VoltageProgram,
                 include_segments: bool = True, ac_mode: str = "cos"):
        self.geom = geom
        self.program = program
        self.include_segments = include_segments
        self.ac_mode = ac_mode
        self.rails = RailField(geom)
        self._stacks: dict[int, RectStack] = {}

    def _stack(self, t: float) -> RectStack:
        i = self.program.interval_index(t)
        if i not in self._stacks:
            self._stacks[i] = RectStack(self.geom, self.program.state_at(t))
        return self._stacks[i]

    def grad_phi(self, r: np.ndarray, t: float):
        """(N, 3) gradient of the electric potential, plus the separate
        AC-shape gradient handled per ac_mode (see pseudo_accel)."""
        x = r[:, 0]
        y = np.maximum(r[:, 1], 1e-9)     # frozen/ejected rows; masked later
        z = r[:, 2]
        vs = self.program.state_at(t)
        if self.ac_mode == "cos":
            drive = self.program.drive
            amp = drive.v_ac_amplitude * np.cos(drive.omega * t)
        else:
            amp = 0.0
        gx, gy = self.rails.gradient(x, y, vs.v_central, amp)
        gz = np.zeros_like(gx)
        if self.include_segments:
            sx, sy, sz = self._stack(t).gradient(x, y, z)
            gx, gy, gz = gx + sx, gy + sy, gz + sz
        return np.stack([gx, gy, gz], axis=1)

    def pseudo_accel(self, r: np.ndarray, gamma: np.ndarray):
        """Ponderomotive acceleration for ac_mode='pseudo' (per particle)."""
        x = r[:, 0]
        y = np.maximum(r[:, 1], 1e-9)
        ax, ay, sxx, sxy = self.rails.ac_gradient_and_hessian(x, y)
        drive = self.program.drive
        k = gamma * gamma * drive.v_ac_amplitude ** 2 / (4.0 * drive.omega ** 2)
        fx = -k * 2.0 * (ax * sxx + ay * sxy)
        fy = -k * 2.0 * (ax * sxy - ay * sxx)
        out = np.zeros_like(r)
        out[:, 0] = fx
        out[:, 1] = fy
        return out


def _coulomb_accel(r: np.ndarray, q: np.ndarray, m: np.ndarray,
                   active: np.ndarray) -> np.ndarray:
    d = r[:, None, :] - r[None, :, :]
    dist2 = np.sum(d * d, axis=2)
    np.fill_diagonal(dist2, np.inf)
    dist2 = np.maximum(dist2, (0.2 * COLLISION_RADIUS) ** 2)
    inv3 = dist2 ** -1.5
    qq = np.outer(q, q)
    mask = np.outer(active, active).astype(float)
    f = COULOMB_K * np.sum((qq * inv3 * mask)[:, :, None] * d, axis=1)
    return f / m[:, None]


def _accel(state: SimState, model: TrapFieldModel, config: SimConfig,
           r: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    gamma = state.q / state.m
    a = -gamma[:, None] * model.grad_phi(r, t)
    if model.ac_mode == "pseudo":
        a = a + model.pseudo_accel(r, gamma)
    a[:, 1] -= G_STD
    a -= (config.drag_coefficient / state.m)[:, None] * v
    if config.enable_coulomb and state.q.size > 1:
        a += _coulomb_accel(r, state.q, state.m, state.active)
    a[~state.active] = 0.0
    return a


def step(state: SimState, model: TrapFieldModel, config: SimConfig) -> SimState:
    """One fixed-step RK4 update of every active particle."""
    dt = config.dt
    r0, v0, t0 = state.r, state.v, state.t
    a1 = _accel(state, model, config, r0, v0, t0)
    k1r, k1v = v0, a1
    a2 = _accel(state, model, config, r0 + 0.5 * dt * k1r,
                v0 + 0.5 * dt * k1v, t0 + 0.5 * dt)
    k2r, k2v = v0 + 0.5 * dt * k1v, a2
    a3 = _accel(state, model, config, r0 + 0.5 * dt * k2r,
                v0 + 0.5 * dt * k2v, t0 + 0.5 * dt)
    k3r, k3v = v0 + 0.5 * dt * k2v, a3
    a4 = _accel(state, model, config, r0 + dt * k3r, v0 + dt * k3v, t0 + dt)
    k4r, k4v = v0 + dt * k3v, a4
    r1 = r0 + dt / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r)
    v1 = v0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    r1[~state.active] = r0[~state.active]
    v1[~state.active] = 0.0
    if not (np.all(np.isfinite(r1[state.active]))
            and np.all(np.isfinite(v1[state.active]))):
        bad = state.ids[state.active & ~np.all(np.isfinite(r1), axis=1)]
        raise SimulationDiverged(
            f"non-finite state at t={t0 + dt:.6f}s, particle ids {bad.tolist()}")
    out = state.copy()
    out.t = t0 + dt
    out.r = r1
    out.v = v1
    return out


# ---------------------------------------------------------------------------
# Trajectory container
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray            # (S,)
    r: np.ndarray            # (S, N, 3)
    ids: np.ndarray          # (N,)
    events: list = field(default_factory=list)
    dt: float = 0.0
    stride: int = 1

    def __post_init__(self):
        if self.t.size > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def final_positions(self) -> np.ndarray:
        return self.r[-1]

    def displacement(self, particle_index: int = 0) -> np.ndarray:
        return self.r[-1, particle_index] - self.r[0, particle_index]

    def to_csv(self, path_or_buf) -> None:
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            f = open(path_or_buf, "w", newline="")
            close = True
        else:
            f = path_or_buf
        try:
            w = csv.writer(f)
            w.writerow(("t", "id", "x", "y", "z"))
            for k in range(self.t.size):
                for j, pid in enumerate(self.ids):
                    w.writerow([f"{self.t[k]:.9g}", pid,
                                f"{self.r[k, j, 0]:.12g}",
                                f"{self.r[k, j, 1]:.12g}",
                                f"{self.r[k, j, 2]:.12g}"])
        finally:
            if close:
                f.close()

    def events_to_json(self, **kw) -> str:
        return json.dumps([e.to_dict() for e in self.events], **kw)


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------

def _run(state: SimState, model: TrapFieldModel, config: SimConfig,
         n_steps: int, events: list, record: bool = True):
    """Advance n_steps, recording samples/events; returns (state, t_list, r_list)."""
    ts, rs = [], []
    change_times = model.program._times
    next_change = np.searchsorted(change_times, state.t, side="right")
    for k in range(n_steps):
        if record and k % config.sample_stride == 0:
            ts.append(state.t)
            rs.append(state.r.copy())
        if config.enable_coulomb and state.q.size > 1:
            _log_collisions(state, events)
        state = step(state, model, config)
        while (next_change < change_times.size
               and change_times[next_change] <= state.t):
            c = model.program.changes[next_change]
            events.append(Event(t=c.t_s, kind="relay",
                                data={"target": c.target, "value_V": c.value_V}))
            next_change += 1
        newly_out = state.active & ((state.r[:, 1] <= 0.0)
                                    | (state.r[:, 1] >= config.y_cap))
        if newly_out.any():
            for j in np.nonzero(newly_out)[0]:
                events.append(Event(t=state.t, kind="ejection",
                                    data={"id": int(state.ids[j]),
                                          "y_m": float(state.r[j, 1])}))
            state.active &= ~newly_out
    if record:
        ts.append(state.t)
        rs.append(state.r.copy())
    return state, ts, rs


_collision_pairs: dict[int, set] = {}


def _log_collisions(state: SimState, events: list):
    key = id(events)
    seen = _collision_pairs.setdefault(key, set())
    n = state.q.size
    d = state.r[:, None, :] - state.r[None, :, :]
    dist = np.sqrt(np.sum(d * d, axis=2))
    for i in range(n):
        for j in range(i + 1, n):
            pair = (int(state.ids[i]), int(state.ids[j]))
            if dist[i, j] < 2.0 * COLLISION_RADIUS:
                if pair not in seen and state.active[i] and state.active[j]:
                    events.append(Event(t=state.t, kind="collision",
                                        data={"ids": list(pair),
                                              "sep_m": float(dist[i, j])}))
                    seen.add(pair)
            else:
                seen.discard(pair)


def simulate_multi(particles, waveform, config: SimConfig,
                   geom: TrapGeometry | None = None,
                   drive: DriveParams | None = None) -> Trajectory:
    """Integrate up to 16 particles through a voltage program in 3D."""
    parts = list(particles)
    if len(parts) > 16:
        raise ValueError("desk-scale limit: at most 16 particles")
    if config.duration is None:
        raise ValueError("config.duration required")
    geom = geom if geom is not None else TrapGeometry()
    if hasattr(waveform, "compile"):
        waveform = waveform.compile(drive=drive)
    if drive is not None and waveform.drive is None:
        waveform = VoltageProgram(waveform.base, waveform.changes, drive=drive)
    model = TrapFieldModel(geom, waveform, include_segments=True,
                           ac_mode=config.ac_mode)
    state = SimState.from_particles(parts)
    events: list = []
    n_steps = int(round(config.duration / config.dt))
    state, ts, rs = _run(state, model, config, n_steps, events)
    _collision_pairs.pop(id(events), None)
    return Trajectory(t=np.array(ts), r=np.array(rs), ids=state.ids,
                      events=events, dt=config.dt, stride=config.sample_stride)


def settle_particle(particle: Particle, voltages: VoltageState,
                    config: SimConfig, geom: TrapGeometry | None = None,
                    drive: DriveParams | None = None, events: list | None = None,
                    max_s: float = 10.0):
    """Integrate the cross-section ODE until the secular transient decays.

    Settled means the AC-period-averaged height changes by < 1 um over 5
    periods.  Returns (y_mean, alpha): mean height over the final period
    and the peak-to-peak vertical excursion within it.  Ejection is logged
    to the events list and returns NaNs.
    """
    geom = geom if geom is not None else TrapGeometry()
    drive = drive if drive is not None else voltages.drive
    program = VoltageProgram(voltages, (), drive=drive)
    model = TrapFieldModel(geom, program, include_segments=False,
                           ac_mode=config.ac_mode)
    state = SimState.from_particles([particle])
    ev = events if events is not None else []
    steps_per_period = max(int(round(AC_PERIOD / config.dt)), 1)
    period_means = []
    n_periods = int(max_s / AC_PERIOD)
    for _ in range(n_periods):
        ys = np.empty(steps_per_period)
        for k in range(steps_per_period):
            ys[k] = state.r[0, 1]
            state = step(state, model, config)
            if state.r[0, 1] <= 0.0 or state.r[0, 1] >= config.y_cap:
                ev.append(Event(t=state.t, kind="ejection",
                                data={"id": int(state.ids[0]),
                                      "y_m": float(state.r[0, 1])}))
                return float("nan"), float("nan")
        period_means.append(ys.mean())
        if (len(period_means) > 5
                and abs(period_means[-1] - period_means[-6]) < 1e-6):
            break
    # one more full period for the reported numbers
    ys = np.empty(steps_per_period)
    for k in range(steps_per_period):
        ys[k] = state.r[0, 1]
        state = step(state, model, config)
    ev.append(Event(t=state.t, kind="settle",
                    data={"id": int(state.ids[0]), "y_mean_m": float(ys.mean())}))
    return float(ys.mean()), float(ys.max() - ys.min())


def driven_alpha(geom: TrapGeometry, drive: DriveParams, gamma: float,
                 b_over_m: float, v_central: float, y_eq: float) -> float:
    """Steady-state peak-to-peak vertical excursion of the linearized ODE.

    The 60 Hz drive forces the particle about its equilibrium with
    acceleration amplitude |gamma| V_pk |d(phi_AC)/dy|; the response of a
    damped oscillator at the secular frequency gives the excursion.  Away
    from the null this matches the displacement-proportional growth seen
    in long-exposure streaks.
    """
    x0 = geom.centerline_x
    _, sy = ac_gradient_2d(geom, (x0, y_eq))
    w0sq, _ = _an._axis_curvatures(geom, drive, gamma, v_central, y_eq)
    w0sq = float(np.clip(w0sq, 0.0, None))
    om = drive.omega
    denom = np.sqrt((om * om - w0sq) ** 2 + (b_over_m * om) ** 2)
    amp = abs(gamma) * drive.v_ac_amplitude * abs(float(sy)) / denom
    return 2.0 * amp


def voltage_sweep_experiment(particle: Particle, sweep,
                             geom: TrapGeometry | None = None,
                             drive: DriveParams | None = None,
                             config: SimConfig | None = None,
                             noise_y: float = 0.0,
                             noise_alpha: float = 0.0) -> "_an.HeightVoltageSeries":
    """Stepped central-DC protocol; ends when the particle is lost.

    Each (v_central, hold_s) entry is treated quasi-statically (holds are
    long against both the drive period and the overdamped settling time):
    the settled height is the static equilibrium and the micromotion
    amplitude the steady driven response.  Measurement noise is seeded
    from the config for reproducibility.  The series stops at the last
    step the particle survives; the ejection voltage is recorded in
    series.meta.
    """
    sweep = list(sweep)
    if not sweep:
        raise ValueError("sweep must be nonempty")
    geom = geom if geom is not None else TrapGeometry()
    drive = drive if drive is not None else DriveParams.from_rms(963.0)
    config = config if config is not None else SimConfig()
    gamma = particle.gamma
    b_over_m = config.drag_coefficient / particle.m
    rng = np.random.default_rng(config.seed)
    y_null = _an.find_ac_null(geom).y_null
    volts = np.array([v for v, _ in sweep], dtype=float)
    ok = _an._trappable_mask(geom, drive, gamma, volts, y_null)
    ys = _an.equilibrium_heights(geom, drive, gamma, volts)

    rows_v, rows_y, rows_a = [], [], []
    meta = {"gamma_true": gamma, "hold_s": [h for _, h in sweep]}
    for i, (v, _hold) in enumerate(sweep):
        if not ok[i]:
            meta["ejection_v"] = float(v)
            break
        y_eq = float(ys[i])
        alpha = driven_alpha(geom, drive, gamma, b_over_m, v, y_eq)
        y_meas = y_eq + rng.normal(0.0, noise_y) if noise_y > 0 else y_eq
        a_meas = abs(alpha + rng.normal(0.0, noise_alpha)) if noise_alpha > 0 else alpha
        rows_v.append(v)
        rows_y.append(y_meas)
        rows_a.append(a_meas)
    n = len(rows_v)
    sig_y = np.full(n, noise_y if noise_y > 0 else 1e-6)
    sig_a = np.full(n, noise_alpha if noise_alpha > 0 else 1e-6)
    return _an.HeightVoltageSeries(v_central=np.array(rows_v),
                                   y=np.array(rows_y), sigma_y=sig_y,
                                   alpha=np.array(rows_a), sigma_alpha=sig_a,
                                   meta=meta)


def standard_sweep(v_start: float = -40.0, v_stop: float = -200.0,
                   v_step: float = -5.0, hold_s: float = 5.0):
    """The stepped protocol used on real particles: -5 V every 5 s."""
    volts = np.arange(v_start, v_stop + v_step / 2, v_step)
    return [(float(v), hold_s) for v in volts]


def steady_segment(y_mean: float, alpha: float, drive: DriveParams,
                   x: float, z: float = 0.0, duration: float = AC_PERIOD,
                   dt: float = 1.0 / 30000.0, phase: float = 0.0):
    """Synthesized steady-state path (t, r(N,3) samples) for rendering.

    The settled cross-section motion is, to linear order, a cosine at the
    drive frequency with peak-to-peak alpha about y_mean.
    """
    t = np.arange(0.0, duration, dt)
    y = y_mean + 0.5 * alpha * np.cos(drive.omega * t + phase)
    r = np.stack([np.full_like(t, x), y, np.full_like(t, z)], axis=1)
    return t, r


def total_mechanical_energy(state: SimState, model: TrapFieldModel,
                            config: SimConfig) -> float:
    """Kinetic + potential energy (J) for conservation checks.

    Meaningful with drag off and static voltages; with the cos drive the
    Hamiltonian is time dependent and this is not conserved.
    """
    vs = model.program.state_at(state.t)
    x = state.r[:, 0]
    y = state.r[:, 1]
    z = state.r[:, 2]
    phi = model.rails.potential(x, y, vs.v_central, 0.0)
    if model.include_segments:
        phi = phi + model._stack(state.t).potential(x, y, z)
    pot = np.sum(state.q * phi) + np.sum(state.m * G_STD * y)
    kin = 0.5 * np.sum(state.m * np.sum(state.v ** 2, axis=1))
    e = kin + pot
    if config.enable_coulomb and state.q.size > 1:
        d = state.r[:, None, :] - state.r[None, :, :]
        dist = np.sqrt(np.sum(d * d, axis=2))
        iu = np.triu_indices(state.q.size, k=1)
        e += COULOMB_K * np.sum(np.outer(state.q, state.q)[iu] / dist[iu])
    return float(e)
