"""Session command handling, streaming, logs, and the socket protocol."""

import base64
import hashlib
import json
import os
import socket
import struct

import numpy as np
import pytest

from planartrap import service as sv
from planartrap.analysis import fit_gamma_height_curve, HeightVoltageSeries
from planartrap.dynamics import SimConfig, settle_particle
from planartrap.fields import DriveParams, VoltageState
from planartrap.geometry import TrapGeometry
from planartrap.particles import Particle
from planartrap.shuttle import RELAY_DELAY_S


def _cmd(name, args=None, id=None):
    d = {"v": "v1", "kind": "command", "name": name, "args": args or {}}
    if id is not None:
        d["id"] = id
    return d


def _load_cmd(count, lo, hi):
    return _cmd("load_particles", {"count": count, "gamma_range": [lo, hi]})


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def test_initial_state():
    s = sv.Session(seed=1)
    assert s.state.mode == "idle"
    assert s.state.t == 0.0
    assert s.state.sim.q.size == 0
    assert s.state.voltages.v_central == -40.0
    assert s.state.voltages.v_endcap == -244.0
    assert s.y_null == pytest.approx(4.75e-3, rel=1e-3)


@pytest.mark.parametrize("name,args,etype", [
    ("set_central_v", {"value_v": -350.0}, "range"),
    ("set_central_v", {"value_v": 1.0}, "range"),
    ("set_central_v", {"value_v": "x"}, "schema"),
    ("set_variac_rms", {"value_v": 150.0}, "range"),
    ("set_variac_rms", {"value_v": -1.0}, "range"),
    ("set_endcap_v", {"value_v": -600.0}, "range"),
    ("set_speed", {"factor": 0.05}, "range"),
    ("set_speed", {"factor": 200.0}, "range"),
    ("load_particles", {"count": 0}, "range"),
    ("load_particles", {"count": 17}, "range"),
    ("load_particles", {"count": 2.5}, "schema"),
    ("load_particles", {"count": 2, "gamma_range": [-1e-3]}, "schema"),
    ("load_particles", {"count": 2, "gamma_range": [-1e-3, 1e-3]}, "range"),
    ("apply_pattern", {"name": "sideways"}, "schema"),
    ("apply_pattern", {}, "schema"),
    ("apply_pattern", {"name": "split", "levels": {}}, "schema"),
    ("apply_pattern", {"levels": {"A": "high"}}, "schema"),
    ("pause", {"x": 1}, "schema"),
])
def test_rejected_commands(name, args, etype):
    s = sv.Session(seed=1)
    ack = s.handle_command(_cmd(name, args))
    assert ack["ok"] is False
    assert ack["error"]["type"] == etype
    assert s.handle_command(_cmd("set_central_v", {"value_v": -100.0}))["ok"]


def test_unknown_command_and_bad_kind():
    s = sv.Session(seed=1)
    assert s.handle_command(_cmd("warp"))["error"]["type"] == "schema"
    assert s.handle_command({"kind": "state"})["error"]["type"] == "schema"


def test_ack_echoes_id():
    s = sv.Session(seed=1)
    ok = s.handle_command(_cmd("set_central_v", {"value_v": -90.0}, id=7))
    bad = s.handle_command(_cmd("set_central_v", {"value_v": -900.0}, id=8))
    assert ok["ok"] and ok["id"] == 7
    assert not bad["ok"] and bad["id"] == 8


def test_command_message_roundtrip():
    m = sv.CommandMessage.from_dict(_cmd("set_speed", {"factor": 2.0}, id=3))
    assert m.name == "set_speed" and m.id == 3
    assert sv.CommandMessage.from_dict(m.to_dict()) == m


# ---------------------------------------------------------------------------
# Application semantics
# ---------------------------------------------------------------------------

def test_commands_apply_in_arrival_order():
    s = sv.Session(seed=1)
    s.handle_command(_cmd("set_central_v", {"value_v": -50.0}))
    s.handle_command(_cmd("set_central_v", {"value_v": -80.0}))
    s.advance(0.0)
    assert s.state.voltages.v_central == -80.0
    names = [e.data["name"] for e in s.state.events if e.kind == "command"]
    assert names == ["set_central_v", "set_central_v"]


def test_pattern_switch_lands_one_relay_delay_late():
    s = sv.Session(seed=1)
    s.advance(0.01)
    t_cmd = s.state.t
    s.handle_command(_cmd("apply_pattern", {"name": "center-d"}))
    s.advance(0.002)
    # relay still in flight: the state must not show the new levels yet
    assert s.state.voltages.segment_voltage("C") == -0.01
    s.advance(0.004)
    assert s.state.voltages.segment_voltage("C") == -259.0
    assert s.state.voltages.segment_voltage("D") == -0.01
    relays = [e for e in s.state.events if e.kind == "relay"]
    assert relays and all(e.t == pytest.approx(t_cmd + RELAY_DELAY_S,
                                               abs=1e-12) for e in relays)
    assert sorted(e.data["target"] for e in relays) == ["B", "C", "D", "E"]


def test_variac_and_endcap_apply_at_next_advance():
    s = sv.Session(seed=1)
    s.handle_command(_cmd("set_variac_rms", {"value_v": 10.0}))
    s.handle_command(_cmd("set_endcap_v", {"value_v": -100.0}))
    assert s.state.voltages.v_endcap == -244.0
    s.advance(0.0)
    assert s.state.voltages.v_endcap == -100.0
    assert s.variac_rms == 10.0
    assert s.state.voltages.drive.v_ac_amplitude == pytest.approx(
        10.0 * 48.15 * np.sqrt(2.0))


def test_load_particles_drop_geometry_and_determinism():
    def roster(seed):
        s = sv.Session(seed=seed)
        s.handle_command(_load_cmd(4, -4e-3, -1e-3))
        s.advance(0.0)
        return s, s.state.sim

    s1, sim1 = roster(3)
    _, sim2 = roster(3)
    _, sim3 = roster(4)
    assert sim1.q.size == 4 and s1.state.mode == "loading"
    assert np.array_equal(sim1.r, sim2.r)
    assert not np.array_equal(sim1.r, sim3.r)
    gammas = sim1.q / sim1.m
    assert np.all((gammas > -4e-3) & (gammas < -1e-3))
    assert np.all((sim1.r[:, 1] > 8.9e-3) & (sim1.r[:, 1] < 11.1e-3))
    assert np.all(np.abs(sim1.r[:, 2]) < 3.1e-3)
    assert np.ptp(sim1.r[:, 2]) > 1e-4          # jitter actually present


def test_roster_cap_counts_pending_loads():
    s = sv.Session(seed=1)
    assert s.handle_command(_load_cmd(10, -3e-3, -1e-3))["ok"]
    ack = s.handle_command(_load_cmd(10, -3e-3, -1e-3))
    assert ack["error"]["type"] == "range"
    assert s.handle_command(_load_cmd(6, -3e-3, -1e-3))["ok"]


def test_reset_blocks_commands_until_applied():
    s = sv.Session(seed=1)
    s.handle_command(_load_cmd(2, -3e-3, -1e-3))
    s.advance(0.5)
    assert s.handle_command(_cmd("reset"))["ok"]
    busy = s.handle_command(_cmd("set_central_v", {"value_v": -60.0}))
    assert busy["error"]["type"] == "busy"
    s.advance(0.0)
    assert s.state.mode == "idle"
    assert s.state.t == 0.0
    assert s.state.sim.q.size == 0
    assert s.handle_command(_cmd("set_central_v", {"value_v": -60.0}))["ok"]


def test_empty_session_advances_clock_and_relays():
    s = sv.Session(seed=1)
    s.handle_command(_cmd("apply_pattern", {"name": "all-off"}))
    s.advance(0.05)
    assert s.state.t == pytest.approx(0.05, abs=1e-9)
    assert any(e.kind == "relay" for e in s.state.events)
    assert s.state_message().derived == {"y_mean_mm": None, "alpha_mm": None}


# ---------------------------------------------------------------------------
# Streaming
# ---------------------------------------------------------------------------

def test_stream_timestamps_strictly_increase():
    s = sv.Session(seed=2, speed=5.0)
    s.handle_command(_load_cmd(2, -3e-3, -1e-3))
    ts = [m.t for m in sv.stream_state(s, rate_hz=60, max_messages=20)]
    assert all(b > a for a, b in zip(ts, ts[1:]))


def test_paused_session_repeats_identical_states():
    s = sv.Session(seed=2, speed=5.0)
    s.handle_command(_load_cmd(1, -3e-3, -2e-3))
    stream = sv.stream_state(s, rate_hz=60)
    for _ in range(5):
        next(stream)
    s.handle_command(_cmd("pause"))
    frozen = [next(stream).to_dict() for _ in range(4)]
    assert frozen[1] == frozen[2] == frozen[3]
    t_frozen = frozen[-1]["t"]
    s.handle_command(_cmd("resume"))
    next(stream)                       # resume lands here, clock still held
    after = next(stream)
    assert after.t > t_frozen


def test_set_speed_scales_stream_rate():
    s = sv.Session(seed=2, speed=1.0)
    stream = sv.stream_state(s, rate_hz=60)
    t1 = next(stream).t
    t2 = next(stream).t
    assert t2 - t1 == pytest.approx(1.0 / 60.0, abs=s.config.dt)
    s.handle_command(_cmd("set_speed", {"factor": 12.0}))
    next(stream)
    t3 = next(stream).t
    t4 = next(stream).t
    assert t4 - t3 == pytest.approx(12.0 / 60.0, abs=s.config.dt)


def test_load_settles_to_running_mode():
    s = sv.Session(seed=7, speed=10.0)
    s.handle_command(_load_cmd(3, -3e-3, -1e-3))
    s.handle_command(_cmd("set_central_v", {"value_v": -107.5}))
    for m in sv.stream_state(s, rate_hz=60, max_messages=120):
        if s.state.mode == "running":
            break
    assert s.state.mode == "running"
    assert len(m.particles) == 3
    d = m.derived
    assert 3.0 < d["y_mean_mm"] < 6.5
    assert d["alpha_mm"] > 0.0


def test_lowering_variac_sheds_particles():
    """Weakly confined particles fall out when the AC amplitude drops,
    which is the filtering procedure used to isolate single particles."""
    s = sv.Session(seed=7, speed=10.0)
    s.handle_command(_load_cmd(5, -5e-3, -5e-4))
    for _ in sv.stream_state(s, rate_hz=60, max_messages=150):
        pass
    n_before = int(s.state.sim.active.sum())
    assert n_before >= 3                # most of the drop survives loading
    s.handle_command(_cmd("set_variac_rms", {"value_v": 4.0}))
    last = None
    for last in sv.stream_state(s, rate_hz=60, max_messages=400):
        if not s.state.sim.active.any():
            break
    n_after = int(s.state.sim.active.sum())
    assert n_after < n_before
    assert last is not None
    kinds = [e.kind for e in s.state.events]
    assert "ejection" in kinds


def test_derived_height_matches_settled_dynamics():
    """The streamed y_mean agrees with the full-waveform settled height
    within 1% when the session mirrors the cross-section setup (segments
    parked, endcap grounded)."""
    g = -2.1e-3
    s = sv.Session(seed=9, speed=10.0)
    s.handle_command(_cmd("apply_pattern", {"name": "all-off"}))
    s.handle_command(_cmd("set_endcap_v", {"value_v": 0.0}))
    s.handle_command(_cmd("set_central_v", {"value_v": -107.486}))
    s.advance(0.05)                     # let the relays finish switching
    s.handle_command(_load_cmd(1, g * (1 + 1e-9), g * (1 - 1e-9)))
    for _ in sv.stream_state(s, rate_hz=60, max_messages=200):
        if s.state.mode == "running":
            break
    y_stream = s.state_message().derived["y_mean_mm"] * 1e-3
    vs = VoltageState(v_central=-107.486,
                      drive=DriveParams.from_rms(963.0))
    p = Particle.from_gamma(g, r=(TrapGeometry().centerline_x, 4.75e-3, 0.0))
    y_settled, _ = settle_particle(p, vs, SimConfig())
    assert abs(y_stream - y_settled) / y_settled < 0.01


def test_stream_state_rejects_bad_rate():
    s = sv.Session(seed=1)
    with pytest.raises(ValueError):
        next(sv.stream_state(s, rate_hz=0))
    with pytest.raises(ValueError):
        s.advance(-1.0)


# ---------------------------------------------------------------------------
# Record / replay
# ---------------------------------------------------------------------------

def _scripted_run(path=None, seed=11):
    s = sv.Session(seed=seed, speed=20.0)
    rec = sv.SessionRecorder(path, s) if path else None
    out = []
    stream = sv.stream_state(s, rate_hz=60)
    for k in range(36):
        if k == 2:
            s.handle_command(_load_cmd(2, -2.2e-3, -2.0e-3))
        if k == 10:
            s.handle_command(_cmd("set_central_v", {"value_v": -120.0}))
        if k == 14:
            s.handle_command(_cmd("apply_pattern", {"name": "split"}))
        if k == 18:
            s.handle_command(_cmd("pause"))
        if k == 22:
            s.handle_command(_cmd("resume"))
        out.append(next(stream).to_dict())
    if rec:
        rec.close()
    return out


def test_record_replay_bit_identical(tmp_path):
    p = str(tmp_path / "run.jsonl")
    live = _scripted_run(p)
    lines = sv.read_log(p)
    assert lines[0]["kind"] == "header"
    assert sum(1 for o in lines if o["kind"] == "state") == len(live)
    assert sum(1 for o in lines if o["kind"] == "command") == 5
    replayed = sv.replay(p)
    assert len(replayed) == len(live)
    for a, b in zip(live, replayed):
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_two_identical_runs_produce_identical_logs(tmp_path):
    pa, pb = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    _scripted_run(pa)
    _scripted_run(pb)
    assert open(pa).read() == open(pb).read()
    assert _scripted_run(None) == _scripted_run(None)


def test_log_corruption_detected_at_line(tmp_path):
    p = str(tmp_path / "run.jsonl")
    _scripted_run(p)
    rows = open(p).read().splitlines()

    bad = rows[:]
    i = bad[5].find('"t":') + 5
    bad[5] = bad[5][:i] + ("1" if bad[5][i] != "1" else "2") + bad[5][i + 1:]
    pbad = str(tmp_path / "bad.jsonl")
    open(pbad, "w").write("\n".join(bad) + "\n")
    with pytest.raises(sv.SessionLogError) as err:
        sv.read_log(pbad)
    assert err.value.line == 6

    ptrunc = str(tmp_path / "trunc.jsonl")
    open(ptrunc, "w").write("\n".join(rows[:8]) + "\n" + rows[8][:30])
    with pytest.raises(sv.SessionLogError) as err:
        sv.read_log(ptrunc)
    assert err.value.line == 9

    pnocrc = str(tmp_path / "nocrc.jsonl")
    stripped = json.loads(rows[0])
    stripped.pop("crc")
    open(pnocrc, "w").write(json.dumps(stripped) + "\n")
    with pytest.raises(sv.SessionLogError) as err:
        sv.read_log(pnocrc)
    assert err.value.line == 1


def _session_sweep(path=None, seed=21):
    """Stepped central-DC run driven entirely through commands."""
    s = sv.Session(seed=seed, speed=50.0)
    rec = sv.SessionRecorder(path, s) if path else None
    stream = sv.stream_state(s, rate_hz=60)
    s.handle_command(_cmd("apply_pattern", {"name": "all-off"}))
    s.handle_command(_cmd("set_endcap_v", {"value_v": 0.0}))
    s.handle_command(_load_cmd(1, -2.1e-3 * (1 + 1e-9),
                               -2.1e-3 * (1 - 1e-9)))
    for _ in range(6):                          # drop in and settle
        next(stream)
    rows = []
    for v in np.arange(-60.0, -131.0, -5.0):
        s.handle_command(_cmd("set_central_v", {"value_v": float(v)}))
        m = None
        for _ in range(3):
            m = next(stream)
        rows.append((m.voltages["central"], m.derived["y_mean_mm"] * 1e-3))
    if rec:
        rec.close()
    return rows


def _fit_rows(rows):
    v = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    series = HeightVoltageSeries(v_central=v, y=y,
                                 sigma_y=np.full(v.size, 1e-6),
                                 alpha=np.zeros(v.size),
                                 sigma_alpha=np.ones(v.size))
    return fit_gamma_height_curve(series, TrapGeometry(),
                                  DriveParams.from_rms(963.0))


def test_replayed_sweep_gives_identical_gamma(tmp_path):
    p = str(tmp_path / "sweep.jsonl")
    rows_live = _session_sweep(p)
    est_live = _fit_rows(rows_live)
    assert abs(est_live.gamma - (-2.1e-3)) / 2.1e-3 < 0.05

    states = sv.replay(p)
    # reconstruct the same per-step readings from the replayed stream
    rows_replay = []
    take = iter(states[6:])
    for _ in range(15):
        m = None
        for _ in range(3):
            m = next(take)
        rows_replay.append((m["voltages"]["central"],
                            m["derived"]["y_mean_mm"] * 1e-3))
    est_replay = _fit_rows(rows_replay)
    assert est_replay.gamma == est_live.gamma
    assert est_replay.sigma == est_live.sigma


# ---------------------------------------------------------------------------
# Sockets
# ---------------------------------------------------------------------------

def _read_frame(sock):
    head = b""
    while len(head) < 4:
        chunk = sock.recv(4 - len(head))
        assert chunk, "connection closed early"
        head += chunk
    n = struct.unpack("!I", head)[0]
    body = b""
    while len(body) < n:
        body += sock.recv(n - len(body))
    return json.loads(body)


def test_tcp_protocol_roundtrip():
    srv = sv.serve(seed=5, rate_hz=120, pace=True)
    try:
        c = socket.create_connection(("127.0.0.1", srv.port), timeout=5)
        c.settimeout(5)
        hello = _read_frame(c)
        assert hello["kind"] == "hello" and hello["v"] == "v1"
        assert hello["y_null_mm"] == pytest.approx(4.75, rel=1e-3)
        cmd = json.dumps(_cmd("set_central_v", {"value_v": -150.0},
                              id=9)).encode()
        c.sendall(struct.pack("!I", len(cmd)) + cmd)
        msgs = [_read_frame(c) for _ in range(10)]
        acks = [m for m in msgs if m["kind"] == "ack"]
        states = [m for m in msgs if m["kind"] == "state"]
        assert acks and acks[0]["ok"] and acks[0]["id"] == 9
        ts = [m["t"] for m in states]
        assert all(b > a for a, b in zip(ts, ts[1:]))
        assert states[-1]["voltages"]["central"] == -150.0
        bad = json.dumps(_cmd("set_central_v", {"value_v": -999.0})).encode()
        c.sendall(struct.pack("!I", len(bad)) + bad)
        while True:
            m = _read_frame(c)
            if m["kind"] == "ack":
                assert m["ok"] is False and m["error"]["type"] == "range"
                break
        c.close()
    finally:
        srv.close()


def test_websocket_upgrade_and_command():
    srv = sv.serve(seed=5, rate_hz=120, pace=True)
    try:
        ws = socket.create_connection(("127.0.0.1", srv.port), timeout=5)
        ws.settimeout(5)
        key = base64.b64encode(os.urandom(16)).decode()
        ws.sendall((f"GET / HTTP/1.1\r\nHost: t\r\nUpgrade: websocket\r\n"
                    f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
                    f"Sec-WebSocket-Version: 13\r\n\r\n").encode())
        resp = b""
        while b"\r\n\r\n" not in resp:
            resp += ws.recv(4096)
        head, _, buf = resp.partition(b"\r\n\r\n")
        assert b" 101 " in head.split(b"\r\n")[0]
        guid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
        accept = base64.b64encode(
            hashlib.sha1((key + guid).encode()).digest()).decode()
        assert accept.encode() in head

        def ws_read(buf):
            while len(buf) < 2:
                buf += ws.recv(4096)
            ln = buf[1] & 0x7F
            off = 2
            if ln == 126:
                while len(buf) < 4:
                    buf += ws.recv(4096)
                ln = struct.unpack("!H", buf[2:4])[0]
                off = 4
            while len(buf) < off + ln:
                buf += ws.recv(4096)
            return json.loads(buf[off:off + ln]), buf[off + ln:]

        m, buf = ws_read(buf)
        assert m["kind"] == "hello"
        payload = json.dumps(_cmd("pause")).encode()
        mask = os.urandom(4)
        frame = (struct.pack("!BB", 0x81, 0x80 | len(payload)) + mask
                 + bytes(ch ^ mask[i % 4] for i, ch in enumerate(payload)))
        ws.sendall(frame)
        for _ in range(20):
            m, buf = ws_read(buf)
            if m["kind"] == "ack":
                assert m["ok"] is True
                break
        else:
            pytest.fail("no ack over websocket")
        ws.close()
    finally:
        srv.close()
