"""Command-line front end for the virtual trap bench.

Each subcommand wraps one library workflow and prints a single JSON
object (or a CSV table for the bulk outputs) so runs can be piped and
diffed.  Exit codes: 0 success, 2 invalid input or configuration,
3 the integrator diverged.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import service as sv
from .analysis import (HeightVoltageSeries, find_ac_null,
                       fit_gamma_height_curve, equilibrium_heights,
                       micromotion_minimum)
from .config import ConfigError, load_config
from .dynamics import (AC_PERIOD, SimConfig, SimulationDiverged,
                       driven_alpha, standard_sweep, steady_segment,
                       voltage_sweep_experiment)
from .fields import dc_potential_2d, per_mass_potential, pseudopotential
from .shuttle import (axial_profile, pattern_center_c, pattern_center_d,
                      pattern_split, profile_minima_separation,
                      run_shuttle_experiment, run_split_experiment)
from .vision import (associate_tracks, blobs_to_csv, compact_frame_shape,
                     detect_blobs, micromotion_stats, read_pgm, render_frame,
                     write_pgm)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def _open_out(path):
    return open(path, "w", newline="") if path else sys.stdout


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_potential_map(cfg, args):
    geom, drive = cfg.geom, cfg.drive
    gamma = args.gamma if args.gamma is not None else cfg.gamma
    x0 = geom.centerline_x
    xs = np.linspace(x0 - args.half_width_mm * 1e-3,
                     x0 + args.half_width_mm * 1e-3, args.nx)
    ys = np.linspace(args.y_min_mm * 1e-3, args.y_max_mm * 1e-3, args.ny)
    f = _open_out(args.out)
    try:
        f.write("x_mm,y_mm,phi_V,pseudo_V,u_J_per_kg\n")
        for y in ys:
            pt = (xs, np.full_like(xs, y))
            phi = dc_potential_2d(geom, cfg.v_central, pt)
            psi = pseudopotential(geom, drive, gamma, pt)
            u = per_mass_potential(geom, drive, gamma, cfg.v_central, pt)
            for j in range(xs.size):
                f.write(f"{xs[j] * 1e3:.6g},{y * 1e3:.6g},"
                        f"{phi[j]:.9g},{psi[j]:.9g},{u[j]:.9g}\n")
    finally:
        if f is not sys.stdout:
            f.close()
    return EXIT_OK


def _cmd_find_null(cfg, args):
    null = find_ac_null(cfg.geom)
    _emit({"x0_mm": null.x * 1e3,
           "y_null_mm": null.y_null * 1e3,
           "gap_central_ac_mm": cfg.geom.gap_central_ac * 1e3,
           "gap_ac_segment_mm": cfg.geom.gap_ac_segment * 1e3}, args.out)
    return EXIT_OK


def _cmd_fit_gamma(cfg, args):
    try:
        series = HeightVoltageSeries.from_csv(args.csv)
    except OSError as err:
        print(f"error: cannot read {args.csv}: {err}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as err:
        print(f"error: malformed sweep CSV: {err}", file=sys.stderr)
        return EXIT_INVALID
    est = fit_gamma_height_curve(series, cfg.geom, cfg.drive)
    out = {"gamma": est.gamma, "sigma": est.sigma, "method": est.method,
           "chi2_reduced": est.chi2_reduced, "n_points": len(series)}
    try:
        v_min, _ = micromotion_minimum(series)
        out["v_alpha_min_V"] = v_min
        # the refined vertex falls between dial settings; also report the
        # sweep step that actually read the smallest amplitude
        out["v_alpha_min_grid_V"] = float(
            series.v_central[int(np.argmin(series.alpha))])
    except ValueError:
        pass                            # flat or absent micromotion column
    _emit(out, args.out)
    return EXIT_OK


def _cmd_sweep(cfg, args, seed):
    gamma = args.gamma if args.gamma is not None else cfg.gamma
    sweep = standard_sweep(args.v_start, args.v_stop, args.v_step,
                           args.hold_s)
    sim = replace(cfg.sim_config(SimConfig()), seed=seed)
    series = voltage_sweep_experiment(cfg.particle(gamma), sweep,
                                      geom=cfg.geom, drive=cfg.drive,
                                      config=sim,
                                      noise_y=args.noise_y_mm * 1e-3,
                                      noise_alpha=args.noise_alpha_mm * 1e-3)
    f = _open_out(args.out)
    try:
        series.to_csv(f)
    finally:
        if f is not sys.stdout:
            f.close()
    return EXIT_OK


def _cmd_shuttle(cfg, args, seed):
    gamma = args.gamma if args.gamma is not None else cfg.gamma
    sim = cfg.sim_config()
    if sim is not None and sim.duration is None:
        sim = replace(sim, duration=args.switch_s + args.transfer_s,
                      seed=seed)
    t0 = time.perf_counter()
    distance, traj = run_shuttle_experiment(cfg.particle(gamma), config=sim,
                                            geom=cfg.geom, drive=cfg.drive,
                                            switch_s=args.switch_s,
                                            transfer_s=args.transfer_s)
    prof_c = axial_profile(pattern_center_c(), cfg.geom, cfg.drive, gamma)
    prof_d = axial_profile(pattern_center_d(), cfg.geom, cfg.drive, gamma)
    separation = profile_minima_separation(prof_c, prof_d)
    _emit({"distance_mm": distance * 1e3,
           "profile_separation_mm": separation * 1e3,
           "consistency": distance / separation,
           "events": [e.kind for e in traj.events],
           "elapsed_s": time.perf_counter() - t0}, args.out)
    return EXIT_OK


def _cmd_split(cfg, args, seed):
    gamma = args.gamma if args.gamma is not None else cfg.gamma
    sim = cfg.sim_config()
    if sim is not None and sim.duration is None:
        sim = replace(sim, duration=args.switch_s + 0.5 + args.transfer_s,
                      seed=seed, enable_coulomb=True)
    t0 = time.perf_counter()
    d1, d2, traj = run_split_experiment(cfg.particle(gamma, id=1),
                                        cfg.particle(gamma, id=2),
                                        config=sim, geom=cfg.geom,
                                        drive=cfg.drive,
                                        switch_s=args.switch_s,
                                        transfer_s=args.transfer_s)
    prof = axial_profile(pattern_split(), cfg.geom, cfg.drive, gamma)
    _emit({"d1_mm": d1 * 1e3, "d2_mm": d2 * 1e3,
           "well_minima_mm": [z * 1e3 for z in prof.minima_z],
           "events": [e.kind for e in traj.events],
           "elapsed_s": time.perf_counter() - t0}, args.out)
    return EXIT_OK


def _cmd_render(cfg, args, seed):
    gamma = args.gamma if args.gamma is not None else cfg.gamma
    geom, drive, cam = cfg.geom, cfg.drive, cfg.camera
    y_eq = float(equilibrium_heights(geom, drive, gamma,
                                     [cfg.v_central])[0])
    if not np.isfinite(y_eq):
        print("error: no stable height at the configured voltage",
              file=sys.stderr)
        return EXIT_INVALID
    sim = cfg.sim_config(SimConfig())
    b_over_m = sim.drag_coefficient / cfg.particle(gamma).m
    alpha = driven_alpha(geom, drive, gamma, b_over_m, cfg.v_central, y_eq)
    os.makedirs(args.out_dir, exist_ok=True)
    w, h = compact_frame_shape()
    paths = []
    for k in range(args.frames):
        t, r = steady_segment(y_eq, alpha, drive, geom.centerline_x,
                              duration=max(1.0 / cam.fps, AC_PERIOD))
        frame = render_frame(t + k / cam.fps, r, cam, width=w, height=h,
                             seed=seed + k, timestamp=k / cam.fps)
        path = os.path.join(args.out_dir, f"frame_{k:04d}.pgm")
        write_pgm(frame, path)
        paths.append(path)
    _emit({"frames": paths, "y_mm": y_eq * 1e3, "alpha_mm": alpha * 1e3},
          args.out)
    return EXIT_OK


def _cmd_track(cfg, args):
    frames = []
    for path in args.frames:
        try:
            frames.append(read_pgm(path))
        except (OSError, ValueError) as err:
            print(f"error: {path}: {err}", file=sys.stderr)
            return EXIT_INVALID
    per_frame = [detect_blobs(fr, spot_diameter_px=cfg.camera.spot_diameter_px)
                 for fr in frames]
    if args.summary:
        y, sy, a, sa, n = micromotion_stats(frames, cfg.camera)
        tracks = associate_tracks(per_frame)
        _emit({"n_frames": len(frames), "n_used": n,
               "n_tracks": len(tracks),
               "y_mm": y * 1e3, "sigma_y_mm": sy * 1e3,
               "alpha_mm": a * 1e3, "sigma_alpha_mm": sa * 1e3}, args.out)
    else:
        f = _open_out(args.out)
        try:
            f.write(blobs_to_csv(per_frame))
        finally:
            if f is not sys.stdout:
                f.close()
    return EXIT_OK


def _cmd_serve(cfg, args, seed):
    session = sv.Session(seed=seed, geom=cfg.geom,
                         variac_rms=cfg.variac_rms,
                         v_central=cfg.v_central, v_endcap=cfg.v_endcap,
                         sim=cfg.sim_config(), speed=cfg.speed,
                         gamma_range=cfg.gamma_range)
    recorder = sv.SessionRecorder(args.log, session) if args.log else None
    server = sv.serve(session, port=args.port, rate_hz=cfg.rate_hz)
    print(json.dumps({"v": sv.PROTOCOL_VERSION, "port": server.port,
                      "rate_hz": cfg.rate_hz}), flush=True)
    deadline = None if args.max_seconds is None else (
        time.monotonic() + args.max_seconds)
    try:
        while deadline is None or time.monotonic() < deadline:
            time.sleep(0.1)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
        if recorder is not None:
            recorder.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planartrap",
        description="Virtual five-rail planar trap bench.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON",
                        help="run configuration file")
    common.add_argument("--seed", type=int, default=0,
                        help="random seed (noise, loading, rendering)")
    common.add_argument("--out", metavar="PATH",
                        help="write output here instead of stdout")
    gamma_opt = argparse.ArgumentParser(add_help=False)
    gamma_opt.add_argument("--gamma", type=float, default=None,
                           help="charge-to-mass ratio C/kg "
                                "(overrides the config particle)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("potential-map", parents=[common, gamma_opt],
                       help="CSV grid of DC, pseudo, and effective potential")
    p.add_argument("--nx", type=int, default=81)
    p.add_argument("--ny", type=int, default=81)
    p.add_argument("--half-width-mm", type=float, default=8.0)
    p.add_argument("--y-min-mm", type=float, default=0.5)
    p.add_argument("--y-max-mm", type=float, default=12.0)

    sub.add_parser("find-null", parents=[common],
                   help="AC null position for the configured geometry")

    p = sub.add_parser("fit-gamma", parents=[common],
                       help="fit charge-to-mass ratio to a sweep CSV")
    p.add_argument("csv", help="height-voltage sweep table")

    p = sub.add_parser("sweep", parents=[common, gamma_opt],
                       help="synthetic stepped-voltage sweep, CSV out")
    p.add_argument("--v-start", type=float, default=-40.0)
    p.add_argument("--v-stop", type=float, default=-200.0)
    p.add_argument("--v-step", type=float, default=-5.0)
    p.add_argument("--hold-s", type=float, default=5.0)
    p.add_argument("--noise-y-mm", type=float, default=0.05)
    p.add_argument("--noise-alpha-mm", type=float, default=0.0)

    p = sub.add_parser("shuttle", parents=[common, gamma_opt],
                       help="transfer one particle from well C to well D")
    p.add_argument("--switch-s", type=float, default=1.0)
    p.add_argument("--transfer-s", type=float, default=95.0)

    p = sub.add_parser("split", parents=[common, gamma_opt],
                       help="pull two particles into separate wells")
    p.add_argument("--switch-s", type=float, default=1.0)
    p.add_argument("--transfer-s", type=float, default=110.0)

    p = sub.add_parser("render", parents=[common, gamma_opt],
                       help="synthetic camera frames of the settled particle")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--out-dir", default="frames")

    p = sub.add_parser("track", parents=[common],
                       help="detect and track blobs in PGM frames")
    p.add_argument("frames", nargs="+", help="PGM files in time order")
    p.add_argument("--summary", action="store_true",
                   help="print aggregate statistics instead of the blob CSV")

    p = sub.add_parser("serve", parents=[common],
                       help="run the live session service")
    p.add_argument("--port", type=int, default=0,
                   help="TCP port (0 picks a free one, printed on stdout)")
    p.add_argument("--max-seconds", type=float, default=None,
                   help="stop after this long (default: run until Ctrl-C)")
    p.add_argument("--log", metavar="JSONL", default=None,
                   help="record the session (states and applied commands) "
                        "to this replayable log")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID

    try:
        if args.command == "potential-map":
            return _cmd_potential_map(cfg, args)
        if args.command == "find-null":
            return _cmd_find_null(cfg, args)
        if args.command == "fit-gamma":
            return _cmd_fit_gamma(cfg, args)
        if args.command == "sweep":
            return _cmd_sweep(cfg, args, args.seed)
        if args.command == "shuttle":
            return _cmd_shuttle(cfg, args, args.seed)
        if args.command == "split":
            return _cmd_split(cfg, args, args.seed)
        if args.command == "render":
            return _cmd_render(cfg, args, args.seed)
        if args.command == "track":
            return _cmd_track(cfg, args)
        if args.command == "serve":
            return _cmd_serve(cfg, args, args.seed)
    except SimulationDiverged as err:
        print(f"error: simulation diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    raise AssertionError(f"unhandled command {args.command}")
