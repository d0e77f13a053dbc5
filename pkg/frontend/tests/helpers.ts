// Shared plumbing for the node test-suite: running python one-liners as
// oracles, recording a scripted session log, and spawning the real lab
// service for the socket tests.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { join } from "node:path";

export function py(code: string, args: string[] = [], input?: string): string {
  const res = spawnSync("python3", ["-c", code, ...args], {
    input,
    encoding: "utf8",
    maxBuffer: 64 * 1024 * 1024,
  });
  if (res.status !== 0) {
    throw new Error(`python oracle failed (${res.status}):\n${res.stderr}`);
  }
  return res.stdout;
}

export function pyJson<T>(code: string, args: string[] = [], input?: string): T {
  return JSON.parse(py(code, args, input)) as T;
}

/**
 * Record the stepped central-DC sweep from the service test-suite into a
 * session log: all segments off, endcap grounded, one particle at a known
 * charge-to-mass ratio, -60 to -130 V in -5 V steps with three stream
 * ticks per step.
 */
export function recordScriptedSweep(path: string): void {
  py(
    `
import sys
import numpy as np
from planartrap import service as sv

path = sys.argv[1]
s = sv.Session(seed=21, speed=50.0)
rec = sv.SessionRecorder(path, s)
stream = sv.stream_state(s, rate_hz=60)

def cmd(name, args):
    ack = s.handle_command({"v": "v1", "kind": "command",
                            "name": name, "args": args})
    assert ack["ok"], ack

cmd("apply_pattern", {"name": "all-off"})
cmd("set_endcap_v", {"value_v": 0.0})
cmd("load_particles", {"count": 1,
                       "gamma_range": [-2.1e-3 * (1 + 1e-9),
                                       -2.1e-3 * (1 - 1e-9)]})
for _ in range(6):
    next(stream)
for v in np.arange(-60.0, -131.0, -5.0):
    cmd("set_central_v", {"value_v": float(v)})
    for _ in range(3):
        next(stream)
rec.close()
print("ok")
`,
    [path],
  );
}

export interface ServeHandle {
  port: number;
  rateHz: number;
  logPath: string;
  child: ChildProcess;
  exited: Promise<number | null>;
  stop(): Promise<void>;
}

/** Start `planartrap serve` with a session log and wait for its port. */
export async function startServe(dir: string, seed: number): Promise<ServeHandle> {
  const logPath = join(dir, "session.jsonl");
  const child = spawn(
    "python3",
    ["-m", "planartrap", "serve", "--seed", String(seed),
     "--max-seconds", "300", "--log", logPath],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderrBuf = "";
  child.stderr!.setEncoding("utf8");
  child.stderr!.on("data", (d: string) => { stderrBuf += d; });

  const headLine = await new Promise<string>((resolve, reject) => {
    let buf = "";
    const onData = (d: string) => {
      buf += d;
      const nl = buf.indexOf("\n");
      if (nl >= 0) {
        child.stdout!.off("data", onData);
        resolve(buf.slice(0, nl));
      }
    };
    child.stdout!.setEncoding("utf8");
    child.stdout!.on("data", onData);
    child.once("exit", (code) => {
      reject(new Error(`serve exited before reporting a port (${code}):\n${stderrBuf}`));
    });
    setTimeout(() => reject(new Error("serve did not report a port")), 30_000)
      .unref();
  });

  const head = JSON.parse(headLine) as { port: number; rate_hz: number };
  const exited = new Promise<number | null>((resolve) => {
    child.once("exit", (code) => resolve(code));
  });
  return {
    port: head.port,
    rateHz: head.rate_hz,
    logPath,
    child,
    exited,
    async stop() {
      if (child.exitCode === null) child.kill("SIGINT");
      await Promise.race([
        exited,
        new Promise((r) => setTimeout(r, 15_000).unref()),
      ]);
      if (child.exitCode === null) {
        child.kill("SIGKILL");
        await exited;
      }
    },
  };
}
