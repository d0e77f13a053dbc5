// Wire protocol v1 of the lab service: JSON messages over a WebSocket
// (the service also speaks length-prefixed raw TCP, which this panel
// does not use).  The panel never computes physics; everything shown
// comes out of these messages.

export const PROTOCOL_VERSION = "v1";

export const COMMAND_NAMES = [
  "set_variac_rms", "set_central_v", "set_endcap_v", "apply_pattern",
  "load_particles", "reset", "pause", "resume", "set_speed",
] as const;

export type CommandName = (typeof COMMAND_NAMES)[number];

export const PATTERN_NAMES = ["center-c", "center-d", "split", "all-off"] as const;
export const SEGMENT_NAMES = ["A", "B", "C", "D", "E"] as const;
export const SEGMENT_LEVELS = ["high", "low", "off"] as const;

export interface HelloMessage {
  v: string;
  kind: "hello";
  seed: number;
  rate_hz: number;
  mode: string;
  y_null_mm: number;
}

export interface VoltagesView {
  variac_rms: number;
  trap_rms: number;
  central: number;
  endcap: number;
  segments: Record<string, number>;
}

export interface StateMessage {
  v: string;
  kind: "state";
  t: number;
  voltages: VoltagesView;
  particles: [number, number, number, number][]; // id, x_mm, y_mm, z_mm
  derived: { y_mean_mm: number | null; alpha_mm: number | null };
  events: Record<string, unknown>[];
}

export interface AckMessage {
  v: string;
  kind: "ack";
  ok: boolean;
  name?: string;
  error?: { type: string; message: string };
  id?: number;
}

export type ServerMessage = HelloMessage | StateMessage | AckMessage;

export interface CommandMessage {
  v: string;
  kind: "command";
  name: CommandName;
  args: Record<string, unknown>;
  id?: number;
}

export function makeCommand(name: CommandName,
                            args: Record<string, unknown> = {},
                            id?: number): CommandMessage {
  const cmd: CommandMessage = { v: PROTOCOL_VERSION, kind: "command", name, args };
  if (id !== undefined) cmd.id = id;
  return cmd;
}

export function parseServerMessage(text: string): ServerMessage {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch {
    throw new Error("unparseable server message");
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new Error("server message is not an object");
  }
  const m = obj as Record<string, unknown>;
  switch (m.kind) {
    case "hello":
      if (typeof m.y_null_mm !== "number" || typeof m.rate_hz !== "number") {
        throw new Error("malformed hello");
      }
      return m as unknown as HelloMessage;
    case "state":
      if (typeof m.t !== "number" || typeof m.voltages !== "object"
          || !Array.isArray(m.particles)) {
        throw new Error("malformed state");
      }
      return m as unknown as StateMessage;
    case "ack":
      if (typeof m.ok !== "boolean") throw new Error("malformed ack");
      return m as unknown as AckMessage;
    default:
      throw new Error(`unknown message kind ${String(m.kind)}`);
  }
}

// ---------------------------------------------------------------------------
// Session logs.  The service writes one JSON object per line with a crc32
// checksum over the canonical encoding of the line minus its "crc" member.
// Keys are sorted, so the crc member can be sliced out of the raw text and
// the remainder is exactly the checksummed byte string; no re-serialization
// (with its float-formatting pitfalls) is needed on this side.
// ---------------------------------------------------------------------------

export interface LogLine {
  kind: string;
  [key: string]: unknown;
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32Hex(text: string): string {
  const bytes = new TextEncoder().encode(text);
  let crc = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    crc = CRC_TABLE[(crc ^ bytes[i]) & 0xff] ^ (crc >>> 8);
  }
  crc = (crc ^ 0xffffffff) >>> 0;
  return crc.toString(16).padStart(8, "0");
}

export class SessionLogError extends Error {
  constructor(public line: number, message: string) {
    super(`line ${line}: ${message}`);
  }
}

export function parseLogLine(raw: string, lineNo: number): LogLine {
  let obj: unknown;
  try {
    obj = JSON.parse(raw);
  } catch {
    throw new SessionLogError(lineNo, "unparseable line");
  }
  const rec = obj as Record<string, unknown>;
  const crc = rec.crc;
  if (typeof crc !== "string") {
    throw new SessionLogError(lineNo, "missing checksum");
  }
  // slice the crc member (and exactly one neighbouring comma) out of the
  // raw text; what remains is the canonical checksummed encoding
  const trailing = raw.replace(`"crc":${JSON.stringify(crc)},`, "");
  const body = trailing !== raw
    ? trailing
    : raw.replace(`,"crc":${JSON.stringify(crc)}`, "");
  if (body === raw || crc32Hex(body) !== crc) {
    throw new SessionLogError(lineNo, "checksum mismatch");
  }
  delete rec.crc;
  return rec as LogLine;
}

export function parseLog(text: string): LogLine[] {
  const out: LogLine[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    if (lines[i] === "") continue;
    out.push(parseLogLine(lines[i], i + 1));
  }
  if (out.length === 0) throw new SessionLogError(1, "empty log");
  return out;
}
