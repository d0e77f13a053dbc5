// WebSocket client for the lab service.  The socket construction is
// injectable so the node test-suite can use the "ws" package where the
// browser uses the native WebSocket.

import {
  AckMessage, CommandMessage, CommandName, HelloMessage, StateMessage,
  makeCommand, parseServerMessage,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface LabClientHooks {
  onHello?: (hello: HelloMessage) => void;
  onState?: (state: StateMessage) => void;
  onAck?: (ack: AckMessage) => void;
  onConnection?: (state: "disconnected" | "connecting" | "live") => void;
  onBanner?: (text: string | null) => void;
}

const BACKOFF_MS = [500, 1000, 2000, 4000, 8000];

export class LabClient {
  private socket: SocketLike | null = null;
  private nextId = 1;
  private pending = new Map<number, (ack: AckMessage) => void>();
  private retries = 0;
  private closed = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  /** every command this client ever sent, in order */
  readonly sent: CommandMessage[] = [];

  constructor(private url: string,
              private hooks: LabClientHooks = {},
              private factory: SocketFactory =
                (u) => new WebSocket(u) as unknown as SocketLike) {}

  connect(): void {
    this.closed = false;
    this.hooks.onConnection?.("connecting");
    const sock = this.factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.retries = 0;
    };
    sock.onmessage = (ev) => this.handleMessage(String(ev.data));
    sock.onerror = () => {
      this.hooks.onBanner?.("connection error");
    };
    sock.onclose = () => {
      this.socket = null;
      this.failPending("connection closed");
      this.hooks.onConnection?.("disconnected");
      if (!this.closed) this.scheduleReconnect();
    };
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.failPending("client closed");
    this.socket?.close();
    this.socket = null;
  }

  get live(): boolean {
    return this.socket !== null;
  }

  /** Send a command; resolves with the matching ack (by id). */
  command(name: CommandName, args: Record<string, unknown> = {}): Promise<AckMessage> {
    if (this.socket === null) {
      return Promise.reject(new Error("not connected"));
    }
    const id = this.nextId++;
    const cmd = makeCommand(name, args, id);
    this.sent.push(cmd);
    this.socket.send(JSON.stringify(cmd));
    return new Promise((resolve) => this.pending.set(id, resolve));
  }

  private handleMessage(text: string): void {
    let msg;
    try {
      msg = parseServerMessage(text);
    } catch {
      this.hooks.onBanner?.("garbled message from service");
      return;
    }
    if (msg.kind === "hello") {
      this.hooks.onConnection?.("live");
      this.hooks.onHello?.(msg);
    } else if (msg.kind === "state") {
      this.hooks.onState?.(msg);
    } else {
      if (msg.id !== undefined && this.pending.has(msg.id)) {
        const resolve = this.pending.get(msg.id)!;
        this.pending.delete(msg.id);
        resolve(msg);
      }
      this.hooks.onAck?.(msg);
    }
  }

  private failPending(reason: string): void {
    for (const [, resolve] of this.pending) {
      resolve({ v: "v1", kind: "ack", ok: false,
                error: { type: "connection", message: reason } });
    }
    this.pending.clear();
  }

  private scheduleReconnect(): void {
    const delay = BACKOFF_MS[Math.min(this.retries, BACKOFF_MS.length - 1)];
    this.retries += 1;
    this.hooks.onBanner?.(`reconnecting in ${delay / 1000} s`);
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      if (!this.closed) this.connect();
    }, delay);
  }
}
