// Session view model.  Pure data plus small reducers so the render loop
// and the tests share one code path.  Invariants: displayed voltages are
// always the ones from the latest StateMessage (never the slider's
// optimistic value), and chart points come only from StateMessages.

import type { AckMessage, CommandMessage, HelloMessage, StateMessage } from "./protocol.js";

export interface ChartPoint {
  t: number;
  v: number;              // central DC at the sample, V
  yMm: number | null;
  alphaMm: number | null;
}

export type Connection = "disconnected" | "connecting" | "live";

export interface UiSessionView {
  connection: Connection;
  hello: HelloMessage | null;
  lastState: StateMessage | null;
  commandHistory: CommandMessage[];
  ackHistory: AckMessage[];
  chart: ChartPoint[];
  banner: string | null;
}

export const CHART_CAPACITY = 3000;

export function emptyView(): UiSessionView {
  return {
    connection: "disconnected",
    hello: null,
    lastState: null,
    commandHistory: [],
    ackHistory: [],
    chart: [],
    banner: null,
  };
}

export function chartPointOf(state: StateMessage): ChartPoint {
  return {
    t: state.t,
    v: state.voltages.central,
    yMm: state.derived.y_mean_mm,
    alphaMm: state.derived.alpha_mm,
  };
}

export function applyState(view: UiSessionView, state: StateMessage): void {
  view.lastState = state;
  view.chart.push(chartPointOf(state));
  if (view.chart.length > CHART_CAPACITY) {
    view.chart.splice(0, view.chart.length - CHART_CAPACITY);
  }
}

export function applyHello(view: UiSessionView, hello: HelloMessage): void {
  view.hello = hello;
  view.connection = "live";
  view.banner = null;
}

export function recordCommand(view: UiSessionView, cmd: CommandMessage): void {
  view.commandHistory.push(cmd);
}

export function recordAck(view: UiSessionView, ack: AckMessage): void {
  view.ackHistory.push(ack);
}

// Fold a sequence of state dicts (live stream or replayed log) into the
// chart buffer a fresh view would show; used by log playback and by the
// replay-equality test.
export function chartFromStates(states: StateMessage[]): ChartPoint[] {
  const view = emptyView();
  for (const s of states) applyState(view, s);
  return view.chart;
}
