// Panel wiring: one LabClient, one view model, a render loop, and DOM
// handlers that each map to exactly one service command.

import { LabClient } from "./client.js";
import { drawVoltageChart } from "./charts.js";
import {
  CommandName, PATTERN_NAMES, SEGMENT_LEVELS, SEGMENT_NAMES, StateMessage,
  parseLog,
} from "./protocol.js";
import { drawTrapView } from "./trapview.js";
import {
  checkCentralV, checkEndcapV, checkGammaRange, checkLoadCount, checkSpeed,
  checkVariacRms,
} from "./validation.js";
import {
  UiSessionView, applyHello, applyState, chartFromStates, emptyView,
  recordAck, recordCommand,
} from "./view.js";
import { SweepWizard } from "./wizard.js";

const view: UiSessionView = emptyView();
let client: LabClient | null = null;
let wizard: SweepWizard | null = null;
let playbackChart: ReturnType<typeof chartFromStates> | null = null;

const $ = (id: string) => document.getElementById(id)!;
const input = (id: string) => $(id) as HTMLInputElement;

function banner(text: string | null): void {
  view.banner = text;
  const el = $("banner");
  el.textContent = text ?? "";
  el.style.display = text ? "block" : "none";
}

function connect(): void {
  client?.close();
  client = new LabClient(input("endpoint").value, {
    onHello: (h) => { applyHello(view, h); banner(null); },
    onState: (s) => { applyState(view, s); wizard?.handleState(s); },
    onAck: (a) => recordAck(view, a),
    onConnection: (c) => {
      view.connection = c;
      $("conn-state").textContent = c;
    },
    onBanner: banner,
  });
  client.connect();
}

function send(name: CommandName, args: Record<string, unknown>,
              errorSpan?: string): void {
  if (client === null || !client.live) {
    banner("not connected");
    return;
  }
  // client.command journals every message it sends; mirror into the view
  recordCommand(view, { v: "v1", kind: "command", name, args });
  client.command(name, args).then((ack) => {
    if (!ack.ok && errorSpan) {
      $(errorSpan).textContent = ack.error?.message ?? "rejected";
    }
  });
}

function slider(idBase: string, name: CommandName, argKey: string,
                check: (v: number) => string | null): void {
  const apply = () => {
    const value = parseFloat(input(idBase).value);
    const err = Number.isFinite(value) ? check(value) : "not a number";
    $(idBase + "-err").textContent = err ?? "";
    if (err === null) send(name, { [argKey]: value }, idBase + "-err");
  };
  $(idBase + "-apply").addEventListener("click", apply);
}

function setupControls(): void {
  $("connect").addEventListener("click", connect);
  slider("variac", "set_variac_rms", "value_v", checkVariacRms);
  slider("central", "set_central_v", "value_v", checkCentralV);
  slider("endcap", "set_endcap_v", "value_v", checkEndcapV);
  slider("speed", "set_speed", "factor", checkSpeed);

  const patterns = $("patterns");
  for (const p of PATTERN_NAMES) {
    const b = document.createElement("button");
    b.textContent = p;
    b.addEventListener("click", () => send("apply_pattern", { name: p }));
    patterns.appendChild(b);
  }
  const manual = $("manual-segments");
  for (const s of SEGMENT_NAMES) {
    const sel = document.createElement("select");
    sel.id = `seg-${s}`;
    for (const level of SEGMENT_LEVELS) {
      const o = document.createElement("option");
      o.value = level;
      o.textContent = `${s}: ${level}`;
      sel.appendChild(o);
    }
    sel.value = "off";
    manual.appendChild(sel);
  }
  $("manual-apply").addEventListener("click", () => {
    const levels: Record<string, string> = {};
    for (const s of SEGMENT_NAMES) {
      levels[s] = (document.getElementById(`seg-${s}`) as HTMLSelectElement).value;
    }
    send("apply_pattern", { levels });
  });

  $("load").addEventListener("click", () => {
    const count = parseInt(input("load-count").value, 10);
    const have = view.lastState?.particles.length ?? 0;
    const lo = parseFloat(input("gamma-lo").value);
    const hi = parseFloat(input("gamma-hi").value);
    const err = checkLoadCount(count, have) ?? checkGammaRange(lo, hi);
    $("load-err").textContent = err ?? "";
    if (err === null) {
      send("load_particles", { count, gamma_range: [lo, hi] }, "load-err");
    }
  });
  $("pause").addEventListener("click", () => send("pause", {}));
  $("resume").addEventListener("click", () => send("resume", {}));
  $("reset").addEventListener("click", () => send("reset", {}));
}

function setupWizard(): void {
  $("wiz-start").addEventListener("click", () => {
    if (client === null) { banner("not connected"); return; }
    wizard = new SweepWizard(client, {
      startV: parseFloat(input("wiz-v0").value),
      stopV: parseFloat(input("wiz-v1").value),
      stepV: -5.0,
      settleStates: parseInt(input("wiz-settle").value, 10),
    });
    wizard.onChange = renderWizard;
    wizard.start();
  });
  $("wiz-step").addEventListener("click", () => {
    void wizard?.confirmStep();
  });
  $("wiz-cancel").addEventListener("click", () => wizard?.cancel());
  $("wiz-export").addEventListener("click", () => {
    if (wizard === null || wizard.rows.length === 0) return;
    const blob = new Blob([wizard.exportCsv()], { type: "text/csv" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "sweep.csv";
    a.click();
    URL.revokeObjectURL(a.href);
  });
  input("fit-json").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    try {
      const fit = JSON.parse(await file.text());
      $("wiz-gamma").textContent =
        `gamma = ${fit.gamma} +/- ${fit.sigma} (chi2/dof ${fit.chi2_reduced})`;
    } catch {
      $("wiz-gamma").textContent = "unreadable fit file";
    }
  });
}

function renderWizard(): void {
  if (wizard === null) return;
  $("wiz-status").textContent = wizard.status;
  const mark = wizard.markedStepV();
  $("wiz-mark").textContent = mark === null ? "" :
    `minimal amplitude at ${mark.toFixed(1)} V`;
}

function setupPlayback(): void {
  input("log-file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    try {
      const lines = parseLog(await file.text());
      const states = lines.filter((l) => l.kind === "state");
      playbackChart = chartFromStates(states as unknown as StateMessage[]);
      banner(`playing back ${file.name} (${states.length} states)`);
    } catch (e) {
      banner(`log rejected: ${(e as Error).message}`);
    }
  });
  $("live-view").addEventListener("click", () => {
    playbackChart = null;
    banner(null);
  });
}

function renderLoop(): void {
  const trap = $("trap") as HTMLCanvasElement;
  const top = $("chart-y") as HTMLCanvasElement;
  const bottom = $("chart-alpha") as HTMLCanvasElement;
  const draw = () => {
    const yNull = view.hello?.y_null_mm ?? null;
    drawTrapView(trap.getContext("2d")!, trap.width, trap.height,
                 view.lastState, yNull);
    const chart = playbackChart ?? view.chart;
    const mark = wizard?.markedStepV() ?? null;
    drawVoltageChart(top.getContext("2d")!, top.width, top.height,
                     chart, "yMm", "height [mm]", yNull, mark);
    drawVoltageChart(bottom.getContext("2d")!, bottom.width, bottom.height,
                     chart, "alphaMm", "amplitude [mm]", null, mark);
    renderReadouts();
    requestAnimationFrame(draw);
  };
  requestAnimationFrame(draw);
}

function renderReadouts(): void {
  const s = view.lastState;
  if (s === null) return;
  $("readout").textContent =
    `t=${s.t.toFixed(2)} s  Variac ${s.voltages.variac_rms.toFixed(1)} V rms ` +
    `(trap ${s.voltages.trap_rms.toFixed(0)} V rms)  ` +
    `central ${s.voltages.central.toFixed(1)} V  ` +
    `endcap ${s.voltages.endcap.toFixed(1)} V  ` +
    `particles ${s.particles.length}`;
  const hist = (client?.sent ?? []).slice(-8).map(
    (c) => `${c.name} ${JSON.stringify(c.args)}`);
  $("history").textContent = hist.join("\n");
}

setupControls();
setupWizard();
setupPlayback();
renderLoop();
