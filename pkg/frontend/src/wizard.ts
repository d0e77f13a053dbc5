// Guided micromotion sweep: step the central DC down in fixed
// increments (the bench protocol's -5 V), let the trap settle for a few
// stream ticks, and record what the service reports at each step.  The
// wizard only selects among received numbers; the charge-to-mass fit on
// the exported CSV belongs to the command-line pipeline.

import type { LabClient } from "./client.js";
import type { StateMessage } from "./protocol.js";

export interface WizardConfig {
  startV: number;
  stopV: number;          // sweep ends once the next step would pass this
  stepV: number;          // negative; the protocol uses -5 V
  settleStates: number;   // stream messages to wait out per step
}

export interface WizardRow {
  v: number;              // central DC as reported back by the service
  yMm: number;
  alphaMm: number;
}

export type WizardStatus =
  "idle" | "awaiting-confirm" | "settling" | "done" | "cancelled" | "lost";

export class SweepWizard {
  status: WizardStatus = "idle";
  rows: WizardRow[] = [];
  onChange: (() => void) | null = null;

  private vNext = 0;
  private seen = 0;
  private collecting = false;

  constructor(private client: LabClient, private config: WizardConfig) {
    if (config.stepV >= 0) throw new Error("stepV must be negative");
  }

  start(): void {
    this.rows = [];
    this.vNext = this.config.startV;
    this.status = "awaiting-confirm";
    this.notify();
  }

  /** Operator pressed the step button (or the test auto-drives it). */
  async confirmStep(): Promise<void> {
    if (this.status !== "awaiting-confirm") return;
    this.status = "settling";
    this.seen = 0;
    this.notify();
    const ack = await this.client.command("set_central_v",
                                          { value_v: this.vNext });
    if (!ack.ok) {
      this.status = "cancelled";
      this.notify();
      return;
    }
    this.collecting = true;
  }

  cancel(): void {
    if (this.status === "awaiting-confirm" || this.status === "settling") {
      this.status = "cancelled";   // partial rows stay on the chart
      this.collecting = false;
      this.notify();
    }
  }

  /** Wire this to the client's onState hook. */
  handleState(state: StateMessage): void {
    if (!this.collecting) return;
    this.seen += 1;
    if (this.seen < this.config.settleStates) return;
    this.collecting = false;
    const d = state.derived;
    if (d.y_mean_mm === null || d.alpha_mm === null) {
      this.status = "lost";        // trap emptied mid-sweep
      this.notify();
      return;
    }
    this.rows.push({ v: state.voltages.central,
                     yMm: d.y_mean_mm, alphaMm: d.alpha_mm });
    const next = this.vNext + this.config.stepV;
    const pastEnd = this.config.stepV < 0
      ? next < this.config.stopV : next > this.config.stopV;
    if (pastEnd) {
      this.status = "done";
    } else {
      this.vNext = next;
      this.status = "awaiting-confirm";
    }
    this.notify();
  }

  /** Dial setting that read the smallest amplitude (first on ties). */
  markedStepV(): number | null {
    if (this.rows.length === 0) return null;
    let best = 0;
    for (let i = 1; i < this.rows.length; i++) {
      if (this.rows[i].alphaMm < this.rows[best].alphaMm) best = i;
    }
    return this.rows[best].v;
  }

  /**
   * Sweep table in the command-line pipeline's CSV shape.  Stream-derived
   * readings carry the nominal readout sigmas used elsewhere for fits on
   * service data (1e-3 mm height, unweighted amplitude).
   */
  exportCsv(): string {
    const lines = ["voltage_V,height_mm,sigma_height_mm,"
                   + "micromotion_mm,sigma_micromotion_mm"];
    for (const r of this.rows) {
      lines.push(`${r.v},${r.yMm},0.001,${r.alphaMm},1`);
    }
    return lines.join("\n") + "\n";
  }

  private notify(): void {
    this.onChange?.();
  }
}
