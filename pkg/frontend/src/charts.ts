// Scrolling height and amplitude charts against central DC, stacked the
// way the bench plots them: height on top with the AC-null line, the
// micromotion vee underneath with a crosshair on the marked minimum.

import type { ChartPoint } from "./view.js";

export interface ChartStyle {
  margin: number;
  axis: string;
  grid: string;
  trace: string;
  nullLine: string;
  crosshair: string;
}

const STYLE: ChartStyle = {
  margin: 34,
  axis: "#9aa5b1",
  grid: "#2a3440",
  trace: "#53d28c",
  nullLine: "#e4b363",
  crosshair: "#e36b6b",
};

interface Extent { lo: number; hi: number; }

function extentOf(values: number[], pad = 0.08): Extent {
  if (values.length === 0) return { lo: 0, hi: 1 };
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (lo === hi) { lo -= 0.5; hi += 0.5; }
  const span = hi - lo;
  return { lo: lo - pad * span, hi: hi + pad * span };
}

function drawFrame(ctx: CanvasRenderingContext2D, w: number, h: number,
                   xLabel: string, yLabel: string): void {
  const m = STYLE.margin;
  ctx.strokeStyle = STYLE.axis;
  ctx.lineWidth = 1;
  ctx.strokeRect(m, m / 2, w - m - 8, h - m - m / 2);
  ctx.fillStyle = STYLE.axis;
  ctx.font = "11px sans-serif";
  ctx.fillText(xLabel, w / 2 - 24, h - 6);
  ctx.save();
  ctx.translate(10, h / 2 + 24);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(yLabel, 0, 0);
  ctx.restore();
}

function mapper(ext: Extent, lo: number, hi: number) {
  return (v: number) => lo + ((v - ext.lo) / (ext.hi - ext.lo)) * (hi - lo);
}

export function drawVoltageChart(
  ctx: CanvasRenderingContext2D, w: number, h: number,
  points: ChartPoint[], field: "yMm" | "alphaMm",
  yLabel: string, yNullMm: number | null, markV: number | null,
): void {
  ctx.clearRect(0, 0, w, h);
  drawFrame(ctx, w, h, "central DC [V]", yLabel);
  const usable = points.filter((p) => p[field] !== null);
  if (usable.length === 0) return;
  const m = STYLE.margin;
  const xs = usable.map((p) => p.v);
  const ys = usable.map((p) => p[field] as number);
  const xImage = mapper(extentOf(xs), m, w - 8);
  const yImage = mapper(extentOf(ys), h - m, m / 2);

  if (yNullMm !== null && field === "yMm") {
    ctx.strokeStyle = STYLE.nullLine;
    ctx.setLineDash([5, 4]);
    ctx.beginPath();
    const yy = yImage(yNullMm);
    ctx.moveTo(m, yy);
    ctx.lineTo(w - 8, yy);
    ctx.stroke();
    ctx.setLineDash([]);
  }

  ctx.strokeStyle = STYLE.trace;
  ctx.lineWidth = 1.4;
  ctx.beginPath();
  usable.forEach((p, i) => {
    const px = xImage(p.v);
    const py = yImage(p[field] as number);
    if (i === 0) ctx.moveTo(px, py); else ctx.lineTo(px, py);
  });
  ctx.stroke();

  if (markV !== null) {
    const px = xImage(markV);
    ctx.strokeStyle = STYLE.crosshair;
    ctx.beginPath();
    ctx.moveTo(px, m / 2);
    ctx.lineTo(px, h - m);
    ctx.stroke();
  }
}
