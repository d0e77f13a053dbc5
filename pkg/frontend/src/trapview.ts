// Side-view canvas: the camera's y-z plane with the electrode plane at
// the bottom, the AC null as a dashed overlay, and one dot per particle
// from the latest state message.

import type { StateMessage } from "./protocol.js";

const Z_SPAN_MM = 60;       // view half-width along the trap axis
const Y_MAX_MM = 12;

export function drawTrapView(ctx: CanvasRenderingContext2D, w: number,
                             h: number, state: StateMessage | null,
                             yNullMm: number | null): void {
  ctx.clearRect(0, 0, w, h);
  const zImage = (zMm: number) => (zMm + Z_SPAN_MM) / (2 * Z_SPAN_MM) * w;
  const yImage = (yMm: number) => h - 14 - (yMm / Y_MAX_MM) * (h - 28);

  // electrode plane
  ctx.fillStyle = "#3d4854";
  ctx.fillRect(0, yImage(0), w, h - yImage(0));
  ctx.fillStyle = "#9aa5b1";
  ctx.font = "10px sans-serif";
  ctx.fillText("electrode plane", 8, yImage(0) + 12);

  if (yNullMm !== null) {
    ctx.strokeStyle = "#e4b363";
    ctx.setLineDash([6, 5]);
    ctx.beginPath();
    ctx.moveTo(0, yImage(yNullMm));
    ctx.lineTo(w, yImage(yNullMm));
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = "#e4b363";
    ctx.fillText(`AC null ${yNullMm.toFixed(2)} mm`, w - 110, yImage(yNullMm) - 5);
  }

  if (state !== null) {
    ctx.fillStyle = "#53d28c";
    for (const [, , yMm, zMm] of state.particles) {
      ctx.beginPath();
      ctx.arc(zImage(zMm), yImage(yMm), 3.2, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
