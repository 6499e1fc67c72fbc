// Canvas rendering of the overlay model. Only the structural subset of
// CanvasRenderingContext2D used here is required, so tests can pass a
// recording stub instead of a real canvas.

import { OverlayModel } from "./overlay.js";

export interface Canvas2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  stroke(): void;
  fill(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fillText(text: string, x: number, y: number): void;
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  font: string;
}

const TARGET_COLOR = "#3aa0ff";
const MATCHED_COLOR = "#2ecc40";
const ARROW_COLOR = "#ff4136";

export function renderOverlay(
  ctx: Canvas2D,
  model: OverlayModel,
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);

  if (model.targetPolygon) {
    ctx.strokeStyle = model.matched ? MATCHED_COLOR : TARGET_COLOR;
    ctx.lineWidth = 2;
    ctx.beginPath();
    const [first, ...rest] = model.targetPolygon;
    ctx.moveTo(first[0], first[1]);
    for (const [x, y] of rest) ctx.lineTo(x, y);
    ctx.closePath();
    ctx.stroke();
  }

  if (model.detectedOuter) {
    ctx.fillStyle = MATCHED_COLOR;
    for (const [x, y] of model.detectedOuter) {
      ctx.beginPath();
      ctx.arc(x, y, 4, 0, 2 * Math.PI);
      ctx.fill();
    }
  }

  ctx.strokeStyle = ARROW_COLOR;
  ctx.lineWidth = 2;
  for (const arrow of model.arrows) {
    const tipX = arrow.fromX + arrow.dx;
    const tipY = arrow.fromY + arrow.dy;
    ctx.beginPath();
    ctx.moveTo(arrow.fromX, arrow.fromY);
    ctx.lineTo(tipX, tipY);
    ctx.stroke();
    const len = Math.hypot(arrow.dx, arrow.dy);
    if (len > 1) {
      // short arrowhead along the shaft direction
      const ux = arrow.dx / len;
      const uy = arrow.dy / len;
      const size = Math.min(8, len / 3);
      ctx.beginPath();
      ctx.moveTo(tipX, tipY);
      ctx.lineTo(tipX - size * (ux + 0.5 * uy), tipY - size * (uy - 0.5 * ux));
      ctx.moveTo(tipX, tipY);
      ctx.lineTo(tipX - size * (ux - 0.5 * uy), tipY - size * (uy + 0.5 * ux));
      ctx.stroke();
    }
  }

  ctx.fillStyle = "#ffffff";
  ctx.font = "16px sans-serif";
  ctx.fillText(`target ${model.targetIndex ?? "-"}  captured ${model.progressLabel}`, 12, 24);
  ctx.fillText(`distance ${model.distanceLabel}`, 12, 46);
  if (model.phaseBanner) {
    ctx.font = "24px sans-serif";
    ctx.fillText(model.phaseBanner, 12, height - 18);
  }
}
