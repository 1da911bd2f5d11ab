// Canvas rendering for the cross-section plot and the history sparkline.

import { ProfilePayload } from "./api.js";
import { HistoryPoint } from "./store.js";

export function drawProfile(canvas: HTMLCanvasElement, profile: ProfilePayload | null): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, w, h);
  if (!profile || profile.counts.length === 0) return;

  const xs = profile.x_meters;
  const ys = profile.counts;
  const fit = profile.fit_counts;
  let lo = Math.min(...ys);
  let hi = Math.max(...ys);
  if (fit) {
    lo = Math.min(lo, ...fit);
    hi = Math.max(hi, ...fit);
  }
  if (hi === lo) hi = lo + 1;
  const pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  const x0 = xs[0];
  const x1 = xs[xs.length - 1];
  const px = (x: number) => ((x - x0) / (x1 - x0)) * (w - 12) + 6;
  const py = (y: number) => h - 6 - ((y - lo) / (hi - lo)) * (h - 12);

  // zero line
  ctx.strokeStyle = "#2a3442";
  ctx.beginPath();
  ctx.moveTo(0, py(0));
  ctx.lineTo(w, py(0));
  ctx.stroke();

  ctx.strokeStyle = "#7fd0ff";
  ctx.lineWidth = 1;
  ctx.beginPath();
  xs.forEach((x, i) => {
    i === 0 ? ctx.moveTo(px(x), py(ys[i])) : ctx.lineTo(px(x), py(ys[i]));
  });
  ctx.stroke();

  if (fit) {
    ctx.strokeStyle = "#ffb454";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    xs.forEach((x, i) => {
      i === 0 ? ctx.moveTo(px(x), py(fit[i])) : ctx.lineTo(px(x), py(fit[i]));
    });
    ctx.stroke();
  }
}

export function drawSparkline(canvas: HTMLCanvasElement, history: HistoryPoint[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, w, h);
  // plot separation when resolved, feature width otherwise
  const values = history.map((p) => p.separation_m ?? p.width_m ?? null);
  const usable = values.filter((v): v is number => v !== null);
  if (usable.length < 2) return;
  const hi = Math.max(...usable);
  const lo = 0;
  const px = (i: number) => (i / (values.length - 1)) * (w - 8) + 4;
  const py = (v: number) => h - 4 - ((v - lo) / (hi - lo || 1)) * (h - 8);
  ctx.strokeStyle = "#9ef0a0";
  ctx.beginPath();
  let started = false;
  values.forEach((v, i) => {
    if (v === null) return;
    if (!started) {
      ctx.moveTo(px(i), py(v));
      started = true;
    } else {
      ctx.lineTo(px(i), py(v));
    }
  });
  ctx.stroke();
}
