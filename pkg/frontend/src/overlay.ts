// Label overlay rendering: run-length decoding and a stable cycling
// palette. Labels come exclusively from the server.

import type { RunLengthLabels } from './api.js';

export function decodeRuns(payload: RunLengthLabels): Int32Array {
  const [h, w] = payload.dims;
  const out = new Int32Array(h * w);
  for (const [start, length, label] of payload.runs) {
    if (start < 0 || start + length > out.length) {
      throw new Error(`run [${start}, ${length}] outside ${h}x${w} map`);
    }
    out.fill(label, start, start + length);
  }
  return out;
}

// Golden-angle hue cycling: nearby labels get clearly distinct colors and
// the same label always maps to the same color.
export function labelColor(label: number): [number, number, number] {
  const hue = (label * 137.508) % 360;
  return hslToRgb(hue, 0.65, 0.55);
}

function hslToRgb(h: number, s: number, l: number): [number, number, number] {
  const c = (1 - Math.abs(2 * l - 1)) * s;
  const hp = h / 60;
  const x = c * (1 - Math.abs((hp % 2) - 1));
  let rgb: [number, number, number];
  if (hp < 1) rgb = [c, x, 0];
  else if (hp < 2) rgb = [x, c, 0];
  else if (hp < 3) rgb = [0, c, x];
  else if (hp < 4) rgb = [0, x, c];
  else if (hp < 5) rgb = [x, 0, c];
  else rgb = [c, 0, x];
  const m = l - c / 2;
  return [
    Math.round((rgb[0] + m) * 255),
    Math.round((rgb[1] + m) * 255),
    Math.round((rgb[2] + m) * 255),
  ];
}

export function renderOverlayRgba(
  payload: RunLengthLabels,
  alpha = 160
): Uint8ClampedArray<ArrayBuffer> {
  const labels = decodeRuns(payload);
  const out = new Uint8ClampedArray(new ArrayBuffer(labels.length * 4));
  for (let i = 0; i < labels.length; i++) {
    const label = labels[i];
    if (label === 0) continue; // background stays transparent
    const [r, g, b] = labelColor(label);
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = alpha;
  }
  return out;
}
