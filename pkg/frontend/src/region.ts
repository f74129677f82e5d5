// Drag rectangle -> clamped integer region request.

import type { Region } from './api.js';

export interface DragRect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/** Clamp a viewport drag to the image bounds; zero-area drags yield null. */
export function clampRegion(drag: DragRect, imageW: number, imageH: number): Region | null {
  const x = Math.max(0, Math.min(Math.floor(Math.min(drag.x0, drag.x1)), imageW));
  const y = Math.max(0, Math.min(Math.floor(Math.min(drag.y0, drag.y1)), imageH));
  const x2 = Math.min(imageW, Math.max(Math.ceil(Math.max(drag.x0, drag.x1)), 0));
  const y2 = Math.min(imageH, Math.max(Math.ceil(Math.max(drag.y0, drag.y1)), 0));
  const w = x2 - x;
  const h = y2 - y;
  if (w < 1 || h < 1) return null;
  return { x, y, w, h };
}

export function fullRegion(imageW: number, imageH: number): Region {
  return { x: 0, y: 0, w: imageW, h: imageH };
}
