import type { Bbox } from "./types.js";

export const MIN_BOX_FRACTION = 0.02;

const clamp01 = (v: number) => Math.min(1, Math.max(0, v));

/** Turn a pointer drag (canvas pixels) into a normalized, clamped box.
 *  Any drag direction is accepted; sub-minimum drags yield null. */
export function dragToBbox(
  startX: number,
  startY: number,
  endX: number,
  endY: number,
  width: number,
  height: number,
  minFraction: number = MIN_BOX_FRACTION,
): Bbox | null {
  const x1 = clamp01(Math.min(startX, endX) / width);
  const x2 = clamp01(Math.max(startX, endX) / width);
  const y1 = clamp01(Math.min(startY, endY) / height);
  const y2 = clamp01(Math.max(startY, endY) / height);
  if (x2 - x1 < minFraction || y2 - y1 < minFraction) return null;
  return [x1, y1, x2, y2];
}

export function isValidBbox(box: Bbox): boolean {
  const [x1, y1, x2, y2] = box;
  return (
    [x1, y1, x2, y2].every((v) => Number.isFinite(v) && v >= 0 && v <= 1) &&
    x1 < x2 &&
    y1 < y2
  );
}
