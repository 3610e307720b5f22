/** Nearest-point-to-ray picking for calyx selection. */

import type { Vec3 } from "./types.js";

export interface PickHit {
  /** full-cloud index of the picked point */
  index: number;
  /** perpendicular distance from the point to the ray */
  rayDistance: number;
  /** distance along the ray of the closest approach */
  t: number;
}

/**
 * Pick the candidate point nearest to the ray (smallest perpendicular
 * distance), ignoring points behind the origin or farther from the ray than
 * `maxDistance`. Ties prefer the point closest to the camera.
 */
export function pickNearestAlongRay(
  origin: Vec3,
  direction: Vec3,
  candidates: Iterable<number>,
  positionOf: (fullIndex: number) => Vec3 | undefined,
  maxDistance: number,
): PickHit | null {
  const len = Math.hypot(direction[0], direction[1], direction[2]);
  if (len === 0) return null;
  const d: Vec3 = [direction[0] / len, direction[1] / len, direction[2] / len];

  let best: PickHit | null = null;
  for (const index of candidates) {
    const p = positionOf(index);
    if (p === undefined) continue;
    const rx = p[0] - origin[0];
    const ry = p[1] - origin[1];
    const rz = p[2] - origin[2];
    const t = rx * d[0] + ry * d[1] + rz * d[2];
    if (t <= 0) continue;
    const cx = rx - t * d[0];
    const cy = ry - t * d[1];
    const cz = rz - t * d[2];
    const dist = Math.hypot(cx, cy, cz);
    if (dist > maxDistance) continue;
    if (
      best === null ||
      dist < best.rayDistance ||
      (dist === best.rayDistance && t < best.t)
    ) {
      best = { index, rayDistance: dist, t };
    }
  }
  return best;
}
