/** Successive-refinement point selection with an undo history.
 *
 * A fruit is isolated the way the manual workflow does it: start from the
 * whole cloud, then repeatedly intersect the current selection with an
 * oriented crop box drawn from different viewpoints until only fruit points
 * remain. Every refinement pushes the previous selection onto an undo stack.
 */

import type { Vec3 } from "./types.js";

export interface OrientedCropBox {
  center: Vec3;
  halfExtents: Vec3;
  /** box axes as rows (orthonormal); world point p is inside when
   *  |axes . (p - center)| <= halfExtents componentwise */
  axes: [Vec3, Vec3, Vec3];
}

export const UNDO_DEPTH = 32;

export function axisAlignedCropBox(min: Vec3, max: Vec3): OrientedCropBox {
  return {
    center: [(min[0] + max[0]) / 2, (min[1] + max[1]) / 2, (min[2] + max[2]) / 2],
    halfExtents: [(max[0] - min[0]) / 2, (max[1] - min[1]) / 2, (max[2] - min[2]) / 2],
    axes: [
      [1, 0, 0],
      [0, 1, 0],
      [0, 0, 1],
    ],
  };
}

export function pointInBox(p: Vec3, box: OrientedCropBox): boolean {
  const dx = p[0] - box.center[0];
  const dy = p[1] - box.center[1];
  const dz = p[2] - box.center[2];
  for (let k = 0; k < 3; k++) {
    const a = box.axes[k];
    const d = a[0] * dx + a[1] * dy + a[2] * dz;
    if (Math.abs(d) > box.halfExtents[k]) return false;
  }
  return true;
}

export class SelectionState {
  private current: Set<number>;
  private history: Set<number>[] = [];

  /** @param initial full-cloud indices the selection starts from */
  constructor(initial: Iterable<number>) {
    this.current = new Set(initial);
  }

  get size(): number {
    return this.current.size;
  }

  get undoDepth(): number {
    return this.history.length;
  }

  has(fullIndex: number): boolean {
    return this.current.has(fullIndex);
  }

  indices(): number[] {
    return [...this.current].sort((a, b) => a - b);
  }

  /**
   * Intersect the selection with a crop box. `positionOf` resolves a selected
   * full-cloud index to its 3D position (unloaded points cannot be tested and
   * are dropped from the selection).
   */
  refine(box: OrientedCropBox, positionOf: (fullIndex: number) => Vec3 | undefined): void {
    this.pushHistory();
    const kept = new Set<number>();
    for (const idx of this.current) {
      const p = positionOf(idx);
      if (p !== undefined && pointInBox(p, box)) kept.add(idx);
    }
    this.current = kept;
  }

  /** Replace the selection outright (same undo semantics as refine). */
  replace(indices: Iterable<number>): void {
    this.pushHistory();
    this.current = new Set(indices);
  }

  undo(): boolean {
    const previous = this.history.pop();
    if (previous === undefined) return false;
    this.current = previous;
    return true;
  }

  private pushHistory(): void {
    this.history.push(new Set(this.current));
    if (this.history.length > UNDO_DEPTH) this.history.shift();
  }
}
