/** Client-side store of the progressively loaded point cloud.
 *
 * Chunks arrive in any order; each point keeps the index it has in the
 * server's full-resolution cloud, so selections saved back to the server
 * always reference the original data.
 */

import type { PointsChunk, Vec3 } from "./types.js";

export class LoadedCloud {
  /** xyz triples, loaded order */
  readonly positions: number[] = [];
  readonly colors: number[] = [];
  /** loaded index -> full-cloud index */
  readonly fullIndices: number[] = [];
  private readonly loadedByFull = new Map<number, number>();

  addChunk(chunk: PointsChunk): void {
    for (let i = 0; i < chunk.count; i++) {
      const full = chunk.full_indices[i];
      if (this.loadedByFull.has(full)) continue;
      this.loadedByFull.set(full, this.fullIndices.length);
      this.fullIndices.push(full);
      const p = chunk.positions[i];
      const c = chunk.colors[i];
      this.positions.push(p[0], p[1], p[2]);
      this.colors.push(c[0], c[1], c[2]);
    }
  }

  get count(): number {
    return this.fullIndices.length;
  }

  position(loadedIndex: number): Vec3 {
    const o = loadedIndex * 3;
    return [this.positions[o], this.positions[o + 1], this.positions[o + 2]];
  }

  loadedIndexOf(fullIndex: number): number | undefined {
    return this.loadedByFull.get(fullIndex);
  }

  allFullIndices(): number[] {
    return [...this.fullIndices];
  }
}
