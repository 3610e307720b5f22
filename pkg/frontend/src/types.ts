/** Payload types of the annotation server's JSON API. */

export interface SceneMeta {
  point_count: number;
  full_point_count: number;
  chunk_count: number;
  chunk_size: number;
  bounds: { min: [number, number, number]; max: [number, number, number] };
  min_fruit_points: number;
}

export interface PointsChunk {
  chunk: number;
  count: number;
  /** Index of each point in the server's full-resolution cloud. */
  full_indices: number[];
  positions: [number, number, number][];
  colors: [number, number, number][];
}

export interface AnnotationRecord {
  fruit_id: string;
  tree_id: string;
  calyx: [number, number, number] | null;
  points_file?: string;
  point_indices?: number[];
  point_count?: number;
  complete?: boolean;
}

export interface AnnotationUpsert {
  fruit_id: string;
  tree_id: string;
  calyx: [number, number, number];
}

export type Vec3 = [number, number, number];
