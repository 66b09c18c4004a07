export interface Pose {
  location: [number, number, number];
  azimuth: number;
  up: [number, number, number];
}

/** Crop window into the panorama: yaw/pitch in degrees, square pixels. */
export interface ViewWindow {
  yaw: number;
  pitch: number;
  fov: number;
  w: number;
  h: number;
}

export interface Pair {
  u: number;
  v: number;
  world: [number, number, number];
}

export interface SessionDoc {
  pano_id: string;
  revision: number;
  pose: Pose;
  pano: { width: number; height: number };
  pairs: Pair[];
}

export interface ViewpointSummary {
  pano_id: string;
  pose: Pose;
  revision: number;
  n_pairs: number;
}

export interface SnapResult {
  snapped: boolean;
  vertex_index?: number;
  world?: [number, number, number];
  pano_uv?: [number, number];
}

export interface OptimizeResult {
  revision: number;
  pose: Pose;
  residuals_deg: number[];
  median_deg: number;
  converged: boolean;
  iterations: number;
}

export interface MeshRegion {
  vertices: [number, number, number][];
  polygons: number[][];
  tags: string[];
  segment_ids: number[];
}

export type Vec3 = [number, number, number];
