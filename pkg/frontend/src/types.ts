/** Wire types for the inbetween HTTP service.
 *
 * All positions are centimeters; rotations are 6D two-axis (the
 * rotation matrix's up and forward columns, identity =
 * [0,1,0, 0,0,1]); durations are frames, start included and target
 * excluded.
 */

export type Vec3 = [number, number, number];
export type Rot6 = [number, number, number, number, number, number];

export interface Pose {
  hip_position_cm: Vec3;
  rotations_6d: Rot6[];
}

export interface FrameRecord {
  positions_cm: Vec3[];
  rotations_6d: Rot6[];
}

export interface SkeletonInfo {
  units: Record<string, string>;
  joint_count: number;
  names: string[];
  parents: number[];
  offsets_cm: Vec3[];
  frame_rate_hz: number;
  rest_pose: Pose;
  rest_positions_cm: Vec3[];
}

export interface GenerateRequest {
  start_pose: Pose;
  target_pose: Pose;
  duration_frames: number;
  seed?: number;
  timing?: boolean;
}

export interface GenerateResponse {
  units: Record<string, string>;
  frame_rate_hz: number;
  frame_count: number;
  extrapolation_flag: boolean;
  per_frame_ms: number | null;
  frames: FrameRecord[];
}

export interface ChainRequest {
  session?: string;
  start_pose?: Pose;
  target_pose: Pose;
  duration_frames: number;
  seed?: number;
  timing?: boolean;
}

export interface ChainResponse extends GenerateResponse {
  session: string;
  segment_index: number;
}

export interface HealthResponse {
  status: string;
  version: string;
  bundle_loaded: boolean;
}
