/**
 * Wire protocol shared with the session server: one JSON object per
 * WebSocket text message.  Poses travel as a 3x3 rotation matrix plus a
 * translation triple, numbers in double precision.
 */

export type Vec3 = [number, number, number];
export type Mat3 = [Vec3, Vec3, Vec3];

export interface WirePose {
  rotation: Mat3;
  translation: Vec3;
}

export interface StateFrame {
  type: "state_frame";
  tick: number;
  sim_pose: WirePose;
  energy: number;
  force: Vec3;
  torque: Vec3;
  servo_rate_estimate: number;
  flagged?: string;
}

export interface ProxyUpdate {
  type: "proxy_update";
  tick: number;
  pose: WirePose;
}

export interface SessionConfigMsg {
  type: "session_config";
  tick_rate?: number;
  gamma?: number;
  lockstep?: boolean;
  coupling?: { k_t?: number; k_r?: number; c_t?: number; c_r?: number };
}

export interface ErrorMsg {
  type: "error";
  code: string;
  text: string;
}

export type ServerMessage = StateFrame | ErrorMsg;

export const identityPose = (): WirePose => ({
  rotation: [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
  ],
  translation: [0, 0, 0],
});

export function clonePose(p: WirePose): WirePose {
  return {
    rotation: p.rotation.map((row) => [...row]) as Mat3,
    translation: [...p.translation] as Vec3,
  };
}

export function encodeMessage(msg: ProxyUpdate | SessionConfigMsg): string {
  return JSON.stringify(msg);
}

export function decodeServerMessage(text: string): ServerMessage {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch {
    throw new Error(`not valid JSON: ${text.slice(0, 80)}`);
  }
  const msg = obj as Record<string, unknown>;
  if (msg === null || typeof msg !== "object" || typeof msg.type !== "string") {
    throw new Error("message must be an object with a type");
  }
  if (msg.type === "state_frame") {
    const f = msg as unknown as StateFrame;
    if (
      typeof f.tick !== "number" ||
      !f.sim_pose ||
      !Array.isArray(f.force) ||
      f.force.length !== 3
    ) {
      throw new Error("malformed state_frame");
    }
    return f;
  }
  if (msg.type === "error") {
    return msg as unknown as ErrorMsg;
  }
  throw new Error(`unexpected server message type ${msg.type}`);
}

/** Rotate a vector by the pose rotation (column convention: R * v). */
export function rotate(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
    m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
    m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
  ];
}

/** Rotation about a unit axis by angle (Rodrigues), as a Mat3. */
export function axisAngleMatrix(axis: Vec3, angle: number): Mat3 {
  const [x, y, z] = axis;
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  const t = 1 - c;
  return [
    [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
    [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
    [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
  ];
}

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: number[][] = [
    [0, 0, 0],
    [0, 0, 0],
    [0, 0, 0],
  ];
  for (let i = 0; i < 3; i++)
    for (let j = 0; j < 3; j++)
      for (let k = 0; k < 3; k++) out[i][j] += a[i][k] * b[k][j];
  return out as Mat3;
}
