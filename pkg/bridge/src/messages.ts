// Wire message shapes and validation. Hand-rolled guards keep the adapter
// dependency-free; anything malformed is answered with an ERROR frame.

export const PROTOCOL_VERSION = 1;
export const NUM_JOINTS = 12;
export const NUM_FEET = 4;

export interface JointSpec {
  name: string;
  default: number;
  lower: number;
  upper: number;
  torque_limit: number;
}

export interface HelloMessage {
  type: "HELLO";
  protocol_version: number;
  robot: { name?: string; soft_limit_fraction?: number; joints: JointSpec[] };
  terrain: {
    encoding: string;
    data: string;
    origin: [number, number];
    spawn: [number, number];
    kind?: string | null;
    difficulty?: number | null;
  };
  dr: Record<string, unknown> & { control_latency?: number };
  seed: number;
  sim: {
    control_hz: number;
    physics_hz: number;
    kp: number;
    kd: number;
    action_clip: number;
    base_height: number;
  };
}

export interface StepMessage {
  type: "STEP";
  action: number[];
}

export interface WireState {
  pos: number[];
  quat: number[];
  lin_vel: number[];
  ang_vel: number[];
  q: number[];
  dq: number[];
  tau: number[];
  contacts: boolean[];
  g_proj: number[];
}

export interface ResetAck {
  type: "RESET_ACK";
  protocol_version: number;
  state: WireState;
}

export interface StateMessage {
  type: "STATE";
  state: WireState;
  done: boolean;
}

export interface DoneMessage {
  type: "DONE";
  reason: string;
}

export interface ErrorMessage {
  type: "ERROR";
  code: string;
  message: string;
}

export type Outbound = ResetAck | StateMessage | DoneMessage | ErrorMessage;

function isFiniteArray(value: unknown, length: number): value is number[] {
  return (
    Array.isArray(value) &&
    value.length === length &&
    value.every((v) => typeof v === "number" && Number.isFinite(v))
  );
}

export function errorFrame(code: string, message: string): ErrorMessage {
  return { type: "ERROR", code, message };
}

export function validateHello(value: unknown): { ok: true; hello: HelloMessage } | { ok: false; error: string } {
  const doc = value as Partial<HelloMessage>;
  if (doc.type !== "HELLO") return { ok: false, error: "not a HELLO" };
  if (doc.protocol_version !== PROTOCOL_VERSION) {
    return { ok: false, error: `unsupported protocol version ${String(doc.protocol_version)}` };
  }
  const joints = doc.robot?.joints;
  if (!Array.isArray(joints) || joints.length !== NUM_JOINTS) {
    return { ok: false, error: `robot must have ${NUM_JOINTS} joints` };
  }
  for (const j of joints) {
    if (
      typeof j.name !== "string" ||
      ![j.default, j.lower, j.upper, j.torque_limit].every((v) => typeof v === "number" && Number.isFinite(v))
    ) {
      return { ok: false, error: "malformed joint entry" };
    }
  }
  const terrain = doc.terrain;
  if (!terrain || terrain.encoding !== "rghf+base64" || typeof terrain.data !== "string") {
    return { ok: false, error: "terrain must be rghf+base64" };
  }
  if (!isFiniteArray(terrain.spawn, 2) || !isFiniteArray(terrain.origin, 2)) {
    return { ok: false, error: "terrain spawn/origin must be [x, y]" };
  }
  const sim = doc.sim;
  if (
    !sim ||
    ![sim.control_hz, sim.physics_hz, sim.kp, sim.kd, sim.action_clip, sim.base_height].every(
      (v) => typeof v === "number" && Number.isFinite(v) && v > 0,
    )
  ) {
    return { ok: false, error: "malformed sim parameters" };
  }
  if (sim.physics_hz % sim.control_hz !== 0) {
    return { ok: false, error: "physics_hz must be divisible by control_hz" };
  }
  if (typeof doc.seed !== "number" || !Number.isFinite(doc.seed)) {
    return { ok: false, error: "seed must be a number" };
  }
  return { ok: true, hello: doc as HelloMessage };
}

export function validateStep(value: unknown): { ok: true; action: number[] } | { ok: false; error: string } {
  const doc = value as Partial<StepMessage>;
  if (doc.type !== "STEP") return { ok: false, error: "not a STEP" };
  if (!isFiniteArray(doc.action, NUM_JOINTS)) {
    return { ok: false, error: `action must be ${NUM_JOINTS} finite numbers` };
  }
  return { ok: true, action: doc.action };
}

/** Enforce the robot state invariants before a frame leaves the adapter. */
export function validateWireState(state: WireState): string | null {
  const widths: Array<[keyof WireState, number]> = [
    ["pos", 3],
    ["quat", 4],
    ["lin_vel", 3],
    ["ang_vel", 3],
    ["q", NUM_JOINTS],
    ["dq", NUM_JOINTS],
    ["tau", NUM_JOINTS],
    ["g_proj", 3],
  ];
  for (const [field, width] of widths) {
    if (!isFiniteArray(state[field], width)) {
      return `${field} must be ${width} finite numbers`;
    }
  }
  if (!Array.isArray(state.contacts) || state.contacts.length !== NUM_FEET) {
    return `contacts must be ${NUM_FEET} booleans`;
  }
  const qn = Math.hypot(...state.quat);
  if (Math.abs(qn - 1) > 1e-6) return "quaternion is not normalized";
  const gn = Math.hypot(...state.g_proj);
  if (Math.abs(gn - 1) > 1e-6) return "projected gravity is not a unit vector";
  return null;
}
