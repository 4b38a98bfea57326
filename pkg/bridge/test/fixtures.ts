import { encodeHeightfield } from "../src/heightfield.js";
import { HelloMessage, NUM_JOINTS } from "../src/messages.js";

export function flatTerrainBase64(size = 3, resolution = 1.0): string {
  return encodeHeightfield(size, size, resolution, new Array(size * size).fill(0)).toString("base64");
}

export function makeHello(overrides: Partial<HelloMessage> = {}): HelloMessage {
  const joints = Array.from({ length: NUM_JOINTS }, (_, i) => ({
    name: `joint_${i}`,
    default: i % 3 === 0 ? 0.1 : i % 3 === 1 ? 0.8 : -1.5,
    lower: -2.8,
    upper: 3.5,
    torque_limit: 25,
  }));
  return {
    type: "HELLO",
    protocol_version: 1,
    robot: { name: "quad12", joints },
    terrain: {
      encoding: "rghf+base64",
      data: flatTerrainBase64(),
      origin: [0, 0],
      spawn: [1, 1],
      kind: "flat",
      difficulty: 0.5,
    },
    dr: { friction: 1.0, control_latency: 0 },
    seed: 7,
    sim: {
      control_hz: 50,
      physics_hz: 200,
      kp: 20,
      kd: 0.5,
      action_clip: 4.8,
      base_height: 0.38,
    },
    ...overrides,
  };
}
