// Stub backend: the no-physics loopback used for CI and protocol
// conformance. The base stands at the commanded reference height over the
// decoded terrain while joints follow their position targets through a
// first-order lag; torques come from the PD law sent in HELLO, and the
// control-latency randomization is honored through a FIFO quantized to
// control steps. Fully deterministic for a fixed seed by construction.
//
// A real adapter (e.g. around a MuJoCo-class engine) implements this same
// Backend interface: scene setup from HELLO, one state per STEP.

import { Heightfield } from "./heightfield.js";
import { HelloMessage, NUM_FEET, NUM_JOINTS, WireState } from "./messages.js";

export interface Backend {
  reset(hello: HelloMessage): WireState;
  step(action: number[]): WireState | { done: string };
}

export class StubBackend implements Backend {
  private defaultPose = new Float64Array(NUM_JOINTS);
  private q = new Float64Array(NUM_JOINTS);
  private dq = new Float64Array(NUM_JOINTS);
  private tau = new Float64Array(NUM_JOINTS);
  private pending: number[][] = [];
  private latencySteps = 0;
  private kp = 20;
  private kd = 0.5;
  private actionClip = 4.8;
  private controlDt = 0.02;
  private decay = Math.exp(-0.02 / 0.08);
  private basePos: [number, number, number] = [0, 0, 0];
  private steps = 0;
  private readonly maxSteps: number | null;
  private readonly doneReason: string;

  constructor(options: { maxSteps?: number | null; doneReason?: string } = {}) {
    this.maxSteps = options.maxSteps ?? null;
    this.doneReason = options.doneReason ?? "timeout";
  }

  reset(hello: HelloMessage): WireState {
    const terrain = Heightfield.decodeBase64(
      hello.terrain.data,
      hello.terrain.origin[0],
      hello.terrain.origin[1],
    );
    const [sx, sy] = hello.terrain.spawn;
    const support = terrain.heightAt(sx, sy);
    this.kp = hello.sim.kp;
    this.kd = hello.sim.kd;
    this.actionClip = hello.sim.action_clip;
    this.controlDt = 1 / hello.sim.control_hz;
    this.decay = Math.exp(-this.controlDt / 0.08);
    this.defaultPose = Float64Array.from(hello.robot.joints.map((j) => j.default));
    this.q = Float64Array.from(this.defaultPose);
    this.dq = new Float64Array(NUM_JOINTS);
    this.tau = new Float64Array(NUM_JOINTS);
    this.basePos = [sx, sy, support + hello.sim.base_height];
    this.steps = 0;
    const latency = typeof hello.dr.control_latency === "number" ? hello.dr.control_latency : 0;
    this.latencySteps = Math.round(latency * hello.sim.control_hz);
    this.pending = Array.from({ length: this.latencySteps }, () => new Array<number>(NUM_JOINTS).fill(0));
    return this.wireState();
  }

  step(action: number[]): WireState | { done: string } {
    this.steps += 1;
    if (this.maxSteps !== null && this.steps > this.maxSteps) {
      return { done: this.doneReason };
    }
    this.pending.push(action);
    const effective = this.pending.shift() ?? action;
    const target = new Float64Array(NUM_JOINTS);
    for (let i = 0; i < NUM_JOINTS; i++) {
      const clipped = Math.min(this.actionClip, Math.max(-this.actionClip, effective[i]));
      target[i] = this.defaultPose[i] + clipped;
    }
    for (let i = 0; i < NUM_JOINTS; i++) {
      const qNew = target[i] + (this.q[i] - target[i]) * this.decay;
      this.dq[i] = (qNew - this.q[i]) / this.controlDt;
      this.q[i] = qNew;
      this.tau[i] = this.kp * (target[i] - this.q[i]) - this.kd * this.dq[i];
    }
    return this.wireState();
  }

  private wireState(): WireState {
    return {
      pos: [...this.basePos],
      quat: [1, 0, 0, 0],
      lin_vel: [0, 0, 0],
      ang_vel: [0, 0, 0],
      q: Array.from(this.q),
      dq: Array.from(this.dq),
      tau: Array.from(this.tau),
      contacts: new Array<boolean>(NUM_FEET).fill(true),
      g_proj: [0, 0, -1],
    };
  }
}
