// One protocol session: strict HELLO -> RESET_ACK, then STEP -> STATE/DONE
// alternation. Malformed frames and backend exceptions are answered with
// ERROR frames and the session stays alive; the peer closing the stream ends
// the episode.

import { DecodeResult } from "./framing.js";
import {
  Outbound,
  PROTOCOL_VERSION,
  errorFrame,
  validateHello,
  validateStep,
  validateWireState,
} from "./messages.js";
import { Backend } from "./stub.js";

export class Session {
  private backend: Backend;
  private helloSeen = false;

  constructor(backend: Backend) {
    this.backend = backend;
  }

  /** Responses for one decoded inbound frame, in send order. */
  handle(result: DecodeResult): Outbound[] {
    if (result.kind === "bad_frame") {
      return [errorFrame("bad_frame", result.error)];
    }
    const message = result.value as { type?: unknown };
    switch (message.type) {
      case "HELLO":
        return this.onHello(result.value);
      case "STEP":
        return this.onStep(result.value);
      default:
        return [errorFrame("bad_type", `unexpected frame type ${String(message.type)}`)];
    }
  }

  private onHello(value: unknown): Outbound[] {
    const parsed = validateHello(value);
    if (!parsed.ok) {
      return [errorFrame("bad_hello", parsed.error)];
    }
    try {
      const state = this.backend.reset(parsed.hello);
      const invalid = validateWireState(state);
      if (invalid) {
        return [errorFrame("backend_error", `backend produced invalid state: ${invalid}`)];
      }
      this.helloSeen = true;
      return [{ type: "RESET_ACK", protocol_version: PROTOCOL_VERSION, state }];
    } catch (err) {
      return [errorFrame("backend_error", String(err))];
    }
  }

  private onStep(value: unknown): Outbound[] {
    if (!this.helloSeen) {
      return [errorFrame("no_hello", "STEP before HELLO")];
    }
    const parsed = validateStep(value);
    if (!parsed.ok) {
      return [errorFrame("bad_step", parsed.error)];
    }
    try {
      const outcome = this.backend.step(parsed.action);
      if ("done" in outcome) {
        return [{ type: "DONE", reason: outcome.done }];
      }
      const invalid = validateWireState(outcome);
      if (invalid) {
        return [errorFrame("backend_error", `backend produced invalid state: ${invalid}`)];
      }
      return [{ type: "STATE", state: outcome, done: false }];
    } catch (err) {
      return [errorFrame("backend_error", String(err))];
    }
  }
}
