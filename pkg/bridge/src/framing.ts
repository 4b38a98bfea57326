// Length-prefixed JSON framing: a 4-byte big-endian payload length followed
// by a UTF-8 JSON object. The decoder is incremental so TCP chunking is
// transparent.

export const MAX_FRAME_BYTES = 64 * 1024 * 1024;

export class FramingError extends Error {}

export function encodeFrame(message: unknown): Buffer {
  const payload = Buffer.from(JSON.stringify(message), "utf-8");
  if (payload.length > MAX_FRAME_BYTES) {
    throw new FramingError("frame too large");
  }
  const header = Buffer.alloc(4);
  header.writeUInt32BE(payload.length, 0);
  return Buffer.concat([header, payload]);
}

export type DecodeResult =
  | { kind: "message"; value: unknown }
  | { kind: "bad_frame"; error: string };

/** Incremental frame decoder; feed() returns every complete frame in order.
 * Unparseable payloads surface as bad_frame results rather than exceptions,
 * so a server can answer with an ERROR frame and keep the connection. */
export class FrameDecoder {
  private buffer: Buffer = Buffer.alloc(0);

  feed(chunk: Buffer): DecodeResult[] {
    this.buffer = this.buffer.length === 0 ? chunk : Buffer.concat([this.buffer, chunk]);
    const out: DecodeResult[] = [];
    for (;;) {
      if (this.buffer.length < 4) {
        return out;
      }
      const length = this.buffer.readUInt32BE(0);
      if (length > MAX_FRAME_BYTES) {
        throw new FramingError("frame too large");
      }
      if (this.buffer.length < 4 + length) {
        return out;
      }
      const payload = this.buffer.subarray(4, 4 + length);
      this.buffer = this.buffer.subarray(4 + length);
      try {
        const value: unknown = JSON.parse(payload.toString("utf-8"));
        if (typeof value !== "object" || value === null || !("type" in value)) {
          out.push({ kind: "bad_frame", error: "missing type" });
        } else {
          out.push({ kind: "message", value });
        }
      } catch (err) {
        out.push({ kind: "bad_frame", error: String(err) });
      }
    }
  }
}
