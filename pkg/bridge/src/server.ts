// Adapter entry point. TCP mode serves one episode per connection (many
// connections in turn); stdio mode frames over stdin/stdout for
// subprocess-style embedding. Diagnostics always go to stderr so stdout
// stays a clean frame stream.
//
//   node dist/server.js --port 0          # prints "LISTENING <port>"
//   node dist/server.js --stdio
//   node dist/server.js --port 0 --done-after 500 --done-reason fall

import net from "node:net";
import process from "node:process";

import { FrameDecoder, FramingError, encodeFrame } from "./framing.js";
import { Session } from "./session.js";
import { Backend, StubBackend } from "./stub.js";

export interface ServerOptions {
  backendFactory?: () => Backend;
  maxSteps?: number | null;
  doneReason?: string;
}

function makeBackend(options: ServerOptions): Backend {
  if (options.backendFactory) return options.backendFactory();
  return new StubBackend({ maxSteps: options.maxSteps ?? null, doneReason: options.doneReason });
}

export function serveTcp(port: number, options: ServerOptions = {}): Promise<net.Server> {
  const server = net.createServer((socket) => {
    const session = new Session(makeBackend(options));
    const decoder = new FrameDecoder();
    socket.on("data", (chunk) => {
      let results;
      try {
        results = decoder.feed(chunk);
      } catch (err) {
        if (err instanceof FramingError) {
          socket.destroy();
          return;
        }
        throw err;
      }
      for (const result of results) {
        for (const reply of session.handle(result)) {
          socket.write(encodeFrame(reply));
        }
      }
    });
    socket.on("error", () => socket.destroy());
  });
  return new Promise((resolve) => {
    server.listen(port, "127.0.0.1", () => {
      const address = server.address() as net.AddressInfo;
      process.stderr.write(`LISTENING ${address.port}\n`);
      resolve(server);
    });
  });
}

export function serveStdio(options: ServerOptions = {}): void {
  const session = new Session(makeBackend(options));
  const decoder = new FrameDecoder();
  process.stdin.on("data", (chunk: Buffer) => {
    for (const result of decoder.feed(chunk)) {
      for (const reply of session.handle(result)) {
        process.stdout.write(encodeFrame(reply));
      }
    }
  });
  process.stdin.on("end", () => process.exit(0));
}

function parseArgs(argv: string[]): { stdio: boolean; port: number; maxSteps: number | null; doneReason: string } {
  const options = { stdio: false, port: 0, maxSteps: null as number | null, doneReason: "timeout" };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--stdio") options.stdio = true;
    else if (arg === "--port") options.port = Number(argv[++i]);
    else if (arg === "--done-after") options.maxSteps = Number(argv[++i]);
    else if (arg === "--done-reason") options.doneReason = argv[++i];
    else {
      process.stderr.write(`unknown argument ${arg}\n`);
      process.exit(2);
    }
  }
  return options;
}

const isMain = process.argv[1]?.endsWith("server.js");
if (isMain) {
  const options = parseArgs(process.argv.slice(2));
  if (options.stdio) {
    serveStdio({ maxSteps: options.maxSteps, doneReason: options.doneReason });
  } else {
    void serveTcp(options.port, { maxSteps: options.maxSteps, doneReason: options.doneReason });
  }
}
