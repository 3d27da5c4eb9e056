/**
 * NDJSON tool server: one JSON request per line, one JSON response per line.
 *
 * Application-level problems (unknown case, malformed request, unsupported
 * kind) always come back as protocol error responses; the connection stays
 * usable. Fault injection (for exercising client timeout/retry paths) is
 * the only thing that breaks the transport on purpose.
 */

import net from "node:net";
import { FixtureStore } from "./fixtures.js";
import { handleRequest } from "./handlers.js";
import { err, loadValidators, type Validators } from "./protocol.js";

export interface ServerOptions {
  fixtures: string;
  host?: string;
  port?: number;
  /** Delay every response by this many milliseconds. */
  latencyMs?: number;
  /** Destroy the connection (no response) for the first N requests. */
  failFirst?: number;
  /** Accept but never answer the first N requests (client must time out). */
  hangFirst?: number;
  log?: (line: string) => void;
}

export interface ToolServer {
  server: net.Server;
  port: number;
  requestsServed: () => number;
  close: () => Promise<void>;
}

export function createToolServer(options: ServerOptions): net.Server {
  const store = new FixtureStore(options.fixtures);
  const validators: Validators = loadValidators();
  const log = options.log ?? (() => {});
  let failBudget = options.failFirst ?? 0;
  let hangBudget = options.hangFirst ?? 0;
  let served = 0;

  const sockets = new Set<net.Socket>();
  const server = net.createServer((socket) => {
    sockets.add(socket);
    socket.on("close", () => sockets.delete(socket));
    socket.on("error", () => {
      // client went away mid-line; nothing to clean up
    });
    let buffer = "";
    socket.on("data", (chunk) => {
      buffer += chunk.toString("utf-8");
      let newline;
      while ((newline = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, newline);
        buffer = buffer.slice(newline + 1);
        if (!line.trim()) continue;

        if (failBudget > 0) {
          failBudget -= 1;
          log("injected failure: destroying connection");
          socket.destroy();
          return;
        }
        if (hangBudget > 0) {
          hangBudget -= 1;
          log("injected hang: withholding response");
          return; // leave the socket open; the client's timeout fires
        }

        let response;
        try {
          const request = JSON.parse(line) as Record<string, unknown>;
          if (!validators.request(request)) {
            response = err(`invalid request: ${validators.errorsOf(validators.request)}`);
          } else {
            response = handleRequest(store, request);
          }
        } catch {
          response = err("invalid request: not a JSON object");
        }
        served += 1;
        const payload = JSON.stringify(response) + "\n";
        if (options.latencyMs && options.latencyMs > 0) {
          setTimeout(() => socket.write(payload), options.latencyMs);
        } else {
          socket.write(payload);
        }
      }
    });
  });

  const extended = server as net.Server & { requestsServed?: () => number; destroySockets?: () => void };
  extended.requestsServed = () => served;
  extended.destroySockets = () => sockets.forEach((s) => s.destroy());
  return server;
}

export function startToolServer(options: ServerOptions): Promise<ToolServer> {
  const server = createToolServer(options);
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(options.port ?? 0, options.host ?? "127.0.0.1", () => {
      const address = server.address();
      if (!address || typeof address === "string") {
        reject(new Error("server bound to a non-TCP address"));
        return;
      }
      resolve({
        server,
        port: address.port,
        requestsServed: (server as net.Server & { requestsServed: () => number }).requestsServed,
        close: () =>
          new Promise<void>((res, rej) => {
            (server as net.Server & { destroySockets: () => void }).destroySockets();
            server.close((e) => (e ? rej(e) : res()));
          }),
      });
    });
  });
}
