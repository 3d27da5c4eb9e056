import net from "node:net";
import { mkdtempSync, mkdirSync, writeFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import { startToolServer, type ToolServer } from "../src/server.js";
import { loadValidators, PROTOCOL_VERSION } from "../src/protocol.js";

const validators = loadValidators();

const root = mkdtempSync(join(tmpdir(), "opg-server-"));
mkdirSync(join(root, "case-s"));
writeFileSync(
  join(root, "case-s", "fixture.json"),
  JSON.stringify({
    case_id: "case-s",
    teeth: { "21": [10, 10, 30, 40] },
    quadrants: {},
    anatomy: {},
    detections: [],
    opinions: {},
  }),
);

afterAll(() => rmSync(root, { recursive: true, force: true }));

function sendLine(port: number, line: string, timeoutMs = 2000): Promise<string | null> {
  return new Promise((resolve, reject) => {
    const socket = net.connect(port, "127.0.0.1");
    const timer = setTimeout(() => {
      socket.destroy();
      resolve(null); // timed out waiting for a response
    }, timeoutMs);
    let buffer = "";
    socket.on("connect", () => socket.write(line + "\n"));
    socket.on("data", (chunk) => {
      buffer += chunk.toString("utf-8");
      if (buffer.includes("\n")) {
        clearTimeout(timer);
        socket.end();
        resolve(buffer.split("\n")[0]);
      }
    });
    socket.on("error", (e) => {
      clearTimeout(timer);
      resolve(null); // connection reset counts as "no response"
    });
    socket.on("close", () => {
      clearTimeout(timer);
      resolve(buffer.includes("\n") ? buffer.split("\n")[0] : null);
    });
  });
}

const request = (overrides: object = {}) =>
  JSON.stringify({
    v: PROTOCOL_VERSION,
    tool: "t",
    kind: "detect_teeth",
    image: "case-s",
    region: null,
    params: {},
    ...overrides,
  });

async function withServer(
  options: Partial<Parameters<typeof startToolServer>[0]>,
  body: (server: ToolServer) => Promise<void>,
): Promise<void> {
  const server = await startToolServer({ fixtures: root, port: 0, ...options });
  try {
    await body(server);
  } finally {
    await server.close();
  }
}

describe("tool server", () => {
  it("answers one schema-valid response per request line", async () => {
    await withServer({}, async (server) => {
      const line = await sendLine(server.port, request());
      expect(line).not.toBeNull();
      const response = JSON.parse(line!);
      expect(validators.response(response), validators.errorsOf(validators.response)).toBe(true);
      expect(response.payload.boxes).toEqual([{ label: "21", box: [10, 10, 30, 40], confidence: 1 }]);
      expect(server.requestsServed()).toBe(1);
    });
  });

  it("handles several requests on one connection", async () => {
    await withServer({}, async (server) => {
      const socket = net.connect(server.port, "127.0.0.1");
      const lines: string[] = [];
      let buffer = "";
      socket.on("data", (chunk) => {
        buffer += chunk.toString("utf-8");
        const parts = buffer.split("\n");
        buffer = parts.pop()!;
        lines.push(...parts);
      });
      await new Promise<void>((resolve) => socket.on("connect", () => resolve()));
      socket.write(request() + "\n" + request({ kind: "enumerate_fdi" }) + "\n");
      await new Promise<void>((resolve) => {
        const poll = setInterval(() => {
          if (lines.length >= 2) {
            clearInterval(poll);
            resolve();
          }
        }, 5);
      });
      socket.end();
      expect(JSON.parse(lines[0]).payload.boxes).toHaveLength(1);
      expect(JSON.parse(lines[1]).payload.labels).toEqual(["21"]);
    });
  });

  it("rejects malformed and schema-invalid lines without dropping the socket", async () => {
    await withServer({}, async (server) => {
      const garbled = JSON.parse((await sendLine(server.port, "{oops"))!);
      expect(garbled.status).toBe("error");
      expect(garbled.error).toContain("invalid request");

      const wrongShape = JSON.parse((await sendLine(server.port, request({ v: 2 })))!);
      expect(wrongShape.status).toBe("error");
      expect(validators.response(wrongShape)).toBe(true);
    });
  });

  it("destroys the connection for the first N requests when failure is injected", async () => {
    const injected: string[] = [];
    await withServer({ failFirst: 2, log: (l) => injected.push(l) }, async (server) => {
      expect(await sendLine(server.port, request())).toBeNull();
      expect(await sendLine(server.port, request())).toBeNull();
      const third = await sendLine(server.port, request());
      expect(third).not.toBeNull();
      expect(JSON.parse(third!).status).toBe("ok");
      expect(injected.filter((l) => l.includes("injected failure"))).toHaveLength(2);
    });
  });

  it("withholds responses for hang-first requests so clients time out", async () => {
    await withServer({ hangFirst: 1 }, async (server) => {
      const hung = await sendLine(server.port, request(), 300);
      expect(hung).toBeNull();
      const next = await sendLine(server.port, request());
      expect(JSON.parse(next!).status).toBe("ok");
    });
  });

  it("applies configured latency but still answers", async () => {
    await withServer({ latencyMs: 120 }, async (server) => {
      const started = Date.now();
      const line = await sendLine(server.port, request());
      expect(Date.now() - started).toBeGreaterThanOrEqual(100);
      expect(JSON.parse(line!).status).toBe("ok");
    });
  });
});
