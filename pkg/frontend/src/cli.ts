#!/usr/bin/env node
import { parseArgs } from "node:util";
import { startToolServer } from "./server.js";

const HELP = `usage: opg-tool-server --fixtures <dir> [options]

options:
  --fixtures <dir>   directory of <case-id>/fixture.json bundles (required)
  --host <host>      bind address (default 127.0.0.1)
  --port <n>         port, 0 picks a free one (default 0)
  --latency-ms <n>   delay every response by n milliseconds
  --fail-first <n>   destroy the connection for the first n requests
  --hang-first <n>   never answer the first n requests (client must time out)

The bound port is announced on stdout as "listening <port>".
`;

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      fixtures: { type: "string" },
      host: { type: "string", default: "127.0.0.1" },
      port: { type: "string", default: "0" },
      "latency-ms": { type: "string", default: "0" },
      "fail-first": { type: "string", default: "0" },
      "hang-first": { type: "string", default: "0" },
      help: { type: "boolean", default: false },
    },
  });
  if (values.help || !values.fixtures) {
    process.stderr.write(HELP);
    return values.help ? 0 : 2;
  }
  const handle = await startToolServer({
    fixtures: values.fixtures,
    host: values.host,
    port: Number(values.port),
    latencyMs: Number(values["latency-ms"]),
    failFirst: Number(values["fail-first"]),
    hangFirst: Number(values["hang-first"]),
    log: (line) => process.stderr.write(line + "\n"),
  });
  process.stdout.write(`listening ${handle.port}\n`);
  const shutdown = () => {
    handle.close().finally(() => process.exit(0));
  };
  process.on("SIGINT", shutdown);
  process.on("SIGTERM", shutdown);
  return new Promise(() => {}); // run until signalled
}

main().then(
  (code) => {
    if (code !== 0) process.exit(code);
  },
  (e) => {
    process.stderr.write(String(e) + "\n");
    process.exit(1);
  },
);
