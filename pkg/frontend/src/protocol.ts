/**
 * Shared wire-protocol contract (v1).
 *
 * The JSON Schema under docs/protocol/schema.json is the single source of
 * truth; this module locates it, compiles request/response validators with
 * ajv, and exposes the TypeScript views of the protocol types.
 */

import { readFileSync, existsSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { Ajv, type ValidateFunction } from "ajv";

export const PROTOCOL_VERSION = 1;

export const REQUEST_KINDS = [
  "detect_teeth",
  "detect_quadrants",
  "detect_anatomy",
  "detect_pathology",
  "segment_tooth",
  "read_image",
  "enumerate_fdi",
] as const;

export type RequestKind = (typeof REQUEST_KINDS)[number];

export type BBox = [number, number, number, number];

export interface ToolRequest {
  v: number;
  tool: string;
  kind: RequestKind;
  image: string;
  region: BBox | null;
  params: { tooth?: string | number; field?: string; region_key?: string; [key: string]: unknown };
}

export interface BoxEntry {
  label: string;
  box: BBox;
  confidence?: number;
  value?: string;
}

export interface MaskEntry {
  label: string;
  mask: [number, number][];
}

export interface OpinionEntry {
  location: string;
  field: string;
  value: string;
  text?: string | null;
}

export interface Payload {
  boxes?: BoxEntry[];
  masks?: MaskEntry[];
  opinions?: OpinionEntry[];
  labels?: string[];
}

export interface ToolResponse {
  v: number;
  status: "ok" | "error";
  payload: Payload;
  error: string | null;
}

export function ok(payload: Payload): ToolResponse {
  return { v: PROTOCOL_VERSION, status: "ok", payload, error: null };
}

export function err(message: string): ToolResponse {
  return { v: PROTOCOL_VERSION, status: "error", payload: {}, error: message };
}

/** Walk up from this module until the shared schema file is found. */
export function findSchemaPath(startDir?: string): string {
  let dir = startDir ?? dirname(fileURLToPath(import.meta.url));
  for (let depth = 0; depth < 8; depth += 1) {
    const candidate = join(dir, "docs", "protocol", "schema.json");
    if (existsSync(candidate)) return candidate;
    const parent = dirname(dir);
    if (parent === dir) break;
    dir = parent;
  }
  throw new Error("docs/protocol/schema.json not found above " + (startDir ?? "module dir"));
}

export interface Validators {
  request: ValidateFunction;
  response: ValidateFunction;
  errorsOf(fn: ValidateFunction): string;
}

let cached: Validators | null = null;

export function loadValidators(schemaPath?: string): Validators {
  if (cached && !schemaPath) return cached;
  const path = schemaPath ?? findSchemaPath();
  const schema = JSON.parse(readFileSync(path, "utf-8"));
  const ajv = new Ajv({ allErrors: true, strict: false });
  ajv.addSchema(schema);
  const request = ajv.getSchema(`${schema.$id}#/definitions/request`);
  const response = ajv.getSchema(`${schema.$id}#/definitions/response`);
  if (!request || !response) throw new Error("schema is missing request/response definitions");
  const validators: Validators = {
    request,
    response,
    errorsOf: (fn) => (fn.errors ?? []).map((e) => `${e.instancePath || "/"} ${e.message}`).join("; "),
  };
  if (!schemaPath) cached = validators;
  return validators;
}
