import { readFileSync } from "node:fs";
import { join } from "node:path";

export interface Detection {
  field: string;
  value: string;
  box: [number, number, number, number];
  confidence?: number;
}

export interface Fixture {
  case_id: string;
  teeth: Record<string, [number, number, number, number]>;
  quadrants: Record<string, [number, number, number, number]>;
  anatomy: Record<string, [number, number, number, number]>;
  detections: Detection[];
  opinions: Record<string, Record<string, unknown[]>>;
}

export class UnknownCaseError extends Error {
  constructor(public readonly caseId: string) {
    super(`unknown case '${caseId}'`);
  }
}

/**
 * Lazily loads `<root>/<case-id>/fixture.json` files, mirroring the
 * in-process fixture backend on the Python side.
 */
export class FixtureStore {
  private cache = new Map<string, Fixture>();

  constructor(private readonly root: string) {}

  get(caseId: string): Fixture {
    const hit = this.cache.get(caseId);
    if (hit) return hit;
    let raw: string;
    try {
      raw = readFileSync(join(this.root, caseId, "fixture.json"), "utf-8");
    } catch {
      throw new UnknownCaseError(caseId);
    }
    const doc = JSON.parse(raw);
    const fixture: Fixture = {
      case_id: doc.case_id ?? caseId,
      teeth: doc.teeth ?? {},
      quadrants: doc.quadrants ?? {},
      anatomy: doc.anatomy ?? {},
      detections: doc.detections ?? [],
      opinions: doc.opinions ?? {},
    };
    this.cache.set(caseId, fixture);
    return fixture;
  }
}
