/**
 * Request-to-payload mapping over fixture files.
 *
 * This must stay behaviorally identical to the Python in-process fixture
 * backend: integration tests assert that pipeline runs over the socket and
 * over the in-process path produce byte-identical reports.
 */

import { FixtureStore, UnknownCaseError } from "./fixtures.js";
import { err, ok, type BBox, type BoxEntry, type ToolResponse } from "./protocol.js";

/** Octagon inscribed in a box, corners cut at one quarter of each dimension. */
export function octagonInBox(box: BBox): [number, number][] {
  const [x0, y0, x1, y1] = box;
  const cx = (x1 - x0) / 4;
  const cy = (y1 - y0) / 4;
  return [
    [x0 + cx, y0],
    [x1 - cx, y0],
    [x1, y0 + cy],
    [x1, y1 - cy],
    [x1 - cx, y1],
    [x0 + cx, y1],
    [x0, y1 - cy],
    [x0, y0 + cy],
  ];
}

function sortedBoxes(table: Record<string, BBox>): BoxEntry[] {
  return Object.keys(table)
    .sort()
    .map((label) => ({ label, box: table[label], confidence: 1.0 }));
}

export function handleRequest(store: FixtureStore, request: Record<string, unknown>): ToolResponse {
  const caseId = String(request.image ?? "").split("#", 1)[0];
  const kind = request.kind;
  const tool = String(request.tool ?? "");
  const params = (request.params ?? {}) as Record<string, unknown>;

  let fx;
  try {
    fx = store.get(caseId);
  } catch (e) {
    if (e instanceof UnknownCaseError) return err(e.message);
    throw e;
  }

  switch (kind) {
    case "detect_teeth":
      return ok({ boxes: sortedBoxes(fx.teeth) });
    case "detect_quadrants":
      return ok({ boxes: sortedBoxes(fx.quadrants) });
    case "detect_anatomy":
      return ok({ boxes: sortedBoxes(fx.anatomy) });
    case "enumerate_fdi":
      return ok({ labels: Object.keys(fx.teeth).sort() });
    case "detect_pathology": {
      const fieldFilter = params.field;
      const boxes: BoxEntry[] = [];
      for (const det of fx.detections) {
        if (fieldFilter && det.field !== fieldFilter) continue;
        boxes.push({ label: det.field, value: det.value, box: det.box, confidence: det.confidence ?? 1.0 });
      }
      return ok({ boxes });
    }
    case "segment_tooth": {
      const code = String(params.tooth ?? "");
      const box = fx.teeth[code];
      if (!box) return err(`no tooth ${code} in case ${caseId}`);
      return ok({ masks: [{ label: code, mask: octagonInBox(box) }] });
    }
    case "read_image": {
      const regionKey = typeof params.region_key === "string" ? params.region_key : "full";
      const opinions = (fx.opinions[tool]?.[regionKey] ?? []) as never[];
      return ok({ opinions });
    }
    default:
      return err(`unsupported request kind '${String(kind)}'`);
  }
}
