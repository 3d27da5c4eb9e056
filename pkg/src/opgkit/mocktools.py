"""In-process fixture-driven tool backend.

Serves deterministic responses from per-case fixture files so the whole
pipeline runs without any model. The reference socket server under
``frontend/`` implements the same request-to-payload mapping over the wire
protocol; integration tests assert that both paths yield byte-identical
reports.
"""

from __future__ import annotations

from pathlib import Path

from .geometry import BBox
from .jsonutil import load_json
from .toolbox import PROTOCOL_VERSION


def _ok(payload: dict) -> dict:
    return {"v": PROTOCOL_VERSION, "status": "ok", "payload": payload, "error": None}


def _err(message: str) -> dict:
    return {"v": PROTOCOL_VERSION, "status": "error", "payload": {}, "error": message}


def octagon_in_box(box: BBox) -> list:
    """Deterministic stand-in segmentation mask: octagon inscribed in a box,
    corners cut at one quarter of each dimension."""
    cx = box.width / 4.0
    cy = box.height / 4.0
    return [
        [box.x_min + cx, box.y_min],
        [box.x_max - cx, box.y_min],
        [box.x_max, box.y_min + cy],
        [box.x_max, box.y_max - cy],
        [box.x_max - cx, box.y_max],
        [box.x_min + cx, box.y_max],
        [box.x_min, box.y_max - cy],
        [box.x_min, box.y_min + cy],
    ]


class FixtureBackend:
    """Resolves requests against ``<root>/<case_id>/fixture.json``."""

    def __init__(self, root):
        self.root = Path(root)
        self._cache: dict = {}

    def _fixture(self, case_id: str) -> dict:
        if case_id not in self._cache:
            path = self.root / case_id / "fixture.json"
            if not path.exists():
                raise KeyError(case_id)
            self._cache[case_id] = load_json(path)
        return self._cache[case_id]

    def handle(self, request: dict) -> dict:
        case_id = str(request.get("image", "")).split("#", 1)[0]
        kind = request.get("kind")
        tool = request.get("tool", "")
        params = request.get("params") or {}
        try:
            fx = self._fixture(case_id)
        except KeyError:
            return _err(f"unknown case {case_id!r}")

        if kind == "detect_teeth":
            boxes = [
                {"label": code, "box": box, "confidence": 1.0}
                for code, box in sorted(fx.get("teeth", {}).items())
            ]
            return _ok({"boxes": boxes})
        if kind == "detect_quadrants":
            boxes = [
                {"label": q, "box": box, "confidence": 1.0}
                for q, box in sorted(fx.get("quadrants", {}).items())
            ]
            return _ok({"boxes": boxes})
        if kind == "detect_anatomy":
            boxes = [
                {"label": rid, "box": box, "confidence": 1.0}
                for rid, box in sorted(fx.get("anatomy", {}).items())
            ]
            return _ok({"boxes": boxes})
        if kind == "enumerate_fdi":
            return _ok({"labels": sorted(fx.get("teeth", {}).keys())})
        if kind == "detect_pathology":
            field_filter = params.get("field")
            boxes = []
            for det in fx.get("detections", []):
                if field_filter and det["field"] != field_filter:
                    continue
                boxes.append(
                    {
                        "label": det["field"],
                        "value": det["value"],
                        "box": det["box"],
                        "confidence": det.get("confidence", 1.0),
                    }
                )
            return _ok({"boxes": boxes})
        if kind == "segment_tooth":
            code = str(params.get("tooth", ""))
            teeth = fx.get("teeth", {})
            if code not in teeth:
                return _err(f"no tooth {code} in case {case_id}")
            return _ok({"masks": [{"label": code, "mask": octagon_in_box(BBox.decode(teeth[code]))}]})
        if kind == "read_image":
            region_key = params.get("region_key", "full")
            opinions = fx.get("opinions", {}).get(tool, {}).get(region_key, [])
            return _ok({"opinions": opinions})
        return _err(f"unsupported request kind {kind!r}")
