"""Tool registry and wire-protocol client.

Tools come in four categories: spatial, detection, utility, and expert.
Utility tools (ROI cropping, FDI arithmetic, polygon math) run in-process;
the rest sit behind endpoints. Three endpoint schemes are supported:

* ``mock:<fixtures-dir>``  — in-process fixture-driven backend (tests, demos)
* ``tcp:<host>:<port>``    — newline-delimited JSON over a local socket
* ``dead:<anything>``      — always-failing endpoint (fault injection)

Every invocation, successful or not, is committed to case memory as
evidence; expert/detector claims additionally become one evidence item per
candidate finding. Responses that fail payload validation are recorded but
never enter consensus.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass, field
from typing import List, Optional

from .geometry import BBox, GeometryError
from .jsonutil import canonical_line, load_json
from .memory import CaseMemory
from .ontology import FindingTriple, Location, is_valid_fdi
import json

PROTOCOL_VERSION = 1

CATEGORY_SPATIAL = "spatial"
CATEGORY_DETECTION = "detection"
CATEGORY_UTILITY = "utility"
CATEGORY_EXPERT = "expert"
CATEGORIES = (CATEGORY_SPATIAL, CATEGORY_DETECTION, CATEGORY_UTILITY, CATEGORY_EXPERT)

REQUEST_KINDS = (
    "detect_teeth",
    "detect_quadrants",
    "detect_anatomy",
    "detect_pathology",
    "segment_tooth",
    "read_image",
    "enumerate_fdi",
)


class ToolboxError(RuntimeError):
    pass


class TransportError(ToolboxError):
    pass


@dataclass(frozen=True)
class ToolDescriptor:
    id: str
    category: str
    endpoint: str
    capabilities: tuple
    vote_eligible: bool = False

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ToolboxError(f"unknown tool category {self.category!r}")
        unknown = set(self.capabilities) - set(REQUEST_KINDS)
        if unknown:
            raise ToolboxError(f"unknown request kinds {sorted(unknown)} for tool {self.id!r}")
        if self.category == CATEGORY_UTILITY and self.endpoint != "builtin":
            raise ToolboxError(f"utility tool {self.id!r} must have endpoint 'builtin'")
        if self.vote_eligible and self.category not in (CATEGORY_DETECTION, CATEGORY_EXPERT):
            raise ToolboxError(f"tool {self.id!r}: only detection/expert tools may vote")

    def encode(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "endpoint": self.endpoint,
            "capabilities": list(self.capabilities),
            "vote_eligible": self.vote_eligible,
        }


class ToolRegistry:
    def __init__(self):
        self._tools: dict = {}

    def register(self, desc: ToolDescriptor) -> None:
        if desc.id in self._tools:
            raise ToolboxError(f"duplicate tool id {desc.id!r}")
        self._tools[desc.id] = desc

    def get(self, tool_id: str) -> ToolDescriptor:
        if tool_id not in self._tools:
            raise ToolboxError(f"unknown tool {tool_id!r}")
        return self._tools[tool_id]

    def list(self, category: Optional[str] = None) -> List[ToolDescriptor]:
        out = [d for d in self._tools.values() if category is None or d.category == category]
        return sorted(out, key=lambda d: d.id)

    def __len__(self) -> int:
        return len(self._tools)

    def manifest(self) -> dict:
        return {"tools": [d.encode() for d in self.list()]}

    @staticmethod
    def from_manifest(doc_or_path) -> "ToolRegistry":
        if isinstance(doc_or_path, dict):
            doc, base = doc_or_path, None
        else:
            from pathlib import Path

            doc = load_json(doc_or_path)
            base = Path(doc_or_path).resolve().parent
        reg = ToolRegistry()
        for raw in doc["tools"]:
            endpoint = raw["endpoint"]
            # Relative mock fixture dirs resolve against the manifest file.
            if base is not None and endpoint.startswith("mock:"):
                target = endpoint.split(":", 1)[1]
                from pathlib import Path

                if not Path(target).is_absolute():
                    endpoint = "mock:" + str(base / target)
            reg.register(
                ToolDescriptor(
                    id=raw["id"],
                    category=raw["category"],
                    endpoint=endpoint,
                    capabilities=tuple(raw["capabilities"]),
                    vote_eligible=bool(raw.get("vote_eligible", False)),
                )
            )
        return reg


@dataclass(frozen=True)
class ToolRequest:
    tool: str
    kind: str
    image: str
    region: Optional[BBox] = None
    params: dict = field(default_factory=dict)

    def encode(self) -> dict:
        return {
            "v": PROTOCOL_VERSION,
            "tool": self.tool,
            "kind": self.kind,
            "image": self.image,
            "region": self.region.encode() if self.region else None,
            "params": self.params,
        }


@dataclass(frozen=True)
class ToolResponse:
    tool: str
    status: str  # "ok" | "error"
    payload: dict
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def validate_payload(payload: dict) -> Optional[str]:
    """Check a response payload against the protocol contract.

    Returns None when valid, else a reason string. Invalid payloads are
    logged as evidence but excluded from consensus.
    """
    if not isinstance(payload, dict):
        return "payload must be an object"
    for entry in payload.get("boxes", []):
        label = entry.get("label")
        if not isinstance(label, str) or not label:
            return "box without label"
        try:
            BBox.decode(entry["box"])
        except (KeyError, GeometryError, TypeError, IndexError):
            return f"malformed box for label {label!r}"
        conf = entry.get("confidence", 1.0)
        if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            return f"confidence out of [0,1] for label {label!r}"
    for entry in payload.get("masks", []):
        if not isinstance(entry.get("label"), str):
            return "mask without label"
        pts = entry.get("mask")
        if not isinstance(pts, list) or len(pts) < 3:
            return "mask with fewer than 3 vertices"
    for entry in payload.get("opinions", []):
        try:
            Location.parse(entry["location"])
        except Exception:
            return f"opinion with unparseable location {entry.get('location')!r}"
        if not entry.get("field") or "value" not in entry:
            return "opinion without field/value"
    return None


# ---------------------------------------------------------------------------
# Transports


def _tcp_call(endpoint: str, request: dict, timeout: float) -> dict:
    _, host, port = endpoint.split(":")
    try:
        with socket.create_connection((host, int(port)), timeout=timeout) as sock:
            sock.settimeout(timeout)
            sock.sendall((canonical_line(request) + "\n").encode("utf-8"))
            buf = b""
            while not buf.endswith(b"\n"):
                chunk = sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
            if not buf:
                raise TransportError(f"empty response from {endpoint}")
            return json.loads(buf.decode("utf-8"))
    except (OSError, ValueError) as exc:
        raise TransportError(f"{endpoint}: {exc}") from exc


class Toolbox:
    """Per-case tool client: dispatches requests and commits evidence."""

    def __init__(self, registry: ToolRegistry, memory: CaseMemory, timeout: float = 30.0, retries: int = 1):
        self.registry = registry
        self.memory = memory
        self.timeout = timeout
        self.retries = retries
        self._mock_backends: dict = {}
        for desc in registry.list():
            memory.register_source(desc.id)

    def _backend_for(self, endpoint: str):
        from .mocktools import FixtureBackend  # local import to avoid a cycle

        if endpoint not in self._mock_backends:
            self._mock_backends[endpoint] = FixtureBackend(endpoint.split(":", 1)[1])
        return self._mock_backends[endpoint]

    def _transport(self, desc: ToolDescriptor, req: ToolRequest) -> dict:
        if desc.endpoint.startswith("mock:"):
            return self._backend_for(desc.endpoint).handle(req.encode())
        if desc.endpoint.startswith("tcp:"):
            return _tcp_call(desc.endpoint, req.encode(), self.timeout)
        if desc.endpoint.startswith("dead:"):
            raise TransportError(f"{desc.endpoint}: endpoint unavailable")
        raise ToolboxError(f"unsupported endpoint {desc.endpoint!r}")

    def invoke(
        self,
        req: ToolRequest,
        phase: str,
        region: Optional[Location] = None,
        timeout: Optional[float] = None,
        retries: Optional[int] = None,
    ) -> "InvokeResult":
        """Invoke a tool with retries. Never raises on transport failure:
        a failure evidence record is committed and an error response
        returned so the pipeline can continue without that source."""
        desc = self.registry.get(req.tool)
        if req.kind not in desc.capabilities:
            raise ToolboxError(f"tool {desc.id!r} does not support {req.kind!r}")
        timeout = self.timeout if timeout is None else timeout
        retries = self.retries if retries is None else retries

        raw_response: Optional[dict] = None
        failure: Optional[str] = None
        for _ in range(retries + 1):
            try:
                raw_response = self._transport(desc, req)
                failure = None
                break
            except TransportError as exc:
                failure = str(exc)

        if raw_response is None:
            call_id = self.memory.append_evidence(
                phase=phase,
                source_id=desc.id,
                kind="tool-failure",
                region=region,
                raw={"request_kind": req.kind, "error": failure, "retries": retries},
            )
            return InvokeResult(ToolResponse(desc.id, "error", {}, failure), call_id, [])

        status = raw_response.get("status", "error")
        payload = raw_response.get("payload") or {}
        error = raw_response.get("error")
        if status == "ok":
            schema_error = validate_payload(payload)
            if schema_error is not None:
                status, error, payload = "error", f"schema-invalid payload: {schema_error}", {}

        call_id = self.memory.append_evidence(
            phase=phase,
            source_id=desc.id,
            kind=req.kind,
            region=region,
            raw={"request_kind": req.kind, "status": status, "payload": payload, "error": error},
        )
        claim_ids: List[int] = []
        if status == "ok":
            for entry in payload.get("opinions", []):
                claim = FindingTriple(Location.parse(entry["location"]), entry["field"], entry["value"])
                claim_ids.append(
                    self.memory.append_evidence(
                        phase=phase,
                        source_id=desc.id,
                        kind="claim",
                        region=region,
                        claim=claim,
                        raw={"text": entry.get("text"), "call_id": call_id},
                    )
                )
        return InvokeResult(ToolResponse(desc.id, status, payload, error), call_id, claim_ids)

    def ping(self, tool_id: str) -> bool:
        """Reachability probe used by the CLI: any protocol-level answer
        (including an error response) counts as alive."""
        desc = self.registry.get(tool_id)
        if desc.endpoint == "builtin":
            return True
        try:
            self._transport(desc, ToolRequest(tool_id, desc.capabilities[0], image="__ping__"))
            return True
        except TransportError:
            return False


@dataclass(frozen=True)
class InvokeResult:
    response: ToolResponse
    call_evidence_id: int
    claim_evidence_ids: List[int]


# ---------------------------------------------------------------------------
# Utility: ROI cropping (in-process)


@dataclass(frozen=True)
class CropRef:
    """Referenceable crop artifact; no pixels are touched, only coordinates.
    The offset is recorded so points map back to image coordinates exactly."""

    source_image: str
    box: BBox

    @property
    def ref(self) -> str:
        b = self.box
        return f"{self.source_image}#{b.x_min:g},{b.y_min:g},{b.x_max:g},{b.y_max:g}"

    def to_image_coords(self, x: float, y: float) -> tuple:
        return (x + self.box.x_min, y + self.box.y_min)

    def to_crop_coords(self, x: float, y: float) -> tuple:
        return (x - self.box.x_min, y - self.box.y_min)


def crop_roi(image: str, region: BBox, padding: float, bounds: Optional[BBox] = None) -> CropRef:
    """Expand a region by `padding` of its dimensions on each side, clamp to
    the image bounds, and return a crop reference."""
    if region.width <= 0 or region.height <= 0:
        raise ToolboxError("empty crop region")
    dx = region.width * padding
    dy = region.height * padding
    x_min = region.x_min - dx
    y_min = region.y_min - dy
    x_max = region.x_max + dx
    y_max = region.y_max + dy
    if bounds is not None:
        x_min = max(x_min, bounds.x_min)
        y_min = max(y_min, bounds.y_min)
        x_max = min(x_max, bounds.x_max)
        y_max = min(y_max, bounds.y_max)
    x_min = max(0.0, x_min)
    y_min = max(0.0, y_min)
    return CropRef(image, BBox(x_min, y_min, x_max, y_max))
