"""Deterministic three-phase evidence-gathering planner.

Phase 1 (global): experts read the full image while spatial tools establish
the coordinate system (tooth boxes keyed by FDI code, quadrant boxes,
anatomy regions, missing teeth). Phase 2 (quadrant): each quadrant crop is
screened by every expert for gross pathology; implicated regions become
flags. Phase 3 (tooth): every mapped tooth gets a padded ROI screened by
every expert, detection tools contribute geometry-grounded pathology
claims, and flags that fall where no tooth was mapped get a recovery crop
taken from the independent quadrant/anatomy geometry so false negatives
(e.g. a root remnant in an edentulous region) can still be recovered.

The planner is a state machine, not a language model; an adapter hook may
add extra pre-declared expert passes but can never skip mandatory
coverage. With fixture-driven tools and a fixed config, a case run is a
pure function of its inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

from .consensus import MODE_DEFAULT, run_consensus, votes_from_evidence
from .geometry import BBox, assign_finding_to_tooth
from .jsonutil import canonical_dumps, load_json, sha256_of
from .memory import (
    PHASE_GLOBAL,
    PHASE_QUADRANT,
    PHASE_TOOTH,
    AuditLogWriter,
    CaseMemory,
    CoordinateMap,
    ToothGeometry,
)
from .ontology import (
    FDI_CODES,
    KIND_TOOTH,
    FindingTriple,
    Location,
    OntologySchema,
    StructuredReport,
    default_ontology_path,
    load_ontology,
)
from .parser import parse_memory
from .toolbox import (
    CATEGORY_DETECTION,
    CATEGORY_EXPERT,
    CATEGORY_SPATIAL,
    Toolbox,
    ToolRegistry,
    ToolRequest,
    crop_roi,
)


class CaseAbortError(RuntimeError):
    """No coordinate system could be established; the case cannot run."""


@dataclass(frozen=True)
class RunConfig:
    ontology_path: str = ""
    manifest_path: str = ""
    quadrant_padding: float = 0.10
    tooth_padding: float = 0.25
    tau_iou: float = 0.05
    consensus_mode: str = MODE_DEFAULT
    consensus_enabled: bool = True
    phases: tuple = (PHASE_GLOBAL, PHASE_QUADRANT, PHASE_TOOTH)
    screen_all_teeth: bool = True
    timeout_s: float = 30.0
    retries: int = 1
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if not 0.0 <= self.quadrant_padding <= 1.0 or not 0.0 <= self.tooth_padding <= 1.0:
            raise ValueError("paddings must be in [0, 1]")
        if not 0.0 <= self.tau_iou <= 1.0:
            raise ValueError("tau_iou must be in [0, 1]")
        if PHASE_GLOBAL not in self.phases:
            raise ValueError("the global phase is mandatory")

    def encode(self) -> dict:
        return {
            "ontology_path": str(self.ontology_path),
            "manifest_path": str(self.manifest_path),
            "quadrant_padding": self.quadrant_padding,
            "tooth_padding": self.tooth_padding,
            "tau_iou": self.tau_iou,
            "consensus_mode": self.consensus_mode,
            "consensus_enabled": self.consensus_enabled,
            "phases": list(self.phases),
            "screen_all_teeth": self.screen_all_teeth,
            "timeout_s": self.timeout_s,
            "retries": self.retries,
            "seed": self.seed,
            "jobs": self.jobs,
        }

    @staticmethod
    def decode(obj: dict) -> "RunConfig":
        known = dict(obj)
        phases = tuple(known.pop("phases", (PHASE_GLOBAL, PHASE_QUADRANT, PHASE_TOOTH)))
        return RunConfig(phases=phases, **known)

    @staticmethod
    def load(path) -> "RunConfig":
        return RunConfig.decode(load_json(path))

    @property
    def config_hash(self) -> str:
        # Hash the semantic knobs only. jobs is execution parallelism, and
        # the two paths are environment bindings (absolute on one machine,
        # relative on another); none of them changes what a run computes, so
        # none of them may change the hash. The ontology version is recorded
        # separately next to the hash in every artifact.
        doc = self.encode()
        for key in ("jobs", "manifest_path", "ontology_path"):
            doc.pop(key)
        return sha256_of(doc)


@dataclass(frozen=True)
class CaseBundle:
    case_id: str
    image: str
    width: float
    height: float
    path: Optional[Path] = None

    @property
    def bounds(self) -> BBox:
        return BBox(0.0, 0.0, self.width, self.height)

    @staticmethod
    def load(case_dir) -> "CaseBundle":
        case_dir = Path(case_dir)
        meta = load_json(case_dir / "case.json")
        return CaseBundle(
            case_id=meta["case_id"],
            image=meta["image"],
            width=float(meta["width"]),
            height=float(meta["height"]),
            path=case_dir,
        )

    def gold_path(self) -> Optional[Path]:
        if self.path and (self.path / "gold.json").exists():
            return self.path / "gold.json"
        return None


@dataclass
class TraceEntry:
    phase: str
    action: str
    tool: Optional[str] = None
    region: Optional[str] = None
    evidence_ids: List[int] = dc_field(default_factory=list)

    def encode(self) -> dict:
        return {
            "phase": self.phase,
            "action": self.action,
            "tool": self.tool,
            "region": self.region,
            "evidence_ids": list(self.evidence_ids),
        }


@dataclass
class PlanTrace:
    case_id: str
    config_hash: str
    ontology_version: str
    seed: int
    entries: List[TraceEntry] = dc_field(default_factory=list)

    def add(self, entry: TraceEntry) -> None:
        self.entries.append(entry)

    def encode(self) -> dict:
        return {
            "case_id": self.case_id,
            "config_hash": self.config_hash,
            "ontology_version": self.ontology_version,
            "seed": self.seed,
            "entries": [e.encode() for e in self.entries],
        }


def _quadrant_of_box(box: BBox, quadrants: dict) -> Optional[int]:
    cx, cy = box.center
    for q in sorted(quadrants):
        if quadrants[q].contains_point(cx, cy):
            return q
    best, best_d = None, None
    for q in sorted(quadrants):
        (qx, qy) = quadrants[q].center
        d = (qx - cx) ** 2 + (qy - cy) ** 2
        if best_d is None or d < best_d:
            best, best_d = q, d
    return best


class CasePlanner:
    """Runs one case through the three phases, consensus, and parsing."""

    def __init__(
        self,
        bundle: CaseBundle,
        config: RunConfig,
        registry: ToolRegistry,
        schema: OntologySchema,
        audit_log: Optional[AuditLogWriter] = None,
        adapter: Optional[Callable[["CasePlanner", str], None]] = None,
    ):
        self.bundle = bundle
        self.config = config
        self.schema = schema
        self.registry = registry
        self.memory = CaseMemory(bundle.case_id, audit_log)
        self.toolbox = Toolbox(registry, self.memory, timeout=config.timeout_s, retries=config.retries)
        self.trace = PlanTrace(bundle.case_id, config.config_hash, schema.version, config.seed)
        self._audit = audit_log
        self._adapter = adapter
        if audit_log:
            audit_log.write(
                {
                    "type": "header",
                    "case_id": bundle.case_id,
                    "image": bundle.image,
                    "width": bundle.width,
                    "height": bundle.height,
                    "config": config.encode(),
                    "config_hash": config.config_hash,
                    "ontology_version": schema.version,
                    "seed": config.seed,
                    "vote_eligible": sorted(d.id for d in registry.list() if d.vote_eligible),
                    "experts": [d.id for d in registry.list(CATEGORY_EXPERT)],
                }
            )

    # -- helpers --------------------------------------------------------------

    def _experts(self):
        return self.registry.list(CATEGORY_EXPERT)

    def _invoke(self, tool_id: str, kind: str, image: str, phase: str, region=None, box=None, params=None):
        req = ToolRequest(tool_id, kind, image, region=box, params=params or {})
        result = self.toolbox.invoke(req, phase=phase, region=region)
        self.trace.add(
            TraceEntry(
                phase=phase,
                action=f"invoke:{kind}",
                tool=tool_id,
                region=region.encode() if region else None,
                evidence_ids=[result.call_evidence_id] + list(result.claim_evidence_ids),
            )
        )
        return result

    def _collect_boxes(self, payload: dict) -> dict:
        return {entry["label"]: BBox.decode(entry["box"]) for entry in payload.get("boxes", [])}

    def _tooth_field(self, field_id: str) -> bool:
        spec = self.schema.field_spec(field_id)
        return spec is not None and KIND_TOOTH in spec.locations

    # -- phases ----------------------------------------------------------------

    def run_phase1_global(self) -> CoordinateMap:
        image = self.bundle.image
        teeth_boxes: dict = {}
        quadrant_boxes: dict = {}
        anatomy_boxes: dict = {}
        degraded = False

        for desc in self.registry.list(CATEGORY_SPATIAL):
            for kind, sink in (
                ("detect_teeth", "teeth"),
                ("detect_quadrants", "quadrants"),
                ("detect_anatomy", "anatomy"),
            ):
                if kind not in desc.capabilities:
                    continue
                result = self._invoke(desc.id, kind, image, PHASE_GLOBAL)
                if not result.response.ok:
                    continue
                boxes = self._collect_boxes(result.response.payload)
                if sink == "teeth" and not teeth_boxes:
                    teeth_boxes = {int(c): b for c, b in boxes.items() if c.isdigit()}
                elif sink == "quadrants" and not quadrant_boxes:
                    quadrant_boxes = {int(q): b for q, b in boxes.items() if q.isdigit()}
                elif sink == "anatomy" and not anatomy_boxes:
                    anatomy_boxes = boxes

        if not teeth_boxes:
            # Degraded mode: fall back to any detection tool that can see teeth.
            for desc in self.registry.list(CATEGORY_DETECTION):
                if "detect_teeth" not in desc.capabilities:
                    continue
                result = self._invoke(desc.id, "detect_teeth", image, PHASE_GLOBAL)
                if result.response.ok:
                    boxes = self._collect_boxes(result.response.payload)
                    teeth_boxes = {int(c): b for c, b in boxes.items() if c.isdigit()}
                    if teeth_boxes:
                        degraded = True
                        break
        if not teeth_boxes:
            if self._audit:
                self._audit.write(
                    {"type": "abort", "case_id": self.bundle.case_id, "reason": "no spatial ground available"}
                )
            raise CaseAbortError(f"case {self.bundle.case_id}: all spatial sources failed")

        if not quadrant_boxes:
            # Derive quadrant boxes from the teeth we have.
            from .ontology import fdi_quadrant

            for q in (1, 2, 3, 4):
                members = [b for c, b in teeth_boxes.items() if fdi_quadrant(c) == q]
                if members:
                    quadrant_boxes[q] = BBox(
                        min(b.x_min for b in members),
                        min(b.y_min for b in members),
                        max(b.x_max for b in members),
                        max(b.y_max for b in members),
                    )

        cm = CoordinateMap(
            teeth={c: ToothGeometry(b) for c, b in teeth_boxes.items()},
            quadrants=quadrant_boxes,
            anatomy=anatomy_boxes,
            tooth_count=len(teeth_boxes),
            missing=frozenset(FDI_CODES - set(teeth_boxes)),
        )
        self.memory.set_coordinate_map(cm)
        self.trace.add(
            TraceEntry(
                PHASE_GLOBAL,
                "coordinate_map_set" + (":degraded" if degraded else ""),
                region=None,
            )
        )

        for desc in self._experts():
            self._invoke(desc.id, "read_image", image, PHASE_GLOBAL, params={"region_key": "full"})
        if self._adapter:
            self._adapter(self, PHASE_GLOBAL)
        return cm

    def run_phase2_quadrants(self) -> list:
        cm = self.memory.coordinate_map
        assert cm is not None, "phase 2 requires the coordinate map"
        for q in sorted(cm.quadrants):
            crop = crop_roi(self.bundle.image, cm.quadrants[q], self.config.quadrant_padding, self.bundle.bounds)
            region = Location.quadrant(q)
            for desc in self._experts():
                result = self._invoke(
                    desc.id,
                    "read_image",
                    crop.ref,
                    PHASE_QUADRANT,
                    region=region,
                    box=crop.box,
                    params={"region_key": f"quadrant:{q}"},
                )
                for ev_id in result.claim_evidence_ids:
                    item = self.memory.get(ev_id)
                    claim = item.claim
                    if claim.location.kind != KIND_TOOTH:
                        self.memory.add_flag(claim.location, claim.field, ev_id)
                    elif claim.location.tooth_code not in cm.teeth:
                        self.memory.add_flag(claim.location, claim.field, ev_id)
        return list(self.memory.flags)

    def run_phase3_teeth(self) -> None:
        cm = self.memory.coordinate_map
        assert cm is not None, "phase 3 requires the coordinate map"
        image = self.bundle.image

        # Geometry-grounded pathology detection over the whole image.
        for desc in self.registry.list(CATEGORY_DETECTION):
            if "detect_pathology" not in desc.capabilities:
                continue
            result = self._invoke(desc.id, "detect_pathology", image, PHASE_TOOTH)
            if not result.response.ok:
                continue
            for entry in result.response.payload.get("boxes", []):
                field_id, value = entry["label"], entry.get("value", "present")
                box = BBox.decode(entry["box"])
                if self._tooth_field(field_id) and cm.teeth:
                    assignment = assign_finding_to_tooth(box, cm.tooth_boxes(), self.config.tau_iou)
                    loc = Location.tooth(assignment.tooth)
                    raw = {"confidence": entry.get("confidence", 1.0), "method": assignment.method}
                else:
                    q = _quadrant_of_box(box, cm.quadrants)
                    loc = Location.quadrant(q) if q else Location.quadrant(1)
                    raw = {"confidence": entry.get("confidence", 1.0), "method": "quadrant-center"}
                ev_id = self.memory.append_evidence(
                    phase=PHASE_TOOTH,
                    source_id=desc.id,
                    kind="claim",
                    region=loc,
                    geometry=box,
                    claim=FindingTriple(loc, field_id, value),
                    raw=raw,
                )
                self.trace.add(
                    TraceEntry(PHASE_TOOTH, "detection-claim", tool=desc.id, region=loc.encode(), evidence_ids=[ev_id])
                )

        # Tooth ROI screening.
        flagged_teeth = {
            f.location.tooth_code for f in self.memory.flags if f.location.kind == KIND_TOOTH
        }
        if self.config.screen_all_teeth:
            codes = sorted(cm.teeth)
        else:
            codes = sorted(c for c in flagged_teeth if c in cm.teeth)
        for code in codes:
            region = Location.tooth(code)
            crop = crop_roi(image, cm.teeth[code].box, self.config.tooth_padding, self.bundle.bounds)
            self.trace.add(TraceEntry(PHASE_TOOTH, "screen-tooth", region=region.encode()))
            for desc in self._experts():
                self._invoke(
                    desc.id,
                    "read_image",
                    crop.ref,
                    PHASE_TOOTH,
                    region=region,
                    box=crop.box,
                    params={"region_key": f"tooth:{code}"},
                )

        # Flag follow-up, including false-negative recovery crops taken from
        # quadrant/anatomy geometry rather than tooth coordinates.
        for flag in self.memory.flags:
            loc = flag.location
            if loc.kind == KIND_TOOTH and loc.tooth_code in cm.teeth and self.config.screen_all_teeth:
                self.trace.add(TraceEntry(PHASE_TOOTH, "flag-covered", region=loc.encode()))
                continue
            crop_box = None
            if loc.kind == "region":
                crop_box = cm.anatomy.get(loc.value)
            else:
                q = loc.coarse_quadrant()
                crop_box = cm.quadrants.get(q) if q else None
            if crop_box is None:
                self.trace.add(TraceEntry(PHASE_TOOTH, "flag-skipped", region=loc.encode()))
                continue
            crop = crop_roi(image, crop_box, self.config.quadrant_padding, self.bundle.bounds)
            self.trace.add(TraceEntry(PHASE_TOOTH, "recovery-crop", region=loc.encode()))
            for desc in self._experts():
                self._invoke(
                    desc.id,
                    "read_image",
                    crop.ref,
                    PHASE_TOOTH,
                    region=loc,
                    box=crop.box,
                    params={"region_key": f"flag:{loc.encode()}"},
                )

    # -- consensus + report ------------------------------------------------------

    def conclude(self) -> Tuple[StructuredReport, list]:
        cm = self.memory.coordinate_map
        eligible = {d.id for d in self.registry.list() if d.vote_eligible}
        records = []
        if self.config.consensus_enabled:
            votes = votes_from_evidence(self.memory.evidence, eligible)
            records = run_consensus(votes, cm, self.schema, self.config.consensus_mode, self.config.tau_iou)
            confirmed = [r.resolved for r in records if r.confirmed]
        else:
            # Single-expert pass-through: first expert's claims, no voting.
            experts = self._experts()
            first = experts[0].id if experts else None
            confirmed = []
            seen = set()
            for item in self.memory.evidence:
                if item.claim is not None and item.source_id == first and item.claim not in seen:
                    seen.add(item.claim)
                    confirmed.append(item.claim)
        if self._audit:
            for record in records:
                self._audit.write({"type": "consensus", "case_id": self.bundle.case_id, "record": record.encode()})
        result = parse_memory(self.bundle.case_id, confirmed, self.schema)
        return result.report, records

    def run(self) -> Tuple[StructuredReport, PlanTrace]:
        self.run_phase1_global()
        if PHASE_QUADRANT in self.config.phases:
            self.run_phase2_quadrants()
        if PHASE_TOOTH in self.config.phases:
            self.run_phase3_teeth()
        report, _ = self.conclude()
        if self._audit:
            self._audit.write(
                {"type": "report", "case_id": self.bundle.case_id, "report": report.encode()}
            )
        return report, self.trace


def report_artifact(report: StructuredReport, config: RunConfig, ontology_version: str) -> dict:
    doc = report.encode()
    doc["meta"] = {
        "config_hash": config.config_hash,
        "ontology_version": ontology_version,
        "seed": config.seed,
    }
    return doc


def run_case(
    bundle_dir,
    config: RunConfig,
    registry: Optional[ToolRegistry] = None,
    schema: Optional[OntologySchema] = None,
    out_dir=None,
) -> Tuple[StructuredReport, PlanTrace]:
    """Run one case bundle end to end, writing artifacts when out_dir is set."""
    bundle = CaseBundle.load(bundle_dir)
    if schema is None:
        schema = load_ontology(config.ontology_path or default_ontology_path())
    if registry is None:
        registry = ToolRegistry.from_manifest(config.manifest_path)
    audit = None
    case_out = None
    if out_dir is not None:
        case_out = Path(out_dir) / bundle.case_id
        case_out.mkdir(parents=True, exist_ok=True)
        audit = AuditLogWriter(case_out / "audit.log")
    planner = CasePlanner(bundle, config, registry, schema, audit)
    try:
        report, trace = planner.run()
    finally:
        if audit:
            audit.close()
    if case_out is not None:
        (case_out / "report.json").write_text(
            canonical_dumps(report_artifact(report, config, schema.version)), encoding="utf-8"
        )
        (case_out / "trace.json").write_text(canonical_dumps(trace.encode()), encoding="utf-8")
    return report, trace


# ---------------------------------------------------------------------------
# Audit replay


class ReplayError(RuntimeError):
    pass


def replay_audit_log(log_path) -> Tuple[StructuredReport, dict]:
    """Re-derive the report from a case audit log.

    Rebuilds memory from the logged evidence (ids must be strictly
    sequential), reruns consensus and parsing under the logged config, and
    cross-checks against the report record embedded in the log. Returns the
    reconstructed report and the header record.
    """
    header = None
    cm = None
    items = []
    logged_report = None
    try:
        lines = Path(log_path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ReplayError(f"cannot read log: {exc}") from exc
    from .memory import EvidenceItem

    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayError(f"line {lineno}: corrupt record: {exc}") from exc
        rtype = record.get("type")
        if rtype == "header":
            header = record
        elif rtype == "coordinate_map":
            cm = CoordinateMap.decode(record["map"])
        elif rtype == "evidence":
            items.append(EvidenceItem.decode(record["item"]))
        elif rtype == "report":
            logged_report = record["report"]
        elif rtype == "abort":
            raise ReplayError(f"log records an aborted case: {record.get('reason')}")
    if header is None:
        raise ReplayError("missing header record")
    if logged_report is None:
        raise ReplayError("truncated log: missing final report record")

    config = RunConfig.decode(header["config"])
    schema = load_ontology(config.ontology_path or default_ontology_path())

    memory = CaseMemory(header["case_id"])
    for item in items:
        try:
            memory.append_item(item)
        except Exception as exc:
            raise ReplayError(f"evidence integrity failure: {exc}") from exc

    if config.consensus_enabled:
        eligible = set(header.get("vote_eligible", ()))
        votes = votes_from_evidence(memory.evidence, eligible)
        records = run_consensus(votes, cm, schema, config.consensus_mode, config.tau_iou)
        confirmed = [r.resolved for r in records if r.confirmed]
    else:
        experts = header.get("experts", [])
        first = experts[0] if experts else None
        confirmed, seen = [], set()
        for item in memory.evidence:
            if item.claim is not None and item.source_id == first and item.claim not in seen:
                seen.add(item.claim)
                confirmed.append(item.claim)

    report = parse_memory(header["case_id"], confirmed, schema).report
    if report.encode() != logged_report:
        raise ReplayError("replayed report differs from the logged report; audit chain broken")
    return report, header
