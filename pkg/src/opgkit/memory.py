"""Append-only, provenance-carrying evidence memory.

One `CaseMemory` per case is the single store shared by the three pipeline
phases; the consensus stage and the parser only ever read from it. Every
item carries a monotonically increasing id and a logical timestamp, so a
replayed evidence sequence reproduces identical state. The memory mirrors
itself to a newline-delimited audit log file that is bit-stable across
reruns with the same inputs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

from .geometry import BBox, PolygonMask
from .jsonutil import canonical_line
from .ontology import FDI_CODES, FindingTriple, Location

PHASE_GLOBAL = "global"
PHASE_QUADRANT = "quadrant"
PHASE_TOOTH = "tooth"
PHASES = (PHASE_GLOBAL, PHASE_QUADRANT, PHASE_TOOTH)


class MemoryError_(RuntimeError):
    """Evidence-store contract violation (unregistered source, double-set
    coordinate map, invariant breach)."""


@dataclass(frozen=True)
class ToothGeometry:
    box: BBox
    mask: Optional[PolygonMask] = None


@dataclass(frozen=True)
class CoordinateMap:
    """Per-case spatial ground established in the global phase."""

    teeth: dict  # FDI code -> ToothGeometry
    quadrants: dict  # 1..4 -> BBox
    anatomy: dict  # region id -> BBox
    tooth_count: int
    missing: frozenset  # FDI codes

    def __post_init__(self):
        if self.tooth_count != len(self.teeth):
            raise MemoryError_(f"tooth_count {self.tooth_count} != |teeth| {len(self.teeth)}")
        if self.missing & set(self.teeth):
            raise MemoryError_("missing set overlaps detected teeth")
        if not (self.missing | set(self.teeth)) <= FDI_CODES:
            raise MemoryError_("teeth/missing contain non-FDI codes")

    def tooth_boxes(self) -> dict:
        return {code: g.box for code, g in self.teeth.items()}

    def encode(self) -> dict:
        return {
            "teeth": {str(c): g.box.encode() for c, g in sorted(self.teeth.items())},
            "quadrants": {str(q): b.encode() for q, b in sorted(self.quadrants.items())},
            "anatomy": {r: b.encode() for r, b in sorted(self.anatomy.items())},
            "tooth_count": self.tooth_count,
            "missing": sorted(self.missing),
        }

    @staticmethod
    def decode(obj: dict) -> "CoordinateMap":
        return CoordinateMap(
            teeth={int(c): ToothGeometry(BBox.decode(b)) for c, b in obj["teeth"].items()},
            quadrants={int(q): BBox.decode(b) for q, b in obj["quadrants"].items()},
            anatomy={r: BBox.decode(b) for r, b in obj["anatomy"].items()},
            tooth_count=int(obj["tooth_count"]),
            missing=frozenset(int(c) for c in obj["missing"]),
        )


@dataclass(frozen=True)
class EvidenceItem:
    """One tool/expert observation with provenance."""

    id: int
    phase: str
    source_id: str
    kind: str  # request kind or synthetic kinds like "claim", "tool-failure"
    region: Optional[Location]
    geometry: Optional[BBox]
    claim: Optional[FindingTriple]
    timestamp: int
    raw: dict

    def encode(self) -> dict:
        return {
            "id": self.id,
            "phase": self.phase,
            "source_id": self.source_id,
            "kind": self.kind,
            "region": self.region.encode() if self.region else None,
            "geometry": self.geometry.encode() if self.geometry else None,
            "claim": self.claim.encode() if self.claim else None,
            "timestamp": self.timestamp,
            "raw": self.raw,
        }

    @staticmethod
    def decode(obj: dict) -> "EvidenceItem":
        return EvidenceItem(
            id=int(obj["id"]),
            phase=obj["phase"],
            source_id=obj["source_id"],
            kind=obj["kind"],
            region=Location.parse(obj["region"]) if obj.get("region") else None,
            geometry=BBox.decode(obj["geometry"]) if obj.get("geometry") else None,
            claim=FindingTriple.decode(obj["claim"]) if obj.get("claim") else None,
            timestamp=int(obj["timestamp"]),
            raw=obj.get("raw") or {},
        )


@dataclass
class Flag:
    """Region marked during quadrant screening for tooth-level follow-up."""

    location: Location
    reason: str  # the implicated clinical field
    evidence_ids: List[int] = field(default_factory=list)

    def encode(self) -> dict:
        return {
            "location": self.location.encode(),
            "reason": self.reason,
            "evidence_ids": list(self.evidence_ids),
        }


class AuditLogWriter:
    """Writes one canonical JSON record per line."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(canonical_line(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class CaseMemory:
    """Single-writer evidence store for one case.

    Appends are serialized through a lock; concurrent tool completions
    commit through this one queue, and readers always see a consistent
    prefix. Nothing is ever mutated or removed.
    """

    def __init__(self, case_id: str, audit_log: Optional[AuditLogWriter] = None):
        self.case_id = case_id
        self._items: List[EvidenceItem] = []
        self._cm: Optional[CoordinateMap] = None
        self.flags: List[Flag] = []
        self._sources: set = set()
        self._lock = threading.Lock()
        self._clock = 0
        self._audit = audit_log

    # -- source registry ----------------------------------------------------

    def register_source(self, source_id: str) -> None:
        self._sources.add(source_id)

    # -- coordinate map ------------------------------------------------------

    @property
    def coordinate_map(self) -> Optional[CoordinateMap]:
        return self._cm

    def set_coordinate_map(self, cm: CoordinateMap) -> None:
        with self._lock:
            if self._cm is not None:
                raise MemoryError_("coordinate map already set; it is immutable")
            self._cm = cm
            if self._audit:
                self._audit.write({"type": "coordinate_map", "case_id": self.case_id, "map": cm.encode()})

    # -- evidence ------------------------------------------------------------

    def append_evidence(
        self,
        phase: str,
        source_id: str,
        kind: str,
        region: Optional[Location] = None,
        geometry: Optional[BBox] = None,
        claim: Optional[FindingTriple] = None,
        raw: Optional[dict] = None,
    ) -> int:
        if phase not in PHASES:
            raise MemoryError_(f"unknown phase {phase!r}")
        if source_id not in self._sources:
            raise MemoryError_(f"unregistered source {source_id!r}")
        with self._lock:
            self._clock += 1
            item = EvidenceItem(
                id=len(self._items) + 1,
                phase=phase,
                source_id=source_id,
                kind=kind,
                region=region,
                geometry=geometry,
                claim=claim,
                timestamp=self._clock,
                raw=raw or {},
            )
            self._items.append(item)
            if self._audit:
                self._audit.write({"type": "evidence", "case_id": self.case_id, "item": item.encode()})
            return item.id

    def append_item(self, item: EvidenceItem) -> None:
        """Replay path: append a pre-built item, enforcing strict id order."""
        with self._lock:
            if item.id != len(self._items) + 1:
                raise MemoryError_(f"evidence id {item.id} breaks the strict sequence")
            self._sources.add(item.source_id)
            self._items.append(item)
            self._clock = max(self._clock, item.timestamp)

    @property
    def evidence(self) -> List[EvidenceItem]:
        with self._lock:
            return list(self._items)

    def get(self, evidence_id: int) -> EvidenceItem:
        return self.evidence[evidence_id - 1]

    def query_evidence(
        self,
        phase: Optional[str] = None,
        source_id: Optional[str] = None,
        location: Optional[Location] = None,
        predicate: Optional[Callable[[EvidenceItem], bool]] = None,
    ) -> List[EvidenceItem]:
        """Filtered view in id order; empty filter returns everything."""
        out = []
        for item in self.evidence:
            if phase is not None and item.phase != phase:
                continue
            if source_id is not None and item.source_id != source_id:
                continue
            if location is not None:
                claim_loc = item.claim.location if item.claim else None
                if item.region != location and claim_loc != location:
                    continue
            if predicate is not None and not predicate(item):
                continue
            out.append(item)
        return out

    # -- flags ----------------------------------------------------------------

    def add_flag(self, location: Location, reason: str, evidence_id: int) -> Flag:
        """Record a region for tooth-level follow-up; duplicate flags merge
        their supporting evidence ids."""
        with self._lock:
            for flag in self.flags:
                if flag.location == location and flag.reason == reason:
                    if evidence_id not in flag.evidence_ids:
                        flag.evidence_ids.append(evidence_id)
                    return flag
            flag = Flag(location, reason, [evidence_id])
            self.flags.append(flag)
            if self._audit:
                self._audit.write({"type": "flag", "case_id": self.case_id, "flag": flag.encode()})
            return flag
