"""Clinical ontology: FDI tooth notation, locations, fields, values.

Every finding in the system is a (location, field, value) triple validated
against a loadable schema. The bundled default schema covers the common
panoramic-radiograph finding types (caries on ICDAS, periapical status on
PAI, bone loss, impaction, implants, missing teeth, root remnants, and so
on); deployments may ship their own schema file instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .jsonutil import canonical_dumps, load_json

# Permanent dentition only: quadrants 1-4, positions 1-8 (ISO 3950).
QUADRANTS = (1, 2, 3, 4)
FDI_CODES = frozenset(q * 10 + p for q in QUADRANTS for p in range(1, 9))

KIND_TOOTH = "tooth"
KIND_QUADRANT = "quadrant"
KIND_REGION = "region"
LOCATION_KINDS = (KIND_TOOTH, KIND_QUADRANT, KIND_REGION)


class OntologyError(ValueError):
    """Raised for malformed schema files or invalid domain values."""


def is_valid_fdi(code: int) -> bool:
    return code in FDI_CODES


def require_fdi(code: int) -> int:
    if code not in FDI_CODES:
        raise OntologyError(f"invalid FDI code: {code!r}")
    return code


def fdi_quadrant(code: int) -> int:
    """Quadrant digit (1-4) of a valid FDI code."""
    return require_fdi(code) // 10


def fdi_position(code: int) -> int:
    """Position digit (1-8) of a valid FDI code."""
    return require_fdi(code) % 10


@dataclass(frozen=True, order=True)
class Location:
    """Anatomical target of a finding: a tooth, a quadrant, or a named
    global region (e.g. maxillary sinus)."""

    kind: str
    value: str

    @staticmethod
    def tooth(code: int) -> "Location":
        return Location(KIND_TOOTH, str(require_fdi(int(code))))

    @staticmethod
    def quadrant(q: int) -> "Location":
        if int(q) not in QUADRANTS:
            raise OntologyError(f"invalid quadrant: {q!r}")
        return Location(KIND_QUADRANT, str(int(q)))

    @staticmethod
    def region(region_id: str) -> "Location":
        return Location(KIND_REGION, region_id)

    @staticmethod
    def parse(text: str) -> "Location":
        """Parse the wire encoding: "tooth:38", "quadrant:3", "region:mandible"."""
        kind, _, value = text.partition(":")
        if not value:
            raise OntologyError(f"malformed location: {text!r}")
        if kind == KIND_TOOTH:
            return Location.tooth(int(value))
        if kind == KIND_QUADRANT:
            return Location.quadrant(int(value))
        if kind == KIND_REGION:
            return Location.region(value)
        raise OntologyError(f"unknown location kind: {text!r}")

    def encode(self) -> str:
        return f"{self.kind}:{self.value}"

    @property
    def tooth_code(self) -> Optional[int]:
        return int(self.value) if self.kind == KIND_TOOTH else None

    def coarse_quadrant(self) -> Optional[int]:
        """Quadrant containing this location, if one is defined."""
        if self.kind == KIND_TOOTH:
            return fdi_quadrant(int(self.value))
        if self.kind == KIND_QUADRANT:
            return int(self.value)
        return None


@dataclass(frozen=True, order=True)
class FindingTriple:
    """One claimed finding. Construction does not validate against a schema;
    candidate claims from tools flow through the same type and are validated
    by the parser before they can enter a report."""

    location: Location
    field: str
    value: str

    def encode(self) -> dict:
        return {"location": self.location.encode(), "field": self.field, "value": self.value}

    @staticmethod
    def decode(obj: dict) -> "FindingTriple":
        return FindingTriple(Location.parse(obj["location"]), obj["field"], obj["value"])


@dataclass(frozen=True)
class StructuredReport:
    """Sparse per-case report: the set of abnormal findings only."""

    case_id: str
    findings: frozenset

    @staticmethod
    def of(case_id: str, findings: Iterable[FindingTriple]) -> "StructuredReport":
        return StructuredReport(case_id, frozenset(findings))

    def encode(self) -> dict:
        return {
            "case_id": self.case_id,
            "findings": [t.encode() for t in sorted(self.findings)],
        }

    def to_text(self) -> str:
        return canonical_dumps(self.encode())

    @staticmethod
    def decode(obj: dict) -> "StructuredReport":
        return StructuredReport.of(obj["case_id"], (FindingTriple.decode(f) for f in obj["findings"]))

    @staticmethod
    def load(path) -> "StructuredReport":
        return StructuredReport.decode(load_json(path))


@dataclass(frozen=True)
class FieldSpec:
    id: str
    values: tuple
    normal_values: tuple
    locations: tuple


@dataclass(frozen=True)
class OntologySchema:
    """Immutable, validated schema defining the location/field/value spaces."""

    version: str
    regions: tuple
    fields: dict  # field id -> FieldSpec

    def field_spec(self, field_id: str) -> Optional[FieldSpec]:
        return self.fields.get(field_id)

    def severity_rank(self, field_id: str, value: str) -> int:
        """Index of a value in its field's (low-to-high) scale."""
        return self.fields[field_id].values.index(value)


def _parse_schema(doc: dict, origin: str) -> OntologySchema:
    if not isinstance(doc, dict):
        raise OntologyError(f"{origin}: schema document must be an object")
    for key in ("version", "regions", "fields"):
        if key not in doc:
            raise OntologyError(f"{origin}: missing key {key!r}")
    regions = list(doc["regions"])
    if len(set(regions)) != len(regions):
        raise OntologyError(f"{origin}: duplicate region ids")
    fields: dict = {}
    for raw in doc["fields"]:
        fid = raw.get("id")
        if not fid:
            raise OntologyError(f"{origin}: field without id")
        if fid in fields:
            raise OntologyError(f"{origin}: duplicate field id {fid!r}")
        values = tuple(raw.get("values", ()))
        if not values:
            raise OntologyError(f"{origin}: field {fid!r} has an empty value list")
        if len(set(values)) != len(values):
            raise OntologyError(f"{origin}: field {fid!r} has duplicate values")
        locations = tuple(raw.get("locations", ()))
        unknown = set(locations) - set(LOCATION_KINDS)
        if not locations or unknown:
            raise OntologyError(f"{origin}: field {fid!r} has invalid location kinds {sorted(unknown)}")
        fields[fid] = FieldSpec(
            id=fid,
            values=values,
            normal_values=tuple(raw.get("normal_values", ())),
            locations=locations,
        )
    return OntologySchema(version=str(doc["version"]), regions=tuple(regions), fields=fields)


def load_ontology(path) -> OntologySchema:
    """Load and validate an ontology schema file (JSON)."""
    path = Path(path)
    try:
        doc = load_json(path)
    except Exception as exc:
        raise OntologyError(f"{path}: cannot parse schema: {exc}") from exc
    return _parse_schema(doc, str(path))


def default_ontology_path() -> Path:
    return Path(resources.files("opgkit").joinpath("data/ontology.json"))


def load_default_ontology() -> OntologySchema:
    return load_ontology(default_ontology_path())


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


ACCEPT = ValidationResult(True)


def validate_triple(triple: FindingTriple, schema: OntologySchema) -> ValidationResult:
    """Total accept/reject check of one triple against the schema."""
    spec = schema.field_spec(triple.field)
    if spec is None:
        return ValidationResult(False, f"unknown field {triple.field!r}")
    loc = triple.location
    if loc.kind not in LOCATION_KINDS:
        return ValidationResult(False, f"unknown location kind {loc.kind!r}")
    if loc.kind == KIND_TOOTH and not is_valid_fdi(int(loc.value)):
        return ValidationResult(False, f"invalid FDI code {loc.value}")
    if loc.kind == KIND_REGION and loc.value not in schema.regions:
        return ValidationResult(False, f"unknown region {loc.value!r}")
    if loc.kind not in spec.locations:
        return ValidationResult(False, f"field {triple.field!r} not applicable to {loc.kind} locations")
    if triple.value in spec.normal_values:
        return ValidationResult(False, f"value {triple.value!r} denotes a normal state (reports are sparse)")
    if triple.value not in spec.values:
        return ValidationResult(False, f"value {triple.value!r} outside the {triple.field!r} scale")
    return ACCEPT


def lint_report(report: StructuredReport, schema: OntologySchema) -> list:
    """Non-fatal report checks: schema violations and contradictory
    duplicate (location, field) pairs carrying different values."""
    problems = []
    for t in sorted(report.findings):
        res = validate_triple(t, schema)
        if not res:
            problems.append((t, res.reason))
    seen: dict = {}
    for t in sorted(report.findings):
        seen.setdefault((t.location, t.field), []).append(t.value)
    for (loc, fid), values in sorted(seen.items()):
        if len(values) > 1:
            problems.append(
                (FindingTriple(loc, fid, values[0]),
                 f"contradictory values for ({loc.encode()}, {fid}): {sorted(values)}")
            )
    return problems
