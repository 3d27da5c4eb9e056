"""Multi-source consensus: vote clustering, confirmation, and anatomical
conflict resolution.

Candidate findings from vote-eligible sources are clustered by clinical
field and coarse location (quadrant for tooth-level claims, the named
region otherwise). A cluster is confirmed when at least two sources report
the identical triple, or at least three sources agree the finding is
present (default mode; an alternate reading that swaps the two thresholds
is available behind a switch). All sources carry equal weight.

Attribute disputes inside a confirmed cluster resolve as follows: when any
vote carries detection geometry, the location comes from the geometric
tooth assignment against the coordinate map (it overrides any majority);
otherwise the modal claimed location wins, with ties falling back to
quadrant granularity. Value disputes resolve to the modal value, ties to
the lower severity on the field's scale.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

from .geometry import BBox, assign_finding_to_tooth
from .memory import CoordinateMap, EvidenceItem
from .ontology import (
    KIND_QUADRANT,
    KIND_TOOTH,
    FindingTriple,
    Location,
    OntologySchema,
)

MODE_DEFAULT = "identity-2-presence-3"
MODE_ALTERNATE = "identity-3-presence-2"

RESOLUTION_UNANIMOUS = "unanimous"
RESOLUTION_MAJORITY = "majority"
RESOLUTION_CONSTRAINT = "constraint-corrected"
RESOLUTION_REJECTED = "rejected"


@dataclass(frozen=True)
class Vote:
    source_id: str
    candidate: FindingTriple
    evidence_id: int
    geometry: Optional[BBox] = None


@dataclass
class FindingCluster:
    key: tuple  # (field, coarse-location encoding)
    votes: List[Vote]
    resolved: Optional[FindingTriple] = None
    resolution: str = RESOLUTION_REJECTED

    @property
    def sources(self) -> set:
        return {v.source_id for v in self.votes}


def coarse_location(loc: Location) -> str:
    """Cluster granularity: tooth claims coarsen to their quadrant; quadrant
    and region claims stand for themselves."""
    if loc.kind == KIND_TOOTH:
        return Location.quadrant(loc.coarse_quadrant()).encode()
    return loc.encode()


def votes_from_evidence(evidence: Iterable[EvidenceItem], eligible_sources: Optional[set] = None) -> List[Vote]:
    """Extract one vote per (source, candidate) pair from claim evidence."""
    seen = set()
    votes = []
    for item in evidence:
        if item.claim is None:
            continue
        if eligible_sources is not None and item.source_id not in eligible_sources:
            continue
        key = (item.source_id, item.claim)
        if key in seen:
            continue
        seen.add(key)
        votes.append(Vote(item.source_id, item.claim, item.id, item.geometry))
    return votes


def cluster_votes(votes: Iterable[Vote], cm: Optional[CoordinateMap] = None) -> List[FindingCluster]:
    clusters: dict = {}
    for vote in votes:
        key = (vote.candidate.field, coarse_location(vote.candidate.location))
        clusters.setdefault(key, []).append(vote)
    return [FindingCluster(key, clusters[key]) for key in sorted(clusters)]


def confirm(cluster: FindingCluster, mode: str = MODE_DEFAULT) -> bool:
    """Equal-weight confirmation decision for one cluster."""
    identity = max(
        (len({v.source_id for v in cluster.votes if v.candidate == cand}) for cand in {v.candidate for v in cluster.votes}),
        default=0,
    )
    presence = len(cluster.sources)
    if mode == MODE_DEFAULT:
        return identity >= 2 or presence >= 3
    if mode == MODE_ALTERNATE:
        return identity >= 3 or presence >= 2
    raise ValueError(f"unknown consensus mode {mode!r}")


def _modal(counter: Counter):
    """Highest-count items; returns (winners, unique) with winners sorted."""
    if not counter:
        return [], False
    top = max(counter.values())
    winners = sorted(k for k, n in counter.items() if n == top)
    return winners, len(winners) == 1


def resolve_conflict(
    cluster: FindingCluster,
    cm: Optional[CoordinateMap],
    schema: OntologySchema,
    tau_iou: float = 0.05,
) -> Tuple[FindingTriple, str]:
    """Resolve attributes of a confirmed cluster into a single triple.

    Coarse-granularity votes (e.g. a quadrant-level claim inside a cluster
    whose other votes name teeth) count for presence but do not vote on the
    fine location.
    """
    if not cluster.votes:
        raise ValueError("cannot resolve an empty cluster")
    field = cluster.key[0]
    votes = cluster.votes

    if len({v.candidate for v in votes}) == 1:
        return votes[0].candidate, RESOLUTION_UNANIMOUS

    tooth_votes = [v for v in votes if v.candidate.location.kind == KIND_TOOTH]
    loc_votes = tooth_votes if tooth_votes else votes
    loc_counter = Counter(v.candidate.location for v in loc_votes)
    locations, unique = _modal(loc_counter)
    location_disputed = len(loc_counter) > 1

    resolution = RESOLUTION_MAJORITY
    # Content-ordered choice keeps resolution invariant under vote reordering.
    geometries = sorted((v.geometry for v in votes if v.geometry is not None), key=lambda b: b.encode())
    geometry = geometries[0] if geometries else None
    if location_disputed and geometry is not None and cm is not None and cm.teeth:
        assignment = assign_finding_to_tooth(geometry, cm.tooth_boxes(), tau_iou)
        location = Location.tooth(assignment.tooth)
        resolution = RESOLUTION_CONSTRAINT
    elif unique:
        location = locations[0]
    else:
        # Unresolvable fine-location tie: back off to quadrant granularity.
        quadrants = {loc.coarse_quadrant() for loc in locations}
        if len(quadrants) == 1 and None not in quadrants:
            location = Location.quadrant(quadrants.pop())
        else:
            location = locations[0]

    value_counter = Counter(v.candidate.value for v in votes)
    values, value_unique = _modal(value_counter)
    if value_unique:
        value = values[0]
    else:
        # Tie: take the lowest severity on the field's scale (conservative).
        spec = schema.field_spec(field)
        if spec is not None:
            ranked = sorted(values, key=lambda v: spec.values.index(v) if v in spec.values else len(spec.values))
            value = ranked[0]
        else:
            value = values[0]

    return FindingTriple(location, field, value), resolution


@dataclass(frozen=True)
class ConsensusRecord:
    """Audit record of one cluster's decision."""

    key: tuple
    votes: tuple
    confirmed: bool
    resolution: str
    resolved: Optional[FindingTriple]

    def encode(self) -> dict:
        return {
            "cluster": {"field": self.key[0], "coarse_location": self.key[1]},
            "votes": [
                {
                    "source_id": v.source_id,
                    "candidate": v.candidate.encode(),
                    "evidence_id": v.evidence_id,
                    "geometry": v.geometry.encode() if v.geometry else None,
                }
                for v in self.votes
            ],
            "confirmed": self.confirmed,
            "resolution": self.resolution,
            "resolved": self.resolved.encode() if self.resolved else None,
        }


def run_consensus(
    votes: Iterable[Vote],
    cm: Optional[CoordinateMap],
    schema: OntologySchema,
    mode: str = MODE_DEFAULT,
    tau_iou: float = 0.05,
) -> List[ConsensusRecord]:
    """Cluster, confirm, and resolve; one record per cluster in key order."""
    records = []
    for cluster in cluster_votes(votes, cm):
        ordered = tuple(sorted(cluster.votes, key=lambda v: v.evidence_id))
        if confirm(cluster, mode):
            resolved, resolution = resolve_conflict(cluster, cm, schema, tau_iou)
            records.append(ConsensusRecord(cluster.key, ordered, True, resolution, resolved))
        else:
            records.append(ConsensusRecord(cluster.key, ordered, False, RESOLUTION_REJECTED, None))
    return records
