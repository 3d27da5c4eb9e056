"""Auditable orchestration and evaluation toolkit for panoramic dental
radiograph (OPG) structured reporting.

The package has three layers:

* domain model: FDI dental notation, the (location, field, value) finding
  ontology, and plane geometry for boxes and polygon masks;
* pipeline: a deterministic three-phase evidence-gathering planner over a
  registry of external perception/expert tools, an append-only evidence
  memory with an audit log, consensus voting with anatomical conflict
  resolution, and a constrained report parser;
* evaluation: triple-based hierarchical scoring (exact match plus stepwise
  detection / localization / classification) with an aggregate score.
"""

__version__ = "0.1.0"
