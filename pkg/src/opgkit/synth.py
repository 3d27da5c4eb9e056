"""Deterministic synthetic corpus generator.

Builds fixture-driven cases (tooth/quadrant/anatomy geometry, scripted
detection boxes, scripted expert opinions with seeded error injection)
plus gold reports, so the full pipeline and the evaluation harness can be
exercised end to end without any model or data. Everything derives from a
single seed; regenerating with the same seed reproduces identical files.

Error model per expert: findings are reported with a miss rate, tooth
attributions occasionally shift to a neighbour, graded severities slip by
one step, and each expert hallucinates a couple of findings of its own.
Full-image readings carry only quadrant-level locations for tooth-scoped
findings (no FDI grounding without the spatial tools), which is what the
spatial-ablation tests rely on.
"""

from __future__ import annotations

import random
from pathlib import Path

from .jsonutil import write_canonical
from .ontology import FDI_CODES, fdi_position, fdi_quadrant

EXPERTS = ("expert-alpha", "expert-beta", "expert-gamma", "expert-delta")
DETECTOR = "detect-patho"
SPATIAL = "spatial-yolo"
SEGMENTER = "spatial-seg"

IMAGE_W = 2900.0
IMAGE_H = 1400.0

DETECTABLE_FIELDS = {"caries", "periapical-lesion", "apical-filling"}

# Image-space slot order: patient's right is image-left, so the upper row
# runs 18..11 then 21..28 and the lower row 48..41 then 31..38.
_UPPER = [18, 17, 16, 15, 14, 13, 12, 11, 21, 22, 23, 24, 25, 26, 27, 28]
_LOWER = [48, 47, 46, 45, 44, 43, 42, 41, 31, 32, 33, 34, 35, 36, 37, 38]


def tooth_box(code: int) -> list:
    row, y0, y1 = (_UPPER, 350.0, 620.0) if code // 10 in (1, 2) else (_LOWER, 780.0, 1050.0)
    slot = row.index(code)
    x0 = 250.0 + slot * 150.0
    return [x0, y0, x0 + 130.0, y1]


def quadrant_box(q: int) -> list:
    left = q in (1, 4)  # patient right = image left
    x0, x1 = (230.0, 1450.0) if left else (1450.0, 2670.0)
    y0, y1 = (320.0, 700.0) if q in (1, 2) else (720.0, 1080.0)
    return [x0, y0, x1, y1]


def anatomy_boxes() -> dict:
    return {
        "maxilla": [230.0, 300.0, 2670.0, 700.0],
        "mandible": [230.0, 700.0, 2670.0, 1250.0],
        "maxillary-sinus-right": [350.0, 150.0, 1100.0, 420.0],
        "maxillary-sinus-left": [1800.0, 150.0, 2550.0, 420.0],
        "mandibular-canal-right": [300.0, 950.0, 1200.0, 1150.0],
        "mandibular-canal-left": [1700.0, 950.0, 2600.0, 1150.0],
        "tmj-right": [100.0, 100.0, 400.0, 350.0],
        "tmj-left": [2500.0, 100.0, 2800.0, 350.0],
    }


def _inset(box: list, frac: float) -> list:
    dx = (box[2] - box[0]) * frac
    dy = (box[3] - box[1]) * frac
    return [box[0] + dx, box[1] + dy, box[2] - dx, box[3] - dy]


def _neighbor(code: int, rng: random.Random) -> int:
    pos = fdi_position(code)
    candidates = [c for c in (code - 1, code + 1) if c in FDI_CODES and abs(fdi_position(c) - pos) == 1]
    return rng.choice(candidates) if candidates else code


def _slip(values: list, value: str, rng: random.Random) -> str:
    i = values.index(value)
    j = max(0, min(len(values) - 1, i + rng.choice((-1, 1))))
    return values[j]


GRADES = {
    "caries": ["icdas-1", "icdas-2", "icdas-3", "icdas-4", "icdas-5", "icdas-6"],
    "periapical-lesion": ["pai-2", "pai-3", "pai-4", "pai-5"],
    "alveolar-bone-loss": ["mild", "moderate", "severe"],
}


def generate_case(case_id: str, seed: int, root_remnant: bool = False) -> dict:
    """Build one case: fixture, gold findings, and metadata."""
    rng = random.Random(f"{seed}:{case_id}")

    teeth = set(FDI_CODES)
    wisdom = [18, 28, 38, 48]
    missing = set(rng.sample(wisdom, k=rng.randint(0, 2)))
    others = sorted(teeth - set(wisdom))
    missing |= set(rng.sample(others, k=rng.randint(0, 2)))
    # One missing tooth per quadrant: same-field claims inside a quadrant
    # share a consensus cluster, so co-located picks would collapse.
    by_quadrant: dict = {}
    for code in sorted(missing):
        by_quadrant.setdefault(fdi_quadrant(code), code)
    missing = set(by_quadrant.values())
    remnant_tooth = None
    if root_remnant:
        remnant_tooth = 46
        missing.discard(46)
        teeth.discard(46)
    teeth -= missing

    gold = []  # (location encoding, field, value)
    for code in sorted(missing):
        gold.append((f"tooth:{code}", "missing-tooth", "present"))
    if remnant_tooth:
        gold.append((f"tooth:{remnant_tooth}", "root-remnant", "present"))

    tooth_findings = []  # tooth-scoped abnormal findings on mapped teeth
    pool = sorted(teeth)
    for code in rng.sample(pool, k=rng.randint(1, 3)):
        tooth_findings.append((code, "caries", rng.choice(GRADES["caries"][1:5])))
    for code in rng.sample(pool, k=rng.randint(0, 2)):
        tooth_findings.append((code, "periapical-lesion", rng.choice(GRADES["periapical-lesion"])))
    for code in [c for c in wisdom if c in teeth]:
        if rng.random() < 0.4:
            tooth_findings.append((code, "impaction", "present"))
    for field in ("implant", "restoration", "root-canal-treatment", "apical-filling"):
        if rng.random() < 0.4:
            tooth_findings.append((rng.choice(pool), field, "present"))
    # One finding per (field, quadrant): see the missing-teeth note above.
    seen = set()
    tooth_findings = [
        t
        for t in tooth_findings
        if (t[1], fdi_quadrant(t[0])) not in seen and not seen.add((t[1], fdi_quadrant(t[0])))
    ]
    for code, field, value in sorted(tooth_findings):
        gold.append((f"tooth:{code}", field, value))

    gross_findings = []  # quadrant-scoped findings
    for q in sorted(rng.sample((1, 2, 3, 4), k=rng.randint(0, 2))):
        gross_findings.append((q, "alveolar-bone-loss", rng.choice(GRADES["alveolar-bone-loss"])))
    for q, field, value in gross_findings:
        gold.append((f"quadrant:{q}", field, value))

    # --- scripted detections (geometry-grounded, always correct tooth) ----
    detections = []
    for code, field, value in sorted(tooth_findings):
        if field in DETECTABLE_FIELDS and rng.random() < 0.8:
            detections.append(
                {
                    "field": field,
                    "value": value,
                    "box": _inset(tooth_box(code), 0.2),
                    "confidence": round(rng.uniform(0.6, 0.99), 2),
                }
            )

    # --- scripted expert opinions ------------------------------------------
    opinions: dict = {}
    for expert in EXPERTS:
        erng = random.Random(f"{seed}:{case_id}:{expert}")
        by_region: dict = {}

        def add(region_key, loc, field, value, text=None):
            by_region.setdefault(region_key, []).append(
                {"location": loc, "field": field, "value": value, "text": text}
            )

        # Full image: missing teeth keep FDI grounding, everything else is
        # quadrant-level only.
        for code in sorted(missing):
            if erng.random() < 0.95:
                add("full", f"tooth:{code}", "missing-tooth", "present")
        for code, field, value in sorted(tooth_findings):
            if erng.random() < 0.8:
                add("full", f"quadrant:{fdi_quadrant(code)}", field, value)
        for q, field, value in gross_findings:
            if erng.random() < 0.85:
                add("full", f"quadrant:{q}", field, value)

        # Quadrant crops: gross pathology screening.
        for q, field, value in gross_findings:
            if erng.random() < 0.9:
                v = _slip(GRADES[field], value, erng) if erng.random() < 0.15 else value
                add(f"quadrant:{q}", f"quadrant:{q}", field, v)
                add(f"flag:quadrant:{q}", f"quadrant:{q}", field, v)
        if remnant_tooth and erng.random() < 0.95:
            q = fdi_quadrant(remnant_tooth)
            add(f"quadrant:{q}", f"quadrant:{q}", "root-remnant", "present",
                text="suspected retained root in edentulous area")
            add(f"flag:quadrant:{q}", f"tooth:{remnant_tooth}", "root-remnant", "present")

        # Tooth ROIs: detailed findings with injected errors.
        for code, field, value in sorted(tooth_findings):
            if erng.random() < 0.9:
                claimed_code = _neighbor(code, erng) if erng.random() < 0.08 else code
                v = value
                if field in GRADES and erng.random() < 0.1:
                    v = _slip(GRADES[field], value, erng)
                add(f"tooth:{code}", f"tooth:{claimed_code}", field, v)
        # Hallucinations: unique to each expert, so consensus starves them.
        for _ in range(erng.randint(1, 2)):
            code = erng.choice(pool)
            field = erng.choice(("caries", "restoration", "periapical-lesion"))
            value = erng.choice(GRADES[field]) if field in GRADES else "present"
            add(f"tooth:{code}", f"tooth:{code}", field, value, text="hallucinated")

        opinions[expert] = {k: by_region[k] for k in sorted(by_region)}

    fixture = {
        "case_id": case_id,
        "image": {"ref": case_id, "width": IMAGE_W, "height": IMAGE_H},
        "teeth": {str(c): tooth_box(c) for c in sorted(teeth)},
        "quadrants": {str(q): quadrant_box(q) for q in (1, 2, 3, 4)},
        "anatomy": anatomy_boxes(),
        "detections": detections,
        "opinions": opinions,
    }
    gold_report = {
        "case_id": case_id,
        "findings": [
            {"location": loc, "field": field, "value": value}
            for loc, field, value in sorted(set(gold))
        ],
    }
    meta = {"case_id": case_id, "image": case_id, "width": IMAGE_W, "height": IMAGE_H}
    return {"fixture": fixture, "gold": gold_report, "case": meta}


def default_manifest(cases_endpoint: str = "mock:cases") -> dict:
    tools = [
        {
            "id": SPATIAL,
            "category": "spatial",
            "endpoint": cases_endpoint,
            "capabilities": ["detect_teeth", "detect_quadrants", "detect_anatomy", "enumerate_fdi"],
            "vote_eligible": False,
        },
        {
            "id": SEGMENTER,
            "category": "spatial",
            "endpoint": cases_endpoint,
            "capabilities": ["segment_tooth"],
            "vote_eligible": False,
        },
        {
            "id": DETECTOR,
            "category": "detection",
            "endpoint": cases_endpoint,
            "capabilities": ["detect_pathology", "detect_teeth"],
            "vote_eligible": True,
        },
    ]
    for expert in EXPERTS:
        tools.append(
            {
                "id": expert,
                "category": "expert",
                "endpoint": cases_endpoint,
                "capabilities": ["read_image"],
                "vote_eligible": True,
            }
        )
    return {"tools": tools}


def generate_corpus(out_dir, n_cases: int = 20, seed: int = 7) -> Path:
    """Write a corpus: ``cases/<id>/{case,fixture,gold}.json`` + manifest."""
    out_dir = Path(out_dir)
    cases_dir = out_dir / "cases"
    cases_dir.mkdir(parents=True, exist_ok=True)
    for i in range(1, n_cases + 1):
        case_id = f"case-{i:03d}"
        bundle = generate_case(case_id, seed, root_remnant=(i == 1))
        case_dir = cases_dir / case_id
        case_dir.mkdir(parents=True, exist_ok=True)
        write_canonical(case_dir / "case.json", bundle["case"])
        write_canonical(case_dir / "fixture.json", bundle["fixture"])
        write_canonical(case_dir / "gold.json", bundle["gold"])
    write_canonical(out_dir / "manifest.json", default_manifest("mock:cases"))
    return out_dir
