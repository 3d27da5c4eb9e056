"""Constrained report parser.

Two entry points produce schema-valid structured reports:

* ``parse_memory``     — validates/dedupes the consensus output for a case;
* ``parse_free_text``  — deterministic lexicon/grammar extraction from
  natural-language report text (used by the evaluation harness).

Everything emitted passes ``validate_triple``; whatever does not map into
the ontology lands in the ``rejected`` list with a reason, never in the
report. An optional external adapter may propose extra candidates, but its
proposals pass the exact same validator.

Free-text grammar, per sentence (split on ``.``, ``;``, newlines):
negation-cued sentences yield nothing; locations resolve longest-match
first (expansion words, tooth-name phrases, regions, quadrant phrases, FDI
numerals); field terms resolve longest-match; graded fields take an
explicit scale mention if present, else a severity adjective, else the
lexicon default. Findings are the cross product of a sentence's locations
and fields, filtered by the validator.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Tuple

from .jsonutil import load_json
from .ontology import (
    FindingTriple,
    Location,
    OntologySchema,
    StructuredReport,
    validate_triple,
)


class LexiconError(ValueError):
    pass


@dataclass
class Lexicon:
    negation_cues: list
    terms: list  # (phrase, field, fixed value or None), longest first
    value_patterns: dict  # field -> (compiled regex, value template)
    modifiers: dict  # field -> {word: value}
    defaults: dict  # field -> value
    quadrant_words: dict
    position_words: dict
    regions: dict  # phrase -> region id
    expansions: dict  # word -> [location encodings]
    render: dict  # field -> {value: phrase}

    @staticmethod
    def load(path) -> "Lexicon":
        doc = load_json(path)
        try:
            terms = sorted(
                ((t["phrase"].lower(), t["field"], t["value"]) for t in doc["terms"]),
                key=lambda t: (-len(t[0]), t[0]),
            )
            patterns = {
                f: (re.compile(spec["pattern"]), spec["value"])
                for f, spec in doc.get("value_patterns", {}).items()
            }
            return Lexicon(
                negation_cues=[c.lower() for c in doc.get("negation_cues", [])],
                terms=terms,
                value_patterns=patterns,
                modifiers={f: dict(m) for f, m in doc.get("modifiers", {}).items()},
                defaults=dict(doc.get("defaults", {})),
                quadrant_words=dict(doc["quadrant_words"]),
                position_words=dict(doc["position_words"]),
                regions=dict(doc["regions"]),
                expansions=dict(doc.get("expansions", {})),
                render=doc.get("render", {}),
            )
        except (KeyError, re.error, TypeError) as exc:
            raise LexiconError(f"malformed lexicon {path}: {exc}") from exc


def default_lexicon_path() -> Path:
    return Path(resources.files("opgkit").joinpath("data/lexicon.json"))


def load_default_lexicon() -> Lexicon:
    return Lexicon.load(default_lexicon_path())


@dataclass
class ParseResult:
    report: StructuredReport
    rejected: List[Tuple[str, str]] = dc_field(default_factory=list)
    source_mode: str = "memory"


def parse_memory(
    case_id: str,
    confirmed: Iterable[FindingTriple],
    schema: OntologySchema,
) -> ParseResult:
    """Validate and dedupe consensus-confirmed triples into a report."""
    findings = set()
    rejected = []
    for triple in confirmed:
        res = validate_triple(triple, schema)
        if res:
            findings.add(triple)
        else:
            rejected.append((str(triple.encode()), res.reason))
    return ParseResult(StructuredReport.of(case_id, findings), rejected, "memory")


# ---------------------------------------------------------------------------
# Free text


def _mask(text: str, start: int, end: int) -> str:
    return text[:start] + "\x00" * (end - start) + text[end:]


def _find_all(pattern: str, text: str):
    return list(re.finditer(pattern, text))


class FreeTextParser:
    def __init__(self, lexicon: Lexicon, schema: OntologySchema):
        self.lexicon = lexicon
        self.schema = schema
        self._negation = re.compile(
            r"\b(" + "|".join(re.escape(c) for c in lexicon.negation_cues) + r")\b"
        ) if lexicon.negation_cues else None
        qwords = sorted(lexicon.quadrant_words, key=len, reverse=True)
        pwords = sorted(lexicon.position_words, key=len, reverse=True)
        self._tooth_name = re.compile(
            r"\b(" + "|".join(re.escape(q) for q in qwords) + r")\s+("
            + "|".join(re.escape(p) for p in pwords) + r")\b"
        )
        self._quadrant = re.compile(
            r"\b(" + "|".join(re.escape(q) for q in qwords) + r")(\s+quadrant)?\b"
        )
        self._fdi = re.compile(r"\b([1-4][1-8])\b")

    def _locations(self, sentence: str) -> Tuple[list, str]:
        found: List[Location] = []
        text = sentence

        for word, targets in self.lexicon.expansions.items():
            for m in _find_all(r"\b" + re.escape(word) + r"\b", text):
                found.extend(Location.parse(t) for t in targets)
                text = _mask(text, m.start(), m.end())

        for m in self._tooth_name.finditer(text):
            q = self.lexicon.quadrant_words[m.group(1)]
            p = self.lexicon.position_words[m.group(2)]
            found.append(Location.tooth(q * 10 + p))
        text = self._tooth_name.sub(lambda m: "\x00" * len(m.group(0)), text)

        for phrase in sorted(self.lexicon.regions, key=len, reverse=True):
            for m in _find_all(r"\b" + re.escape(phrase) + r"\b", text):
                found.append(Location.region(self.lexicon.regions[phrase]))
                text = _mask(text, m.start(), m.end())

        for m in self._quadrant.finditer(text):
            found.append(Location.quadrant(self.lexicon.quadrant_words[m.group(1)]))
        text = self._quadrant.sub(lambda m: "\x00" * len(m.group(0)), text)

        for m in self._fdi.finditer(text):
            found.append(Location.tooth(int(m.group(1))))
        text = self._fdi.sub(lambda m: "\x00" * len(m.group(0)), text)

        unique = sorted(set(found))
        return unique, text

    def _value_for(self, field_id: str, sentence: str) -> Optional[str]:
        pat = self.lexicon.value_patterns.get(field_id)
        if pat:
            m = pat[0].search(sentence)
            if m:
                return pat[1].format(m.group(1))
        for word, value in sorted(self.lexicon.modifiers.get(field_id, {}).items()):
            if re.search(r"\b" + re.escape(word) + r"\b", sentence):
                return value
        return self.lexicon.defaults.get(field_id)

    def _fields(self, sentence: str, masked: str) -> list:
        out = []
        text = masked
        for phrase, field_id, fixed in self.lexicon.terms:
            for m in _find_all(r"\b" + re.escape(phrase) + r"\b", text):
                value = fixed if fixed is not None else self._value_for(field_id, sentence)
                out.append((field_id, value))
                text = _mask(text, m.start(), m.end())
        return out

    def parse(self, text: str, adapter: Optional[Callable[[str], list]] = None) -> ParseResult:
        findings = set()
        rejected: List[Tuple[str, str]] = []
        for raw_sentence in re.split(r"[.;\n]+", text):
            sentence = raw_sentence.strip()
            if not sentence:
                continue
            lowered = sentence.lower()
            if self._negation and self._negation.search(lowered):
                rejected.append((sentence, "negated statement"))
                continue
            locations, masked = self._locations(lowered)
            pairs = self._fields(lowered, masked)
            if not pairs:
                rejected.append((sentence, "no ontology mapping"))
                continue
            if not locations:
                rejected.append((sentence, "no resolvable location"))
                continue
            for field_id, value in pairs:
                if value is None:
                    rejected.append((sentence, f"no value resolvable for field {field_id!r}"))
                    continue
                for loc in locations:
                    cand = FindingTriple(loc, field_id, value)
                    res = validate_triple(cand, self.schema)
                    if res:
                        findings.add(cand)
                    else:
                        rejected.append((sentence, res.reason))
        if adapter is not None:
            for cand in adapter(text):
                res = validate_triple(cand, self.schema)
                if res:
                    findings.add(cand)
                else:
                    rejected.append((str(cand.encode()), res.reason))
        return ParseResult(StructuredReport.of("", findings), rejected, "free-text")


def parse_free_text(
    text: str,
    schema: OntologySchema,
    lexicon: Lexicon,
    case_id: str = "",
    adapter: Optional[Callable[[str], list]] = None,
) -> ParseResult:
    result = FreeTextParser(lexicon, schema).parse(text, adapter)
    return ParseResult(
        StructuredReport.of(case_id, result.report.findings), result.rejected, "free-text"
    )


# ---------------------------------------------------------------------------
# Template renderer (round-trip counterpart of the free-text grammar)


def _render_location(loc: Location, lexicon: Lexicon) -> str:
    if loc.kind == "tooth":
        return f"Tooth {loc.value}"
    if loc.kind == "quadrant":
        words = {q: w for w, q in lexicon.quadrant_words.items()}
        return f"The {words[int(loc.value)]} quadrant"
    phrases = {rid: phrase for phrase, rid in lexicon.regions.items()}
    return f"The {phrases[loc.value]}"


def render_report(report: StructuredReport, lexicon: Lexicon) -> str:
    """Canonical natural-language rendering, one sentence per finding."""
    lines = []
    for t in sorted(report.findings):
        phrase = lexicon.render.get(t.field, {}).get(t.value)
        if phrase is None:
            raise LexiconError(f"no render phrase for ({t.field}, {t.value})")
        lines.append(f"{_render_location(t.location, lexicon)}: {phrase}.")
    return "\n".join(lines)
