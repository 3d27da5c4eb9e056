"""Triple-based hierarchical report evaluation.

Predicted and gold findings are matched one-to-one (maximum cardinality)
at three nested levels:

* detection     — clinical fields equal (pathology presence)
* localization  — fields and locations equal
* exact         — all three elements equal

Ties between maximum matchings prefer pairs that also satisfy the
next-stricter level, so true-positive sets nest (exact within localization
within detection) and EM_F1 <= Loc_F1 <= Det_F1 holds for every corpus.
Classification accuracy is the fraction of localization-matched pairs
whose values also agree. The aggregate score is

    score = 0.5 * EM_F1 + 0.2 * Det_F1 + 0.2 * Loc_F1 + 0.1 * Cls_Acc
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ontology import FindingTriple, StructuredReport

LEVEL_DETECTION = "detection"
LEVEL_LOCALIZATION = "localization"
LEVEL_EXACT = "exact"
LEVELS = (LEVEL_DETECTION, LEVEL_LOCALIZATION, LEVEL_EXACT)

SCORE_WEIGHTS = {"em_f1": 0.5, "det_f1": 0.2, "loc_f1": 0.2, "cls_acc": 0.1}


def level_predicate(level: str, p: FindingTriple, g: FindingTriple) -> bool:
    if level == LEVEL_DETECTION:
        return p.field == g.field
    if level == LEVEL_LOCALIZATION:
        return p.field == g.field and p.location == g.location
    if level == LEVEL_EXACT:
        return p == g
    raise ValueError(f"unknown level {level!r}")


@dataclass(frozen=True)
class MatchSet:
    level: str
    pairs: tuple  # ((pred index, gold index), ...)

    @property
    def cardinality(self) -> int:
        return len(self.pairs)


def match(pred: StructuredReport, gold: StructuredReport, level: str) -> MatchSet:
    """Maximum-cardinality one-to-one matching under the level predicate.

    Solved as a linear assignment with a dominant unit weight per matched
    pair plus small bonuses for satisfying stricter predicates, so the
    matching is maximum first and prefers stricter pairs second.
    """
    preds = sorted(pred.findings)
    golds = sorted(gold.findings)
    if not preds or not golds:
        return MatchSet(level, ())
    weights = np.zeros((len(preds), len(golds)))
    for i, p in enumerate(preds):
        for j, g in enumerate(golds):
            if not level_predicate(level, p, g):
                continue
            w = 1.0
            if level_predicate(LEVEL_LOCALIZATION, p, g):
                w += 1e-3
            if level_predicate(LEVEL_EXACT, p, g):
                w += 1e-3
            weights[i, j] = w
    rows, cols = linear_sum_assignment(weights, maximize=True)
    pairs = tuple((int(i), int(j)) for i, j in zip(rows, cols) if weights[i, j] > 0)
    return MatchSet(level, pairs)


@dataclass
class CaseCounts:
    """Raw per-case counts; corpus metrics are folds over these."""

    case_id: str
    n_pred: int
    n_gold: int
    det_tp: int
    loc_tp: int
    exact_tp: int
    cls_correct: int  # localization-matched pairs with agreeing values
    cls_total: int  # localization-matched pairs

    def encode(self) -> dict:
        return {
            "case_id": self.case_id,
            "n_pred": self.n_pred,
            "n_gold": self.n_gold,
            "det_tp": self.det_tp,
            "loc_tp": self.loc_tp,
            "exact_tp": self.exact_tp,
            "cls_correct": self.cls_correct,
            "cls_total": self.cls_total,
            "fp_exact": self.n_pred - self.exact_tp,
        }


def evaluate_case(pred: StructuredReport, gold: StructuredReport) -> CaseCounts:
    preds = sorted(pred.findings)
    golds = sorted(gold.findings)
    det = match(pred, gold, LEVEL_DETECTION)
    loc = match(pred, gold, LEVEL_LOCALIZATION)
    exact = match(pred, gold, LEVEL_EXACT)
    cls_total = loc.cardinality
    cls_correct = sum(1 for i, j in loc.pairs if preds[i].value == golds[j].value)
    return CaseCounts(
        case_id=gold.case_id or pred.case_id,
        n_pred=len(preds),
        n_gold=len(golds),
        det_tp=det.cardinality,
        loc_tp=loc.cardinality,
        exact_tp=exact.cardinality,
        cls_correct=cls_correct,
        cls_total=cls_total,
    )


def _prf(tp: float, n_pred: float, n_gold: float) -> Tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if (p + r) else 0.0
    return p, r, f1


def aggregate_score(em_f1: float, det_f1: float, loc_f1: float, cls_acc: float) -> float:
    return (
        SCORE_WEIGHTS["em_f1"] * em_f1
        + SCORE_WEIGHTS["det_f1"] * det_f1
        + SCORE_WEIGHTS["loc_f1"] * loc_f1
        + SCORE_WEIGHTS["cls_acc"] * cls_acc
    )


@dataclass
class MetricsBundle:
    em: Tuple[float, float, float]
    det: Tuple[float, float, float]
    loc: Tuple[float, float, float]
    cls_acc: Optional[float]  # None when no localization-matched pairs exist
    fp_per_case: float
    score: float
    averaging: str = "micro"
    cases: int = 0

    def encode(self) -> dict:
        def prf(t):
            return {"precision": t[0], "recall": t[1], "f1": t[2]}

        return {
            "averaging": self.averaging,
            "cases": self.cases,
            "em": prf(self.em),
            "det": prf(self.det),
            "loc": prf(self.loc),
            "cls_acc": self.cls_acc,
            "fp_per_case": self.fp_per_case,
            "score": self.score,
        }


def aggregate(counts: List[CaseCounts], averaging: str = "micro") -> MetricsBundle:
    """Fold per-case counts into corpus metrics.

    Micro (default) sums TP/FP/FN over cases before computing P/R/F1; macro
    averages per-case P/R/F1. FP/case is always the mean count of exact-level
    unmatched predictions per case.
    """
    if not counts:
        raise ValueError("empty corpus")
    n_cases = len(counts)
    fp_per_case = sum(c.n_pred - c.exact_tp for c in counts) / n_cases

    if averaging == "micro":
        n_pred = sum(c.n_pred for c in counts)
        n_gold = sum(c.n_gold for c in counts)
        em = _prf(sum(c.exact_tp for c in counts), n_pred, n_gold)
        det = _prf(sum(c.det_tp for c in counts), n_pred, n_gold)
        loc = _prf(sum(c.loc_tp for c in counts), n_pred, n_gold)
        cls_total = sum(c.cls_total for c in counts)
        cls_acc = (sum(c.cls_correct for c in counts) / cls_total) if cls_total else None
    elif averaging == "macro":
        def mean3(triples):
            return tuple(sum(t[i] for t in triples) / len(triples) for i in range(3))

        em = mean3([_prf(c.exact_tp, c.n_pred, c.n_gold) for c in counts])
        det = mean3([_prf(c.det_tp, c.n_pred, c.n_gold) for c in counts])
        loc = mean3([_prf(c.loc_tp, c.n_pred, c.n_gold) for c in counts])
        # n/a cases are excluded from the per-case average.
        applicable = [c for c in counts if c.cls_total]
        cls_acc = (
            sum(c.cls_correct / c.cls_total for c in applicable) / len(applicable)
            if applicable
            else None
        )
    else:
        raise ValueError(f"unknown averaging {averaging!r}")

    score = aggregate_score(em[2], det[2], loc[2], cls_acc if cls_acc is not None else 0.0)
    return MetricsBundle(em, det, loc, cls_acc, fp_per_case, score, averaging, n_cases)


def metrics_table(bundle: MetricsBundle, label: str = "corpus") -> str:
    """Plain-text table mirroring the benchmark's column layout."""
    header = (
        f"{'Corpus':<16}{'Score':>7}{'EM-P':>7}{'EM-R':>7}{'EM-F1':>7}{'FP':>7}"
        f"{'Det-P':>7}{'Det-R':>7}{'Det-F1':>8}{'Loc-P':>7}{'Loc-R':>7}{'Loc-F1':>8}{'Cls':>7}"
    )
    cls = f"{bundle.cls_acc:.3f}" if bundle.cls_acc is not None else "n/a"
    row = (
        f"{label:<16}{bundle.score:>7.3f}{bundle.em[0]:>7.3f}{bundle.em[1]:>7.3f}{bundle.em[2]:>7.3f}"
        f"{bundle.fp_per_case:>7.2f}"
        f"{bundle.det[0]:>7.3f}{bundle.det[1]:>7.3f}{bundle.det[2]:>8.3f}"
        f"{bundle.loc[0]:>7.3f}{bundle.loc[1]:>7.3f}{bundle.loc[2]:>8.3f}{cls:>7}"
    )
    return header + "\n" + row
