import pytest

from opgkit.evaluator import (
    CaseCounts,
    LEVEL_DETECTION,
    LEVEL_EXACT,
    LEVEL_LOCALIZATION,
    aggregate,
    aggregate_score,
    evaluate_case,
    level_predicate,
    match,
    metrics_table,
)
from opgkit.ontology import FindingTriple, Location, StructuredReport


def report(case_id, *items):
    return StructuredReport.of(
        case_id, [FindingTriple(Location.parse(loc), f, v) for loc, f, v in items]
    )


def test_level_predicates():
    p = FindingTriple(Location.tooth(36), "caries", "icdas-3")
    g_same = FindingTriple(Location.tooth(36), "caries", "icdas-4")
    g_other_loc = FindingTriple(Location.tooth(37), "caries", "icdas-3")
    assert level_predicate(LEVEL_DETECTION, p, g_same)
    assert level_predicate(LEVEL_LOCALIZATION, p, g_same)
    assert not level_predicate(LEVEL_EXACT, p, g_same)
    assert level_predicate(LEVEL_DETECTION, p, g_other_loc)
    assert not level_predicate(LEVEL_LOCALIZATION, p, g_other_loc)
    with pytest.raises(ValueError):
        level_predicate("fuzzy", p, g_same)


def test_hand_checked_case():
    pred = report("c", ("tooth:36", "caries", "icdas-3"), ("tooth:31", "implant", "present"))
    gold = report("c", ("tooth:36", "caries", "icdas-4"))
    counts = evaluate_case(pred, gold)
    assert counts.det_tp == 1 and counts.loc_tp == 1 and counts.exact_tp == 0
    assert counts.cls_total == 1 and counts.cls_correct == 0
    assert counts.n_pred == 2 and counts.n_gold == 1
    bundle = aggregate([counts])
    assert bundle.det == pytest.approx((0.5, 1.0, 2 / 3))
    assert bundle.loc == pytest.approx((0.5, 1.0, 2 / 3))
    assert bundle.em == (0.0, 0.0, 0.0)
    assert bundle.cls_acc == 0.0
    assert bundle.fp_per_case == 2.0


def test_matching_is_one_to_one():
    # two identical predictions can only consume one gold finding
    pred = report("c", ("tooth:36", "caries", "icdas-3"), ("tooth:36", "caries", "icdas-4"))
    gold = report("c", ("tooth:36", "caries", "icdas-3"))
    counts = evaluate_case(pred, gold)
    assert counts.det_tp == 1 and counts.exact_tp == 1


def test_matching_prefers_stricter_pairs():
    # the detection-level matching has a choice; it must keep the exact pair
    # so that TP sets nest across levels
    pred = report("c", ("tooth:36", "caries", "icdas-3"), ("tooth:37", "caries", "icdas-2"))
    gold = report("c", ("tooth:36", "caries", "icdas-3"), ("tooth:38", "caries", "icdas-2"))
    counts = evaluate_case(pred, gold)
    assert counts.det_tp == 2
    assert counts.loc_tp == 1
    assert counts.exact_tp == 1


def test_empty_reports():
    counts = evaluate_case(report("c"), report("c", ("tooth:36", "caries", "icdas-3")))
    assert counts.det_tp == 0 and counts.n_pred == 0
    counts = evaluate_case(report("c", ("tooth:36", "caries", "icdas-3")), report("c"))
    assert counts.det_tp == 0 and counts.n_gold == 0


def test_match_returns_index_pairs():
    pred = report("c", ("tooth:36", "caries", "icdas-3"))
    gold = report("c", ("tooth:36", "caries", "icdas-3"))
    m = match(pred, gold, LEVEL_EXACT)
    assert m.pairs == ((0, 0),) and m.cardinality == 1


def test_score_formula_weights():
    assert aggregate_score(1.0, 0.0, 0.0, 0.0) == pytest.approx(0.5)
    assert aggregate_score(0.0, 1.0, 1.0, 0.0) == pytest.approx(0.4)
    assert aggregate_score(0.0, 0.0, 0.0, 1.0) == pytest.approx(0.1)
    assert aggregate_score(1.0, 1.0, 1.0, 1.0) == pytest.approx(1.0)


def counts_fixture():
    a = CaseCounts("a", n_pred=4, n_gold=5, det_tp=4, loc_tp=3, exact_tp=2, cls_correct=2, cls_total=3)
    b = CaseCounts("b", n_pred=2, n_gold=2, det_tp=1, loc_tp=1, exact_tp=1, cls_correct=1, cls_total=1)
    return [a, b]


def test_micro_aggregation():
    bundle = aggregate(counts_fixture(), averaging="micro")
    assert bundle.det[0] == pytest.approx(5 / 6)  # precision: (4+1)/(4+2)
    assert bundle.det[1] == pytest.approx(5 / 7)  # recall: (4+1)/(5+2)
    assert bundle.cls_acc == pytest.approx(3 / 4)
    assert bundle.fp_per_case == pytest.approx((2 + 1) / 2)
    assert bundle.cases == 2


def test_macro_aggregation():
    bundle = aggregate(counts_fixture(), averaging="macro")
    assert bundle.det[0] == pytest.approx((4 / 4 + 1 / 2) / 2)
    assert bundle.cls_acc == pytest.approx((2 / 3 + 1 / 1) / 2)
    # FP/case does not depend on the averaging mode
    assert bundle.fp_per_case == aggregate(counts_fixture(), averaging="micro").fp_per_case


def test_cls_accuracy_is_none_when_undefined():
    c = CaseCounts("a", n_pred=1, n_gold=1, det_tp=1, loc_tp=0, exact_tp=0, cls_correct=0, cls_total=0)
    bundle = aggregate([c])
    assert bundle.cls_acc is None
    # undefined accuracy contributes zero to the score, not NaN
    assert bundle.score == pytest.approx(0.2 * bundle.det[2])


def test_aggregate_rejects_empty_and_unknown():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate(counts_fixture(), averaging="median")


def test_metrics_table_layout():
    text = metrics_table(aggregate(counts_fixture()), label="demo")
    header, row = text.splitlines()
    assert "Score" in header and "Det-F1" in header
    assert row.startswith("demo")
    assert len(header) == len(row) or abs(len(header) - len(row)) < 8
