import json
import os

import pytest

from groundcxr.errors import DataError, DomainError
from groundcxr.metrics.evaluate import evaluate_run, load_ground_truth

FIXTURE = os.path.join(os.path.dirname(__file__), "fixtures", "eval3")


def fixture(name):
    return os.path.join(FIXTURE, name)


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(path)


def test_hand_computed_localization():
    expected = json.load(open(fixture("expected.json")))
    rep = evaluate_run(fixture("gt.jsonl"), fixture("pred.jsonl"), "loc")
    for t in ("0.3", "0.4", "0.5"):
        detail = rep["per_class"][f"accuracy@{t}"]
        assert detail["eligible"] == expected["eligible"]
        assert detail["hits"] == expected["hits"][t]
        assert rep["metrics"][f"accuracy@{t}"] == pytest.approx(expected["accuracy"][t], abs=1e-12)
    assert rep["warnings"] == expected["warnings"]
    assert any("no prediction" in f for f in rep["flags"])


def test_missing_study_counts_as_false_negatives():
    rep = evaluate_run(fixture("gt.jsonl"), fixture("pred.jsonl"), "cls", stage=1)
    assert rep["per_class"]["Nodule/Mass"] == {"precision": 0.0, "recall": 0.0, "f1-score": 0.0, "support": 1}


def test_self_evaluation_is_perfect():
    gt = fixture("gt.jsonl")
    loc = evaluate_run(gt, gt, "loc")
    assert all(v == 1.0 for v in loc["metrics"].values())
    for stage in (1, 2):
        cls = evaluate_run(gt, gt, "cls", stage=stage)
        for name in ("micro avg", "weighted avg", "samples avg"):
            assert cls["metrics"][name]["f1-score"] == 1.0
    text = evaluate_run(gt, gt, "text", stage=1)
    assert all(text["metrics"][k] == 1.0 for k in ("ROUGE-1", "ROUGE-2", "ROUGE-L", "ROUGE-LSUM", "BLEU-1", "BLEU-4"))


def test_duplicate_ids_rejected(tmp_path):
    rows = [{"id": "a", "findings": [], "global": ["COPD"]}] * 2
    with pytest.raises(DataError, match=":2:"):
        load_ground_truth(write_jsonl(tmp_path / "gt.jsonl", rows))
    gt = write_jsonl(tmp_path / "gt1.jsonl", rows[:1])
    pred = write_jsonl(tmp_path / "pred.jsonl", [{"id": "a", "text": "COPD"}, {"id": "a", "text": "COPD"}])
    with pytest.raises(DataError, match="duplicate"):
        evaluate_run(gt, pred, "cls")


def test_malformed_line_reports_number(tmp_path):
    path = tmp_path / "gt.jsonl"
    path.write_text('{"id": "a", "global": ["COPD"]}\n\n{"id": \n')
    with pytest.raises(DataError, match=":3:"):
        load_ground_truth(str(path))


def test_bad_ground_truth_rows(tmp_path):
    for row in ({"id": "a", "findings": [{"label": "Dragon", "box": [1, 2, 3, 4]}]},
                {"id": "a", "findings": [{"label": "Edema", "box": [1, 2, 3]}]},
                {"id": "a", "findings": [{"label": "Edema", "box": [1, 2, 300, 4]}]},
                {"id": "a", "global": ["Flu"]}):
        with pytest.raises(DataError):
            load_ground_truth(write_jsonl(tmp_path / "gt.jsonl", [row]))


def test_domain_errors():
    with pytest.raises(DomainError):
        evaluate_run(fixture("gt.jsonl"), fixture("pred.jsonl"), "map")
    with pytest.raises(DomainError):
        evaluate_run(fixture("gt.jsonl"), fixture("pred.jsonl"), "loc", thresholds=(0.5, 1.0))


def test_parallel_matches_sequential():
    a = evaluate_run(fixture("gt.jsonl"), fixture("pred.jsonl"), "text", stage=1, workers=1)
    b = evaluate_run(fixture("gt.jsonl"), fixture("pred.jsonl"), "text", stage=1, workers=3)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_report_shape():
    rep = evaluate_run(fixture("gt.jsonl"), fixture("pred.jsonl"), "cls")
    assert {"task", "metrics", "per_class", "warnings"} <= set(rep)
    assert rep["stage"] == 2 and rep["n_studies"] == 3
