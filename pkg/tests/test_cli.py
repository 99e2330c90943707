import json

import pytest

from groundcxr.cli import main, read_config

from synthetic import write_dataset

EX2 = ("Local diseases of this chest radiograph are <p>Aortic enlargement</p> {<48><25><60><36>},"
       "<p>Cardiomegaly</p> {<42><51><74><62>}.")


@pytest.fixture
def cli(capsys, caplog):
    def run(*argv):
        caplog.clear()
        code = main(list(argv))
        out = capsys.readouterr()
        return code, out.out, out.err + caplog.text
    return run


def test_parse_two_finding_report(cli):
    code, out, _ = cli("parse", "--json", EX2)
    parsed = json.loads(out)
    assert code == 0 and len(parsed["findings"]) == 2 and parsed["warnings"] == []


def test_parse_stage_two_from_stdin(cli, monkeypatch):
    import io

    monkeypatch.setattr("sys.stdin", io.StringIO("Global diseases of this chest radiograph are COPD."))
    code, out, _ = cli("parse", "--json")
    assert json.loads(out)["global"] == ["COPD"]


def test_usage_errors_exit_2(cli):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--task", "loc", "--gt", "a", "--pred", "b", "--thresholds", "0.5,1.5"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["build-dataset", "--records", "x", "--stage", "1", "--out", "y", "--identifier", "[caption]"])
    assert exc.value.code == 2


def test_data_errors_exit_1(tmp_path, cli):
    bad = tmp_path / "gt.jsonl"
    bad.write_text('{"id": "a", "global": []}\n{"id": oops}\n')
    code, _, err = cli("eval", "--task", "cls", "--gt", str(bad), "--pred", str(bad))
    assert code == 1 and ":2:" in err
    code, _, _ = cli("eval", "--task", "cls", "--gt", str(tmp_path / "missing"), "--pred", str(bad))
    assert code == 1


def test_build_dataset_stage2_one_record(tmp_path, cli):
    record = {"study_id": "x1", "image": "images/x1.png", "width": 100, "height": 100,
              "annotations": [{"annotator": "R1", "findings": [], "global": ["Pneumonia", "Tuberculosis"]}]}
    (tmp_path / "studies.jsonl").write_text(json.dumps(record) + "\n")
    out = tmp_path / "stage2.jsonl"
    code, _, _ = cli("build-dataset", "--records", str(tmp_path / "studies.jsonl"), "--stage", "2",
                     "--out", str(out))
    lines = out.read_text().splitlines()
    assert code == 0 and len(lines) == 1
    rec = json.loads(lines[0])
    assert rec["target"] == "Global diseases of this chest radiograph are Pneumonia, Tuberculosis."
    assert rec["stage"] == 2 and rec["image"] == "images/x1.png"


def test_build_dataset_overrides(tmp_path, cli):
    record = {"study_id": "x1", "image": "i.png", "width": 100, "height": 100,
              "annotations": [{"annotator": "R1", "findings": [{"label": "Edema", "box": [10, 10, 50, 50]}],
                               "global": []}]}
    (tmp_path / "studies.jsonl").write_text(json.dumps(record) + "\n")
    out = tmp_path / "s1.jsonl"
    cli("build-dataset", "--records", str(tmp_path / "studies.jsonl"), "--stage", "1", "--out", str(out),
        "--identifier", "[grounding]", "--image-open", "<image>", "--image-close", "</image>")
    prompt = json.loads(out.read_text())["prompt"]
    assert prompt.startswith("<image><Image feature></image> [grounding] Please describe")


def test_config_precedence(tmp_path, cli):
    gt = tmp_path / "gt.jsonl"
    gt.write_text(json.dumps({"id": "a", "findings": [{"label": "Edema", "box": [0, 0, 10, 10]}], "global": []}) + "\n")
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps({"id": "a", "text": "<p>Edema</p> {<0><0><10><5>}"}) + "\n")
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# evaluation defaults\ntask = loc\nthresholds = 0.45\njson = true\n")
    assert read_config(str(cfg)) == ["--task", "loc", "--thresholds", "0.45", "--json"]
    code, out, _ = cli("eval", "--config", str(cfg), "--gt", str(gt), "--pred", str(pred))
    assert json.loads(out)["metrics"] == {"accuracy@0.45": 1.0}
    code, out, _ = cli("eval", "--config", str(cfg), "--gt", str(gt), "--pred", str(pred),
                       "--thresholds", "0.5")
    assert json.loads(out)["metrics"] == {"accuracy@0.5": 0.0}


def test_eval_self_is_perfect(tmp_path, cli):
    gt = tmp_path / "gt.jsonl"
    gt.write_text(json.dumps({"id": "a", "findings": [{"label": "Edema", "box": [0, 0, 10, 10]}],
                              "global": ["COPD"]}) + "\n")
    code, out, _ = cli("eval", "--task", "loc", "--gt", str(gt), "--pred", str(gt), "--json")
    assert json.loads(out)["metrics"] == {"accuracy@0.3": 1.0, "accuracy@0.4": 1.0, "accuracy@0.5": 1.0}
    code, out, _ = cli("eval", "--task", "loc", "--gt", str(gt), "--pred", str(gt))
    assert "accuracy@0.5" in out and "1.0000" in out


def test_fusion_check(cli):
    code, out, _ = cli("fusion-check", "--seeds", "5")
    rep = json.loads(out)
    assert code == 0 and rep["shapes"]["output"] == [49, 4096] and rep["gradient"]["passed"]
    code, _, err = cli("fusion-check", "--p1", "7", "--dim", "4", "--seeds", "1")
    assert code == 1 and "P=56" in err
    code, out, _ = cli("fusion-check", "--p1", "7", "--dim", "4", "--seeds", "1", "--pad")
    assert code == 0 and json.loads(out)["shapes"]["grouped"] == [12, 3840]


def test_fusion_check_from_files(tmp_path, cli):
    import numpy as np

    from groundcxr.fusion import ProjectionWeights, save_matrix, save_weights

    save_matrix(str(tmp_path / "z1.bin"), np.ones((10, 768)))
    save_matrix(str(tmp_path / "z2.bin"), np.ones((5, 768)))
    save_weights(str(tmp_path / "w"), ProjectionWeights.random(out_dim=6, hidden=4))
    code, out, _ = cli("fusion-check", "--z1", str(tmp_path / "z1.bin"), "--z2", str(tmp_path / "z2.bin"),
                       "--weights", str(tmp_path / "w"), "--seeds", "1")
    assert code == 0 and json.loads(out)["shapes"]["output"] == [3, 6]


def test_preprocess_and_warnings(tmp_path, cli):
    raw_dir, annotations = write_dataset(tmp_path)
    (raw_dir / "orphan.json").write_text(json.dumps(
        {"study_id": "orphan", "pixels_path": "s4.raw", "width": 200, "height": 160}))
    code, out, err = cli("preprocess", "--images", str(raw_dir), "--annotations", str(annotations),
                         "--out-dir", str(tmp_path / "out"), "--json")
    summary = json.loads(out)
    assert code == 0 and summary["records"] == 5 and summary["warnings"] == {"unannotated-image": 1}
    assert "unannotated-image: 1" in err
    assert (tmp_path / "out" / "images" / "s1.png").exists()
    assert not [p for p in (tmp_path / "out").rglob(".tmp-*")]
