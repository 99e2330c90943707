import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groundcxr.codec import NO_FINDINGS_SENTENCE, parse_diagnoses, parse_grounded_report
from groundcxr.errors import CorruptFileError, DataError, DomainError, UnsupportedFormatError
from groundcxr.geometry import ImageDims
from groundcxr.ingest import (
    AnnotatorLabels,
    PixelFinding,
    RawImage,
    StudyRecord,
    export_stage_records,
    filter_conflicts,
    load_annotations,
    normalize_pixels,
    read_dicom_tags,
    read_sidecar,
)
from groundcxr.ingest.pixels import to_rgb_png
from groundcxr.ingest.records import is_conflicting, merged_diagnoses

from dicom_fixture import build_dicom, undefined_sequence

GRADIENT = np.arange(12, dtype=np.uint16).reshape(3, 4) * 300


# ------------------------------------------------------------------- DICOM


def test_read_window_tags():
    raw = read_dicom_tags(build_dicom(GRADIENT, center=2048, width=4096))
    assert raw.window_center == 2048 and raw.window_width == 4096
    assert raw.photometric == "MONOCHROME2"
    assert raw.dims == ImageDims(4, 3)
    np.testing.assert_array_equal(raw.pixels, GRADIENT)


def test_missing_window_tags_are_optional():
    raw = read_dicom_tags(build_dicom(GRADIENT))
    assert raw.window_center is None and raw.window_width is None


def test_multi_valued_window_uses_first():
    raw = read_dicom_tags(build_dicom(GRADIENT, center="40\\400", width="80\\1500"))
    assert (raw.window_center, raw.window_width) == (40.0, 80.0)


def test_eight_bit_and_monochrome1():
    pixels = np.array([[0, 128], [200, 255]], dtype=np.uint8)
    raw = read_dicom_tags(build_dicom(pixels, photometric="MONOCHROME1"))
    assert raw.photometric == "MONOCHROME1" and raw.pixels.dtype == np.uint8
    np.testing.assert_array_equal(raw.pixels, pixels)


def test_skips_undefined_length_sequence():
    raw = read_dicom_tags(build_dicom(GRADIENT, center=1, width=2, extra=undefined_sequence()))
    np.testing.assert_array_equal(raw.pixels, GRADIENT)


@pytest.mark.parametrize("syntax", ["1.2.840.10008.1.2.4.50", "1.2.840.10008.1.2", "1.2.840.10008.1.2.2"])
def test_unsupported_syntax_names_it(syntax):
    with pytest.raises(UnsupportedFormatError, match=syntax.replace(".", r"\.")):
        read_dicom_tags(build_dicom(GRADIENT, syntax=syntax))


def test_truncated_pixels():
    with pytest.raises(CorruptFileError):
        read_dicom_tags(build_dicom(GRADIENT, truncate_pixels=4))


def test_not_dicom():
    with pytest.raises(CorruptFileError):
        read_dicom_tags(b"hello")


def test_unsupported_photometric():
    with pytest.raises(UnsupportedFormatError):
        read_dicom_tags(build_dicom(GRADIENT, photometric="RGB"))


def test_sidecar(tmp_path):
    (tmp_path / "img.raw").write_bytes(GRADIENT.astype("<u2").tobytes())
    meta = {"study_id": "s1", "pixels_path": "img.raw", "width": 4, "height": 3,
            "photometric": "MONOCHROME1", "window_center": 100, "window_width": 50}
    (tmp_path / "s1.json").write_text(json.dumps(meta))
    study_id, raw = read_sidecar(str(tmp_path / "s1.json"))
    assert study_id == "s1" and raw.photometric == "MONOCHROME1"
    np.testing.assert_array_equal(raw.pixels, GRADIENT)
    meta["width"] = 5
    (tmp_path / "s1.json").write_text(json.dumps(meta))
    with pytest.raises(CorruptFileError):
        read_sidecar(str(tmp_path / "s1.json"))


def test_raw_image_validation():
    with pytest.raises(DomainError):
        RawImage(np.zeros((2, 2), dtype=np.int16))
    with pytest.raises(DomainError):
        RawImage(np.zeros(4, dtype=np.uint16))
    with pytest.raises(DomainError):
        RawImage(np.zeros((2, 2), dtype=np.uint16), bits_stored=20)


# ------------------------------------------------------------------ pixels


def one_pixel(value, photometric="MONOCHROME2", center=1000.0, width=400.0):
    raw = RawImage(np.array([[value]], dtype=np.uint16), photometric, center, width)
    return int(normalize_pixels(raw)[0, 0])


def test_window_cases():
    assert one_pixel(1000) == 127
    assert one_pixel(1400) == 255
    assert one_pixel(1400, "MONOCHROME1") == 0


def test_constant_image_without_window():
    raw = RawImage(np.full((3, 3), 7, dtype=np.uint16))
    assert (normalize_pixels(raw) == 127).all()


def test_non_positive_width_falls_back():
    pixels = np.array([[0, 10]], dtype=np.uint16)
    a = normalize_pixels(RawImage(pixels, window_center=5, window_width=0))
    b = normalize_pixels(RawImage(pixels))
    np.testing.assert_array_equal(a, b)


def straight_line(p, photometric, center, width):
    out = []
    for row in p.tolist():
        line = []
        for v in row:
            if center is not None and width is not None:
                n = (v - center) / width
            else:
                flat = [x for r in p.tolist() for x in r]
                n = (v - sum(flat) / len(flat)) / (max(flat) - min(flat))
            n = max(-1.0, min(1.0, n))
            sign = -1 if photometric == "MONOCHROME1" else 1
            line.append(int(n * sign * 127.5 + 127.5))
        out.append(line)
    return np.array(out, dtype=np.uint8)


@settings(max_examples=60)
@given(
    st.integers(1, 6), st.integers(1, 6),
    st.sampled_from(["MONOCHROME1", "MONOCHROME2"]),
    st.one_of(st.none(), st.tuples(st.floats(0, 65535), st.floats(1, 70000))),
    st.randoms(use_true_random=False),
)
def test_pixels_range_and_oracle(h, w, photometric, window, rnd):
    p = np.array([[rnd.randrange(65536) for _ in range(w)] for _ in range(h)], dtype=np.uint16)
    center, width = window if window else (None, None)
    if window is None and p.max() == p.min():
        return
    out = normalize_pixels(RawImage(p, photometric, center, width))
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, straight_line(p, photometric, center, width))


def test_windowed_output_monotone():
    p = np.arange(0, 4096, 7, dtype=np.uint16).reshape(1, -1)
    up = normalize_pixels(RawImage(p, "MONOCHROME2", 2048, 1000)).ravel().astype(int)
    down = normalize_pixels(RawImage(p, "MONOCHROME1", 2048, 1000)).ravel().astype(int)
    assert (np.diff(up) >= 0).all() and (np.diff(down) <= 0).all()


def test_png_written_as_rgb(tmp_path):
    from PIL import Image

    to_rgb_png(np.array([[0, 255]], dtype=np.uint8), str(tmp_path / "x.png"))
    img = Image.open(tmp_path / "x.png")
    assert img.mode == "RGB" and img.getpixel((1, 0)) == (255, 255, 255)


# ----------------------------------------------------------------- records


def ann(name, findings=(), globals_=()):
    return AnnotatorLabels(name, tuple(PixelFinding(l, b) for l, b in findings), frozenset(globals_))


def study(study_id, *annotators, dims=(1000, 1000)):
    return StudyRecord(study_id, f"images/{study_id}.png", ImageDims(*dims), annotators)


def test_filter_conflicts():
    conflict = study("a", ann("r1", globals_=["No finding"]), ann("r2", [("Cardiomegaly", (1, 1, 5, 5))]))
    normal = study("b", ann("r1", globals_=["No finding"]), ann("r2", globals_=["No finding"]))
    differing = study("c", ann("r1", [("Edema", (1, 1, 5, 5))]), ann("r2", [("ILD", (1, 1, 5, 5))]))
    kept, removed = filter_conflicts([conflict, normal, differing])
    assert kept == [normal, differing] and removed == [conflict]


@given(st.lists(st.lists(st.sampled_from(["none", "local", "global"]), min_size=1, max_size=3), max_size=8))
def test_filter_conflicts_partition(layouts):
    records = []
    for i, kinds_per_study in enumerate(layouts):
        annotators = []
        for j, kind in enumerate(kinds_per_study):
            if kind == "none":
                annotators.append(ann(f"r{j}", globals_=["No finding"]))
            elif kind == "local":
                annotators.append(ann(f"r{j}", [("Edema", (1, 1, 5, 5))]))
            else:
                annotators.append(ann(f"r{j}", globals_=["COPD"]))
        records.append(study(str(i), *annotators))
    kept, removed = filter_conflicts(records)
    assert sorted(kept + removed, key=lambda r: r.study_id) == sorted(records, key=lambda r: r.study_id)
    assert not set(map(id, kept)) & set(map(id, removed))
    for r in removed:
        assert is_conflicting(r)


def test_study_needs_annotator():
    with pytest.raises(DomainError):
        study("x")


def test_stage1_merges_near_identical_boxes():
    boxes = [(100, 100, 500, 500), (105, 98, 502, 497), (97, 103, 498, 505)]
    record = study("s", *(ann(f"r{i}", [("Cardiomegaly", b)]) for i, b in enumerate(boxes)))
    out = export_stage_records([record], 1)
    report, warnings = parse_grounded_report(out.records[0].target)
    assert len(report.findings) == 1 and warnings == []


def test_stage1_no_finding_target():
    record = study("s", ann("r1", globals_=["No finding"]), ann("r2"))
    assert export_stage_records([record], 1).records[0].target == NO_FINDINGS_SENTENCE


def test_stage1_skips_global_only_record():
    record = study("s", ann("r1", globals_=["COPD"]))
    out = export_stage_records([record], 1)
    assert out.records == [] and out.skipped == [("s", "no localized findings")]


def test_stage2_union_target():
    record = study("s", ann("r1", globals_=["Tuberculosis"]), ann("r2", globals_=["Pneumonia"]))
    out = export_stage_records([record], 2)
    assert out.records[0].target == "Global diseases of this chest radiograph are Pneumonia, Tuberculosis."
    assert out.records[0].prompt.startswith("<Img><Image feature></Img> [vqa] ")
    assert out.ground_truth[0]["global"] == ["Pneumonia", "Tuberculosis"]


def test_merged_diagnoses_rules():
    assert merged_diagnoses(study("s", ann("r1"), ann("r2"))).labels == {"No finding"}
    assert merged_diagnoses(study("s", ann("r1", [("Edema", (1, 1, 5, 5))]))) is None
    with pytest.raises(DomainError):
        merged_diagnoses(study("s", ann("r1", globals_=["No finding"]), ann("r2", globals_=["COPD"])))


def test_out_of_bounds_skipped_or_clamped():
    record = study("s", ann("r1", [("Edema", (900, 900, 1100, 1000))]))
    assert len(record.out_of_bounds()) == 1
    out = export_stage_records([record], 1)
    assert out.records == [] and out.skipped[0][1].startswith("invalid box")
    clamped = export_stage_records([record], 1, clamp=True)
    assert "{<90><90><100><100>}" in clamped.records[0].target


def test_export_targets_reparse_to_sources():
    rng = np.random.default_rng(5)
    records = []
    for i in range(20):
        annotators = []
        for j in range(3):
            x, y = rng.integers(0, 800, size=2)
            annotators.append(ann(f"r{j}", [("Nodule/Mass", (x, y, x + 150, y + 100))], ["Lung tumor"]))
        records.append(study(f"s{i:02d}", *annotators))
    for stage in (1, 2):
        out = export_stage_records(records, stage)
        for rec, gt in zip(out.records, out.ground_truth):
            if stage == 1:
                report, w = parse_grounded_report(rec.target)
                assert [{"label": f.label, "box": f.box.as_list()} for f in report.findings] == gt["findings"]
            else:
                diag, w = parse_diagnoses(rec.target)
                assert diag.ordered() == gt["global"]
            assert w == []


def test_export_independent_of_workers_and_order():
    records = [study(f"s{i}", ann("r1", [("Edema", (i, i, i + 50, i + 60))])) for i in range(30)]
    a = export_stage_records(records, 1, workers=1)
    b = export_stage_records(list(reversed(records)), 1, workers=8)
    assert [r.to_json() for r in a.records] == [r.to_json() for r in b.records]
    assert [r.study_id for r in a.records] == sorted(r.study_id for r in records)


def test_study_json_round_trip():
    record = study("s", ann("r1", [("Edema", (1.5, 2, 30, 40))], ["COPD"]), ann("r2", globals_=["No finding"]))
    assert StudyRecord.from_json(json.loads(json.dumps(record.to_json()))) == record
    with pytest.raises(DataError):
        StudyRecord.from_json({"study_id": "x"})


def test_load_annotations_csv(tmp_path):
    path = tmp_path / "train.csv"
    path.write_text(
        "image_id,class_name,class_id,rad_id,x_min,y_min,x_max,y_max\n"
        "img1,Cardiomegaly,3,R9,10,20,30,40\n"
        "img1,No finding,14,R8,,,,\n"
        "img2,Aortic enlargement,0,R1,1,2,3,4\n"
        "img2,Pneumonia,0,R1,,,,\n"
    )
    grouped = load_annotations(str(path))
    assert [a.annotator for a in grouped["img1"]] == ["R8", "R9"]
    assert grouped["img1"][0].no_finding and grouped["img1"][1].findings[0].box == (10, 20, 30, 40)
    assert grouped["img2"][0].global_labels == {"Pneumonia"}


def test_load_annotations_errors(tmp_path):
    path = tmp_path / "a.jsonl"
    path.write_text('{"image_id": "i", "annotator_id": "r", "class_name": "Edema", "x_min": 1, "y_min": 1, "x_max": 2, "y_max": 2}\n'
                    '{"image_id": "i", "annotator_id": "r", "class_name": "Dragon"}\n')
    with pytest.raises(DataError, match=":2:"):
        load_annotations(str(path))
    path.write_text('{"image_id": "i", "class_name": "Edema"}\n')
    with pytest.raises(DataError, match="complete box"):
        load_annotations(str(path))
    path.write_text('{"image_id": \n')
    with pytest.raises(DataError, match=":1:"):
        load_annotations(str(path))
