"""Command-line front end: preprocess, build-dataset, eval, fusion-check, parse."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import fusion
from .codec import (
    GLOBAL_PREFIX,
    LOCAL_PREFIX,
    NO_FINDINGS_SENTENCE,
    PromptTemplate,
    IDENTIFIER_TOKENS,
    parse_diagnoses,
    parse_grounded_report,
)
from .errors import GroundCXRError
from .ingest import (
    StudyRecord,
    export_stage_records,
    filter_conflicts,
    load_annotations,
    normalize_pixels,
    read_dicom_file,
    read_sidecar,
)
from .ingest.pixels import to_rgb_png
from .metrics.evaluate import DEFAULT_THRESHOLDS, TASKS, evaluate_run

log = logging.getLogger("groundcxr")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


# ------------------------------------------------------------------ output


def _atomic_write(path: str, data: bytes) -> None:
    """Write via a temp file in the target directory so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonl_bytes(objs: Iterable[dict]) -> bytes:
    return "".join(json.dumps(o, ensure_ascii=False, sort_keys=True) + "\n" for o in objs).encode()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _summarize(warnings: Counter) -> None:
    for kind, count in sorted(warnings.items()):
        log.warning("%s: %d", kind, count)


# --------------------------------------------------------------- argument types


def _thresholds(text: str) -> List[float]:
    try:
        values = sorted(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values or not all(0 < v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"thresholds must lie in (0, 1), got {text!r}")
    return values


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


# ----------------------------------------------------------------- preprocess


def _load_image(path: str):
    if path.endswith(".json"):
        return read_sidecar(path)
    study_id = os.path.splitext(os.path.basename(path))[0]
    return study_id, read_dicom_file(path)


def _image_inputs(paths: Sequence[str]) -> List[str]:
    out = []
    for p in paths:
        if os.path.isdir(p):
            out.extend(
                os.path.join(p, name) for name in sorted(os.listdir(p))
                if name.endswith((".dcm", ".dicom", ".json"))
            )
        else:
            out.append(p)
    return out


def _convert(path: str, image_dir: str):
    study_id, raw = _load_image(path)
    png = os.path.join(image_dir, f"{study_id}.png")
    fd, tmp = tempfile.mkstemp(dir=image_dir, prefix=".tmp-", suffix=".png")
    os.close(fd)
    to_rgb_png(normalize_pixels(raw), tmp)
    os.replace(tmp, png)
    return study_id, raw.dims


def cmd_preprocess(args) -> int:
    inputs = _image_inputs(args.images)
    if not inputs:
        raise GroundCXRError("no input images found")
    annotations = load_annotations(args.annotations)
    image_dir = os.path.join(args.out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        converted = list(pool.map(lambda p: _convert(p, image_dir), inputs))

    warnings: Counter = Counter()
    records, seen = [], set()
    for study_id, dims in sorted(converted, key=lambda t: t[0]):
        if study_id in seen:
            raise GroundCXRError(f"duplicate study id {study_id!r} among input images")
        seen.add(study_id)
        if study_id not in annotations:
            warnings["unannotated-image"] += 1
            log.info("no annotations for %s", study_id)
            continue
        record = StudyRecord(study_id, f"images/{study_id}.png", dims, annotations[study_id])
        outside = record.out_of_bounds()
        if outside:
            warnings["out-of-bounds-box"] += len(outside)
        records.append(record.to_json())
    warnings["annotation-without-image"] += len(set(annotations) - seen)
    warnings = +warnings

    out = args.records or os.path.join(args.out_dir, "studies.jsonl")
    _atomic_write(out, _jsonl_bytes(records))
    summary = {"images": len(converted), "records": len(records), "output": out, "warnings": dict(warnings)}
    _emit(args, summary, f"wrote {len(records)} study records to {out}")
    _summarize(warnings)
    return EXIT_OK


# -------------------------------------------------------------- build-dataset


def _read_studies(path: str) -> List[StudyRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(StudyRecord.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise GroundCXRError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except (GroundCXRError, ValueError) as exc:
                raise GroundCXRError(f"{path}:{lineno}: {exc}") from None
    return records


def cmd_build_dataset(args) -> int:
    template = PromptTemplate(
        image_open=args.image_open,
        image_close=args.image_close,
        image_placeholder=args.image_placeholder,
        identifier=args.identifier,
    )
    studies = _read_studies(args.records)
    kept, removed = filter_conflicts(studies)
    result = export_stage_records(kept, args.stage, template, clamp=args.clamp, workers=args.workers)

    warnings = Counter()
    if removed:
        warnings["conflicting-annotations"] = len(removed)
    for _, reason in result.skipped:
        warnings["skipped: " + reason.split(":")[0]] += 1

    _atomic_write(args.out, _jsonl_bytes(r.to_json() for r in result.records))
    if args.gt_out:
        _atomic_write(args.gt_out, _jsonl_bytes(result.ground_truth))
    summary = {"stage": args.stage, "studies": len(studies), "records": len(result.records),
               "output": args.out, "warnings": dict(warnings)}
    _emit(args, summary, f"wrote {len(result.records)} stage-{args.stage} records to {args.out}")
    _summarize(warnings)
    return EXIT_OK


# ----------------------------------------------------------------------- eval


def _format_eval(report: dict) -> str:
    lines = [f"task={report['task']} stage={report['stage']} studies={report['n_studies']}"]
    metrics = report["metrics"]
    for name, value in metrics.items():
        if isinstance(value, dict):
            lines.append(f"{name:<14} P={value['precision']:.4f} R={value['recall']:.4f} "
                         f"F1={value['f1-score']:.4f} support={value['support']}")
        else:
            lines.append(f"{name:<14} {value:.4f}")
    lines.extend(f"note: {flag}" for flag in report["flags"])
    return "\n".join(lines)


def cmd_eval(args) -> int:
    report = evaluate_run(args.gt, args.pred, args.task, args.thresholds, args.stage, args.workers)
    if args.out:
        _atomic_write(args.out, _json_bytes(report))
    _emit(args, report, _format_eval(report))
    _summarize(Counter(report["warnings"]))
    return EXIT_OK


# --------------------------------------------------------------- fusion-check


def cmd_fusion_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.z1 or args.z2:
        if not (args.z1 and args.z2):
            raise GroundCXRError("--z1 and --z2 must be given together")
        z1, z2 = fusion.load_matrix(args.z1), fusion.load_matrix(args.z2)
    else:
        z1 = rng.standard_normal((args.p1, fusion.ENCODER_DIM))
        z2 = rng.standard_normal((args.p2, fusion.ENCODER_DIM))
    if args.weights:
        w = fusion.load_weights(args.weights)
    else:
        w = fusion.ProjectionWeights.random(out_dim=args.dim, hidden=args.hidden, seed=args.seed)

    z = fusion.concat_embeddings(z1, z2)
    q = fusion.group_tokens(z, pad=args.pad)
    out = fusion.project(q, w)
    trace = {
        "z1": list(z1.shape), "z2": list(z2.shape), "concat": list(z.shape),
        "grouped": list(q.shape), "hidden": w.hidden, "output": list(out.shape),
        "finite": bool(np.isfinite(out).all()),
    }
    grad = fusion.gradient_report(args.seeds, args.epsilon, args.activation)
    grad["tolerance"] = args.tolerance
    grad["passed"] = grad["max_relative_error"] < args.tolerance
    report = {"shapes": trace, "gradient": grad}
    # always JSON: the report is meant for scripts
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if grad["passed"] and trace["finite"] else EXIT_DATA


# ---------------------------------------------------------------------- parse


def cmd_parse(args) -> int:
    text = args.text if args.text is not None else sys.stdin.read()
    stage = args.stage
    if stage == "auto":
        local = "<p>" in text.lower() or LOCAL_PREFIX.strip() in text or NO_FINDINGS_SENTENCE[:-1] in text
        stage = "1" if local or GLOBAL_PREFIX.strip() not in text else "2"
    if stage == "1":
        report, warnings = parse_grounded_report(text)
        parsed = {"stage": 1, "findings": [{"label": f.label, "box": f.box.as_list()} for f in report.findings],
                  "no_finding": report.no_finding}
        lines = [f"{f.label} {f.box.as_list()}" for f in report.findings] or ["(no findings)"]
    else:
        diagnoses, warnings = parse_diagnoses(text)
        parsed = {"stage": 2, "global": diagnoses.ordered()}
        lines = diagnoses.ordered() or ["(no diagnoses)"]
    parsed["warnings"] = [{"kind": w.kind, "fragment": w.fragment, "position": w.position} for w in warnings]
    lines += [f"warning: {w.kind} at {w.position}: {w.fragment!r}" for w in warnings]
    _emit(args, parsed, "\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------- wiring


def _emit(args, obj, text: str) -> None:
    if args.json:
        sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text + "\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; command-line flags take precedence")
    common.add_argument("--workers", type=_positive_int, default=1, help="worker pool size")
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="groundcxr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="DICOM or raw sidecar images to PNG + study JSONL")
    p.add_argument("--images", nargs="+", required=True, help="DICOM files, JSON sidecars or directories")
    p.add_argument("--annotations", required=True, help="annotation CSV or JSONL")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--records", help="study JSONL path (default OUT_DIR/studies.jsonl)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("build-dataset", parents=[common], help="stage 1 or stage 2 training records")
    p.add_argument("--records", required=True, help="study JSONL from preprocess")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-out", help="also write evaluation ground truth JSONL")
    p.add_argument("--clamp", action="store_true", help="clamp out-of-image boxes instead of failing")
    p.add_argument("--identifier", choices=IDENTIFIER_TOKENS, help="override the stage identifier token")
    p.add_argument("--image-open", default="<Img>")
    p.add_argument("--image-close", default="</Img>")
    p.add_argument("--image-placeholder", default="<Image feature>")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--thresholds", type=_thresholds, default=list(DEFAULT_THRESHOLDS))
    p.add_argument("--stage", type=int, choices=(1, 2))
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fusion-check", parents=[common], help="shape trace and gradient check of the projection")
    p.add_argument("--p1", type=_positive_int, default=196)
    p.add_argument("--p2", type=_positive_int, default=49)
    p.add_argument("--dim", type=_positive_int, default=fusion.DEFAULT_LM_DIM)
    p.add_argument("--hidden", type=_positive_int)
    p.add_argument("--z1", help="binary matrix file for the first encoder")
    p.add_argument("--z2", help="binary matrix file for the second encoder")
    p.add_argument("--weights", help="directory holding w1.bin b1.bin w2.bin b2.bin")
    p.add_argument("--pad", action="store_true", help="zero-pad when P is not a multiple of 5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=100, help="gradient-check instances")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--activation", choices=sorted(fusion.ACTIVATIONS), default="gelu")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_fusion_check)

    p = sub.add_parser("parse", parents=[common], help="echo parsed findings or diagnoses for one text")
    p.add_argument("text", nargs="?", help="model output (read from stdin when omitted)")
    p.add_argument("--stage", choices=("1", "2", "auto"), default="auto")
    p.set_defaults(func=cmd_parse)
    return parser


def read_config(path: str) -> List[str]:
    """Turn ``key = value`` lines into flag tokens; ``true``/``false`` toggle switches."""
    tokens = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "yes", "on"):
                tokens.append(flag)
            elif value.lower() not in ("false", "no", "off"):
                tokens.extend([flag, value])
    return tokens


def _with_config(argv: List[str]) -> List[str]:
    # config tokens go right after the subcommand so later flags override them
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not argv:
        return argv
    return argv[:1] + read_config(known.config) + argv[1:]


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _with_config(argv)
    except (OSError, ValueError) as exc:
        parser.error(f"config: {exc}")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (GroundCXRError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
