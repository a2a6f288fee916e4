"""Command-line entry point.

Human-readable output goes to stderr; machine-readable JSON summaries go to
stdout so commands compose in shell pipelines. Flags override the optional
JSON config file (--config); NN_SOURCE_URL and NN_WORKERS environment
variables sit between flags and the config file, and apply only to the page
source and worker count.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from pathlib import Path

from . import analytics, cocoset, detect, embedstore, evalmap, pipeline
from .detect import CLASS_NAMES, SAVE_FLOOR


class OperationalError(Exception):
    pass


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise OperationalError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise OperationalError(f"config {path} must be a JSON object")
    return config


def _resolve(flag_value, config: dict, key: str, default, env_var: str | None = None):
    if flag_value is not None:
        return flag_value
    if env_var is not None and os.environ.get(env_var):
        return os.environ[env_var]
    if key in config:
        return config[key]
    return default


def _parse_classes(spec: str) -> frozenset[int]:
    by_name = {name.lower(): code for code, name in CLASS_NAMES.items()}
    codes = set()
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if token.lstrip("-").isdigit():
            codes.add(int(token))
        elif token.lower() in by_name:
            codes.add(by_name[token.lower()])
        else:
            raise OperationalError(f"unknown class {token!r}")
    if not codes:
        raise OperationalError("no classes given")
    return frozenset(codes)


# --- subcommand implementations ----------------------------------------------

def cmd_manifest_build(args, config) -> int:
    manifest, warnings = pipeline.build_manifest(args.source, args.batch_name)
    pipeline.save_manifest(manifest, args.out)
    for warning in warnings:
        _info(f"warning: {warning}")
    _emit({"batch": manifest.batch_name, "entries": len(manifest.entries),
           "warnings": len(warnings), "manifest": str(args.out)})
    return 0


def _build_detector(name: str, predictions: str | None, save_floor: float):
    if name == "stub":
        return detect.StubDetector()
    if name == "file":
        if not predictions:
            raise OperationalError("--predictions is required with --detector file")
        return detect.FileDetector.from_path(predictions, floor=save_floor)
    raise OperationalError(f"unknown detector {name!r} (expected 'stub' or 'file')")


def cmd_pipeline_run(args, config) -> int:
    source = _resolve(args.source, config, "source", ".", env_var="NN_SOURCE_URL")
    workers = int(_resolve(args.workers, config, "workers", 1, env_var="NN_WORKERS"))
    cfg = pipeline.PipelineConfig(
        downsample_factor=int(_resolve(args.downsample, config, "downsample_factor", 6)),
        save_floor=float(_resolve(args.save_floor, config, "save_floor", SAVE_FLOOR)),
        embed_floor=float(_resolve(args.embed_floor, config, "embed_floor", 0.5)),
        containment_policy=_resolve(args.policy, config, "policy", "center"),
        worker_count=workers,
        source=source,
        jpeg_quality=int(_resolve(args.jpeg_quality, config, "jpeg_quality", 90)),
    )
    manifest = pipeline.load_manifest(args.manifest)
    detector = _build_detector(args.detector, args.predictions, cfg.save_floor)
    result = pipeline.run(manifest, detector, cfg, args.out)
    success_path, failure_path = pipeline.write_run_manifests(result, args.out)
    _info(f"processed {len(manifest.entries)} pages: "
          f"{len(result.success)} ok, {len(result.failure)} failed")
    _emit({
        "batch": result.batch_name,
        "pages": len(manifest.entries),
        "success": len(result.success),
        "failure": len(result.failure),
        "success_manifest": str(success_path),
        "failure_manifest": str(failure_path),
        "out": str(args.out),
    })
    return 0


def cmd_coco_convert(args, config) -> int:
    with open(args.raw, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    with open(args.dims, "r", encoding="utf-8") as fh:
        dims = {page: (int(w), int(h)) for page, (w, h) in json.load(fh).items()}
    mapping = None
    if args.mapping:
        with open(args.mapping, "r", encoding="utf-8") as fh:
            mapping = json.load(fh)
    dataset, report = cocoset.convert(raw, dims, mapping)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(dataset.to_dict(), fh)
        fh.write("\n")
    for message in report.rejections + report.warnings:
        _info(message)
    _emit({
        "images": len(dataset.images),
        "annotations": len(dataset.annotations),
        "rejections": len(report.rejections),
        "category_counts": report.category_counts,
        "out": str(args.out),
    })
    return 0


def cmd_coco_split(args, config) -> int:
    dataset = cocoset.load_coco(args.coco)
    train, val = cocoset.split(dataset, args.val_fraction, args.seed)
    for path, part in ((args.train_out, train), (args.val_out, val)):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(part.to_dict(), fh)
            fh.write("\n")
    _emit({
        "train_images": len(train.images),
        "val_images": len(val.images),
        "train_annotations": len(train.annotations),
        "val_annotations": len(val.annotations),
        "train_out": str(args.train_out),
        "val_out": str(args.val_out),
    })
    return 0


def _load_ground_truth(path: str) -> list[evalmap.GroundTruth]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError:
        payload = None
    if isinstance(payload, dict) and "images" in payload and "annotations" in payload:
        return cocoset.to_ground_truths(cocoset.parse_coco(payload))
    result = detect.read_predictions(io.StringIO(text), floor=0.0)
    for message in result.messages:
        _info(f"gt: {message}")
    gts = []
    for page_id, preds in result.by_page.items():
        gts.extend(
            evalmap.GroundTruth(page_id=page_id, box=p.box, class_id=p.class_id) for p in preds
        )
    return gts


def cmd_eval(args, config) -> int:
    with open(args.preds, "rb") as fh:
        read = detect.read_predictions(fh, floor=SAVE_FLOOR)
    for message in read.messages:
        _info(f"preds: {message}")
    gts = _load_ground_truth(args.gt)
    if not gts:
        raise OperationalError("ground truth is empty")
    result = evalmap.evaluate(read.by_page, gts)

    _info(f"{'category':<22}{'AP':>9}{'# gt':>8}")
    for class_id, ap in sorted(result.per_category_ap.items()):
        _info(f"{CLASS_NAMES[class_id]:<22}{ap:>9.4f}{result.per_category_gt_counts[class_id]:>8}")
    _info(f"mAP {result.map_value:.4f}")
    _info(f"one-class AP {result.one_class_ap:.4f}")

    payload = result.to_dict()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    _emit(payload)
    return 0


def cmd_stats(args, config) -> int:
    thresholds_spec = _resolve(args.thresholds, config, "thresholds", "0.5,0.7,0.9")
    if isinstance(thresholds_spec, str):
        thresholds = tuple(float(t) for t in thresholds_spec.split(",") if t.strip())
    else:
        thresholds = tuple(float(t) for t in thresholds_spec)
    records = pipeline.read_page_records(args.records)
    report = analytics.compute_stats(records, thresholds)
    out = Path(args.out)
    analytics.write_report_csv(report, out / "stats.csv")
    analytics.write_report_json(report, out / "stats.json")
    figures: list[str] = []
    if args.figures:
        from . import plots

        figures = [str(p) for p in plots.render_stats_figures(report, out)]
    _info(f"{len(records)} records, {report.skipped_records} skipped")
    _emit({
        "records": len(records),
        "skipped": report.skipped_records,
        "thresholds": list(thresholds),
        "csv": str(out / "stats.csv"),
        "json": str(out / "stats.json"),
        "figures": figures,
    })
    return 0


def cmd_export(args, config) -> int:
    subset_filter = analytics.SubsetFilter(
        date_start=args.date_start,
        date_end=args.date_end,
        classes=_parse_classes(args.classes),
        min_score=args.min_score,
    )
    records = pipeline.read_page_records(args.records)
    crops_root = args.crops_root or args.records
    result = analytics.export_subset(records, crops_root, subset_filter, args.dest)
    for gap in result.gaps:
        _info(f"missing crop: {gap}")
    _emit({
        "index_rows": result.index_rows,
        "exported_crops": result.exported,
        "gaps": len(result.gaps),
        "dest": str(args.dest),
    })
    return 0


def cmd_similar(args, config) -> int:
    store = embedstore.load(embedstore.read_embeddings_dir(args.store), which=args.which)
    for message in store.report.messages:
        _info(f"store: {message}")
    if args.query_crop:
        vector = store.vector_for(args.query_crop)
        if vector is None:
            raise OperationalError(f"crop {args.query_crop!r} not present in store")
    else:
        with open(args.query_vec, "r", encoding="utf-8") as fh:
            vector = json.load(fh)
    result = embedstore.query_topk(store, vector, k=args.k, metric=args.metric)
    for crop_path, similarity in result.entries:
        _info(f"{similarity:10.4f}  {crop_path}")
    _emit({
        "store_size": len(store),
        "metric": args.metric,
        "results": [
            {"crop": crop_path, "similarity": similarity}
            for crop_path, similarity in result.entries
        ],
    })
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="newsvis",
        description="Extract, evaluate, and analyze visual content from digitized newspaper pages.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its keys")
    sub = parser.add_subparsers(dest="command", required=True)

    p_manifest = sub.add_parser("manifest", help="manifest operations")
    manifest_sub = p_manifest.add_subparsers(dest="subcommand", required=True)
    p_build = manifest_sub.add_parser("build", help="scan a corpus tree into a manifest")
    p_build.add_argument("--source", required=True, help="local corpus root directory")
    p_build.add_argument("--batch-name", required=True)
    p_build.add_argument("--out", required=True, help="manifest file to write")
    p_build.set_defaults(func=cmd_manifest_build)

    p_pipeline = sub.add_parser("pipeline", help="pipeline operations")
    pipeline_sub = p_pipeline.add_subparsers(dest="subcommand", required=True)
    p_run = pipeline_sub.add_parser("run", help="process every page in a manifest")
    p_run.add_argument("--manifest", required=True)
    p_run.add_argument("--source", help="corpus root directory or HTTP base URL "
                                        "(default '.'; env NN_SOURCE_URL)")
    p_run.add_argument("--detector", default="stub", help="'stub' or 'file' (default stub)")
    p_run.add_argument("--predictions", help="predictions JSONL for --detector file")
    p_run.add_argument("--out", required=True, help="output root for records and crops")
    p_run.add_argument("--workers", type=int, help="worker threads (default 1; env NN_WORKERS)")
    p_run.add_argument("--downsample", type=int, help="image downsampling factor (default 6)")
    p_run.add_argument("--save-floor", type=float,
                       help="minimum score retained in records (default 0.05)")
    p_run.add_argument("--embed-floor", type=float,
                       help="minimum score eligible for embeddings (default 0.5)")
    p_run.add_argument("--policy", choices=pipeline.CONTAINMENT_POLICIES,
                       help="OCR containment policy (default center)")
    p_run.add_argument("--jpeg-quality", type=int, help="crop JPEG quality (default 90)")
    p_run.set_defaults(func=cmd_pipeline_run)

    p_coco = sub.add_parser("coco", help="training-set operations")
    coco_sub = p_coco.add_subparsers(dest="subcommand", required=True)
    p_convert = coco_sub.add_parser("convert", help="convert a raw annotation export to COCO")
    p_convert.add_argument("--raw", required=True, help="raw annotation export JSON")
    p_convert.add_argument("--dims", required=True,
                           help="JSON map of page id to [width, height] pixels")
    p_convert.add_argument("--mapping", help="field mapping config JSON (default built-in)")
    p_convert.add_argument("--out", required=True)
    p_convert.set_defaults(func=cmd_coco_convert)
    p_split = coco_sub.add_parser("split", help="deterministic train/val split")
    p_split.add_argument("--coco", required=True)
    p_split.add_argument("--val-fraction", type=float, default=0.2,
                         help="validation fraction (default 0.2)")
    p_split.add_argument("--seed", type=int, default=0, help="shuffle seed (default 0)")
    p_split.add_argument("--train-out", required=True)
    p_split.add_argument("--val-out", required=True)
    p_split.set_defaults(func=cmd_coco_split)

    p_eval = sub.add_parser("eval", help="COCO-standard AP evaluation")
    p_eval.add_argument("--preds", required=True, help="predictions JSONL (wire format)")
    p_eval.add_argument("--gt", required=True,
                        help="ground truth: COCO JSON or wire format (scores ignored)")
    p_eval.add_argument("--out", help="also write the result JSON here")
    p_eval.set_defaults(func=cmd_eval)

    p_stats = sub.add_parser("stats", help="corpus statistics report")
    p_stats.add_argument("--records", required=True, help="pipeline output root")
    p_stats.add_argument("--out", required=True, help="report directory")
    p_stats.add_argument("--thresholds", help="comma-separated cuts (default 0.5,0.7,0.9)")
    p_stats.add_argument("--figures", action="store_true",
                         help="also render PNG figures next to the CSV/JSON")
    p_stats.set_defaults(func=cmd_stats)

    p_export = sub.add_parser("export", help="filtered subset export")
    p_export.add_argument("--records", required=True, help="pipeline output root")
    p_export.add_argument("--crops-root", help="crop file root (default --records)")
    p_export.add_argument("--dest", required=True)
    p_export.add_argument("--classes", required=True,
                          help="comma-separated class names or codes, e.g. 'Map' or '2'")
    p_export.add_argument("--date-start", required=True, help="inclusive, YYYY-MM-DD")
    p_export.add_argument("--date-end", required=True, help="inclusive, YYYY-MM-DD")
    p_export.add_argument("--min-score", type=float, default=0.5,
                          help="minimum score, >= 0.05 (default 0.5)")
    p_export.set_defaults(func=cmd_export)

    p_similar = sub.add_parser("similar", help="embedding similarity query")
    p_similar.add_argument("--store", required=True, help="directory of *_embeddings.json files")
    p_similar.add_argument("--which", choices=("r18", "r50"), default="r18",
                           help="embedding family (default r18)")
    group = p_similar.add_mutually_exclusive_group(required=True)
    group.add_argument("--query-crop", help="crop filepath whose stored vector is the query")
    group.add_argument("--query-vec", help="JSON file holding a raw query vector")
    p_similar.add_argument("--k", type=int, default=5, help="results to return (default 5)")
    p_similar.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine",
                           help="similarity metric (default cosine)")
    p_similar.set_defaults(func=cmd_similar)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except OperationalError as exc:
        _info(f"error: {exc}")
        return 1
    except (pipeline.PipelineError, ValueError, OSError, json.JSONDecodeError) as exc:
        _info(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
