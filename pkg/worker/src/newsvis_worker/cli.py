"""Worker command line: `newsvis-worker --images list.txt --mode both
--out preds.jsonl --emb-out embs/ [--stub]`."""

from __future__ import annotations

import argparse
import json
import sys

from .worker import MODES, WorkerJob, read_image_list, run_worker, write_failure_report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="newsvis-worker",
        description="Run detection/embedding inference over page images and emit "
                    "wire-format predictions and embedding sidecars.",
    )
    parser.add_argument("--images", required=True,
                        help="list file: one `page_id<TAB>image_path` (or bare path) per line")
    parser.add_argument("--mode", choices=MODES, default="both",
                        help="what to produce (default both)")
    parser.add_argument("--out", help="predictions JSONL path (detect/both modes)")
    parser.add_argument("--emb-out", help="embedding sidecar root (embed/both modes)")
    parser.add_argument("--stub", action="store_true",
                        help="replay the deterministic stub detector; no model needed")
    parser.add_argument("--model", help="detection model: TorchScript archive or checkpoint")
    parser.add_argument("--label-map",
                        help="JSON file mapping model label integers to class codes 0-6")
    parser.add_argument("--score-floor", type=float, default=0.05,
                        help="minimum score retained (default 0.05)")
    parser.add_argument("--embed-floor", type=float, default=0.5,
                        help="minimum score eligible for embeddings (default 0.5)")
    parser.add_argument("--downsample", type=int, default=6,
                        help="image downsampling factor (default 6)")
    parser.add_argument("--failures", help="failure report path "
                                           "(default <out>.failures.tsv)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.stub and not args.model:
        parser.error("either --stub or --model is required")
    if args.mode in ("detect", "both") and not args.out:
        parser.error(f"--out is required with --mode {args.mode}")
    if args.mode in ("embed", "both") and not args.emb_out:
        parser.error(f"--emb-out is required with --mode {args.mode}")

    label_map = None
    if args.label_map:
        from .models import load_label_map

        label_map = load_label_map(args.label_map)

    try:
        job = WorkerJob(
            pages=read_image_list(args.images),
            mode=args.mode,
            model_ref=None if args.stub else args.model,
            label_map=label_map,
            score_floor=args.score_floor,
            embed_floor=args.embed_floor,
            downsample_factor=args.downsample,
        )
        result = run_worker(job, out_path=args.out, emb_out=args.emb_out)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    failures_path = args.failures or (f"{args.out}.failures.tsv" if args.out
                                      else "worker.failures.tsv")
    write_failure_report(result, failures_path)
    for page_id, message in result.failures:
        print(f"failed: {page_id}: {message}", file=sys.stderr)
    json.dump({
        "processed": len(result.processed),
        "failed": len(result.failures),
        "prediction_lines": result.prediction_lines,
        "embedding_records": result.embedding_records,
        "failure_report": failures_path,
    }, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
