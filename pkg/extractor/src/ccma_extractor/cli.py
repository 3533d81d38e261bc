"""Command-line extraction: frozen encoders in, EMBC caches out."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .extract import DEFAULT_TEMPLATES, ExtractionJob, run_job


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extract", description=__doc__)
    parser.add_argument("--dataset", required=True,
                        help="folder:<path> or cifar100 | food101 | caltech101 | caltech256")
    parser.add_argument("--teacher", required=True,
                        help="encoder id, e.g. hf-clip:openai/clip-vit-large-patch14 or fake:64")
    parser.add_argument("--student", required=True,
                        help="encoder id, e.g. hf-vision:facebook/dinov2-giant or fake:96")
    parser.add_argument("--out", required=True, help="output directory for the cache bundle")
    parser.add_argument("--splits", default="train,test", help="comma-separated split names")
    parser.add_argument("--data-root", default=".", help="root for torchvision datasets")
    parser.add_argument("--download", action="store_true", help="allow dataset download")
    parser.add_argument("--templates", help="text file with one prompt template per line")
    parser.add_argument("--class-names", help="text file overriding class names (label order)")
    parser.add_argument("--batch-size", type=int, default=64)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    templates = DEFAULT_TEMPLATES
    if args.templates:
        lines = Path(args.templates).read_text(encoding="utf-8").splitlines()
        templates = tuple(ln.strip() for ln in lines if ln.strip())
    job = ExtractionJob(
        dataset=args.dataset,
        teacher=args.teacher,
        student=args.student,
        out_dir=args.out,
        splits=tuple(s.strip() for s in args.splits.split(",") if s.strip()),
        templates=templates,
        data_root=args.data_root,
        download=args.download,
        class_name_file=args.class_names,
        batch_size=args.batch_size,
    )
    manifest = run_job(job)
    print(json.dumps({"out": args.out, "counts": manifest["counts"], "skipped": manifest["skipped"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
