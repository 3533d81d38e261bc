"""Command-line front end: synth, run, report, calibrate."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import ENGINE_VERSION
from .conformal import (
    COVERAGE_TARGET,
    DEFAULT_SIZE_TOL,
    SIZE_TARGET,
    audit,
    calibrate_coverage_target,
    calibrate_size_target,
    nonconformity,
    predict_sets,
)
from .feature_store import (
    EmbeddingTable,
    SyntheticSpec,
    generate_synthetic,
    load_cache,
    save_cache,
    save_class_names,
)
from .harness import ExperimentConfig, labels_to_accuracy, run_experiment, write_report


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(**json.loads(Path(args.spec).read_text(encoding="utf-8")))
    bundle = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_student": out / "train_student.embc",
        "train_teacher": out / "train_teacher.embc",
        "test_student": out / "test_student.embc",
        "test_teacher": out / "test_teacher.embc",
        "prototypes": out / "prototypes.embc",
        "class_names": out / "class_names.txt",
    }
    save_cache(bundle.train_student, bundle.train_labels, paths["train_student"])
    save_cache(bundle.train_teacher, bundle.train_labels, paths["train_teacher"])
    save_cache(bundle.test_student, bundle.test_labels, paths["test_student"])
    save_cache(bundle.test_teacher, bundle.test_labels, paths["test_teacher"])
    save_cache(
        EmbeddingTable(bundle.prototypes.rows, normalized=bundle.prototypes.normalized),
        None,
        paths["prototypes"],
    )
    save_class_names(bundle.class_names, paths["class_names"])
    caches = {k: str(v) for k, v in paths.items()}
    (out / "bundle.json").write_text(json.dumps({"caches": caches}, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"out": str(out), "n_train": bundle.n_train, "classes": bundle.n_classes}))
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = ExperimentConfig.from_dict(raw)
    result = run_experiment(cfg)
    files = write_report(result, args.out, force=args.force)
    print(json.dumps({"files": [str(f) for f in files], "aulc": {str(k): v for k, v in result.aulc.items()}}))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    agg = Path(args.indir) / "aggregate.csv"
    rows = agg.read_text(encoding="utf-8").strip().splitlines()[1:]
    records = []
    for row in rows:
        _, n_labeled, mean_acc, _ = row.split(",")
        records.append((int(n_labeled), float(mean_acc)))
    targets = [float(t) for t in args.target_acc.split(",") if t.strip()]
    table = {
        f"{t:g}": labels_to_accuracy(records, t, interpolate=not args.exact_rounds)
        for t in targets
    }
    manifest_path = Path(args.indir) / "manifest.json"
    out = {"labels_to_accuracy": table}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        out["aulc_mean"] = manifest.get("aulc_mean")
    print(json.dumps(out, indent=2))
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    table, labels = load_cache(args.posteriors)
    if args.labels:
        _, labels = load_cache(args.labels)
    scores = nonconformity(table.data)
    if args.mode == "size":
        cal = calibrate_size_target(scores, args.target, tol=args.tol)
    else:
        if labels is None:
            raise SystemExit("coverage mode needs labels (attach them or pass --labels)")
        at_truth = scores[np.arange(scores.shape[0]), labels]
        cal = calibrate_coverage_target(at_truth, args.target)
    sets = predict_sets(cal, scores)
    coverage = None
    if labels is not None:
        coverage, _ = audit(sets, labels)
    print(
        json.dumps(
            {
                "mode": SIZE_TARGET if args.mode == "size" else COVERAGE_TARGET,
                "q": cal.q,
                "coverage": coverage,
                "mean_size": float(sets.sizes.mean()),
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="engine", description=__doc__)
    parser.add_argument("--version", action="version", version=ENGINE_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding cache bundle")
    p.add_argument("--spec", required=True, help="JSON file of synthetic-spec fields")
    p.add_argument("--out", required=True, help="output directory for cache files")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="run an experiment and write reports")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="labels-to-accuracy from a results directory")
    p.add_argument("--in", dest="indir", required=True, help="results directory")
    p.add_argument("--target-acc", default="0.8,0.85,0.9", help="comma-separated accuracy targets")
    p.add_argument("--exact-rounds", action="store_true", help="disable interpolation")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("calibrate", help="fit a conformal threshold on a posterior cache")
    p.add_argument("--posteriors", required=True, help="EMBC file holding an n-by-C posterior matrix")
    p.add_argument("--labels", help="EMBC file whose labels to use (defaults to --posteriors)")
    p.add_argument("--mode", choices=("size", "coverage"), default="size")
    p.add_argument("--target", type=float, required=True, help="target mean size or alpha")
    p.add_argument("--tol", type=float, default=DEFAULT_SIZE_TOL)
    p.set_defaults(func=_cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
