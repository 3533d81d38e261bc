"""Cold-start active-learning loop, metrics, seed aggregation, and reports.

One experiment = one dataset, one strategy, several seeds. Every round the
student head is retrained from scratch on the labeled set, evaluated on the
test split, and the strategy picks the next batch from the unlabeled pool; a
configurable fraction of each purchase is diverted to the held-out
calibration split. Accuracy is recorded after training and before querying,
so round t reflects seed_size + (t-1)*B purchased labels.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ENGINE_VERSION
from .baselines import (
    select_badge,
    select_bald,
    select_coreset,
    select_random,
    select_uncertainty,
)
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
    DatasetBundle,
    EmbeddingTable,
    PoolState,
    PrototypeTable,
    SyntheticSpec,
    generate_synthetic,
    init_pool,
    l2_normalize,
    load_cache,
    load_class_names,
)
from .rng import RNG_ALGORITHM, derive_seed
from .scoring import DiagnosticsSummary, pool_diagnostics
from .selection import SelectionConfig, ccma_select, score_candidates
from .student import (
    TrainConfig,
    accuracy,
    forward,
    grad_embedding,
    mc_dropout_posteriors,
    train_student,
)
from .teacher import TeacherModel, teacher_posterior

STRATEGIES = (
    "random",
    "uncertainty",
    "entropy",
    "margins",
    "coreset",
    "bald",
    "badge",
    "ccma",
)

DEFAULT_SEEDS = (1, 10, 100, 1000, 10000)

CSV_COLUMNS = (
    "round",
    "n_labeled",
    "test_acc",
    "query_sec",
    "train_sec",
    "mean_overlap",
    "mean_symdiff",
    "frac_top1_disagree",
    "mean_js",
    "mean_conf_s",
    "mean_conf_t",
    "cov_s",
    "size_s",
    "cov_t",
    "size_t",
)

_SALT_TRAIN_ROUND = 501
_SALT_QUERY_ROUND = 502


@dataclass
class CachePaths:
    train_student: str
    train_teacher: str
    test_student: str
    test_teacher: str
    prototypes: str
    class_names: str


@dataclass
class ConformalConfig:
    mode: str = SIZE_TARGET
    student_target: float = 5.0  # alpha_S when mode is coverage_target
    teacher_target: float = 3.0  # alpha_T when mode is coverage_target
    tol: float = DEFAULT_SIZE_TOL

    def __post_init__(self) -> None:
        if self.mode not in (SIZE_TARGET, COVERAGE_TARGET):
            raise ValueError(f"unknown conformal mode {self.mode!r}")


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description; serializes into the manifest."""

    dataset: SyntheticSpec | CachePaths
    strategy: str = "ccma"
    variant: str | None = None
    rounds: int = 20
    batch: int = 100
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    seed_size: int | None = None  # None -> batch
    cal_fraction: float = 0.2
    tau: float = 0.01
    gate_eps: float = 1e-8
    dropout: float = 0.75
    bald_passes: int = 10
    selection: SelectionConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    conformal: ConformalConfig = field(default_factory=ConformalConfig)
    timing: str = "wall"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.rounds < 1 or self.batch < 1:
            raise ValueError("rounds and batch must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not 0 <= self.cal_fraction < 1:
            raise ValueError("cal_fraction must lie in [0, 1)")
        if self.timing not in ("wall", "none"):
            raise ValueError("timing must be 'wall' or 'none'")
        if self.strategy == "bald" and not self.dropout > 0:
            raise ValueError("bald needs dropout > 0 for MC sampling")
        if self.selection is None:
            self.selection = SelectionConfig(batch_B=self.batch)
        if self.variant is not None:
            self.selection = SelectionConfig.for_variant(
                self.variant,
                self.batch,
                kappa=self.selection.kappa,
                subpool_size=self.selection.subpool_size,
                kernel_sigma=self.selection.kernel_sigma,
            )
        elif self.selection.batch_B != self.batch:
            raise ValueError("selection.batch_B must equal batch")

    @property
    def resolved_seed_size(self) -> int:
        return self.seed_size if self.seed_size is not None else self.batch

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        key = "synthetic" if isinstance(self.dataset, SyntheticSpec) else "caches"
        d["dataset"] = {key: dataclasses.asdict(self.dataset)}
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        ds = raw.pop("dataset")
        if "synthetic" in ds:
            dataset: SyntheticSpec | CachePaths = SyntheticSpec(**ds["synthetic"])
        elif "caches" in ds:
            dataset = CachePaths(**ds["caches"])
        else:
            raise ValueError("dataset must contain 'synthetic' or 'caches'")
        if "seeds" in raw:
            raw["seeds"] = tuple(raw["seeds"])
        if raw.get("selection") is not None:
            raw["selection"] = SelectionConfig(**raw["selection"])
        if raw.get("train") is not None:
            raw["train"] = TrainConfig(**raw["train"])
        if raw.get("conformal") is not None:
            raw["conformal"] = ConformalConfig(**raw["conformal"])
        return cls(dataset=dataset, **raw)


@dataclass
class RoundRecord:
    round: int
    n_labeled: int
    test_acc: float
    query_sec: float
    train_sec: float
    mean_overlap: float
    mean_symdiff: float
    frac_top1_disagree: float
    mean_js: float
    mean_conf_s: float
    mean_conf_t: float
    cov_s: float
    size_s: float
    cov_t: float
    size_t: float

    def csv_row(self) -> str:
        cells = [str(self.round), str(self.n_labeled)]
        for name in CSV_COLUMNS[2:]:
            cells.append(f"{getattr(self, name):.6f}")
        return ",".join(cells)


@dataclass
class RunResult:
    config: ExperimentConfig
    per_seed: dict[int, list[RoundRecord]]
    aulc: dict[int, float]
    flags: list[str]

    def accuracy_curves(self) -> dict[int, list[float]]:
        return {s: [r.test_acc for r in recs] for s, recs in self.per_seed.items()}


def load_bundle(dataset: SyntheticSpec | CachePaths) -> DatasetBundle:
    if isinstance(dataset, SyntheticSpec):
        return generate_synthetic(dataset)
    tr_s, tr_lab = load_cache(dataset.train_student)
    tr_t, tr_lab_t = load_cache(dataset.train_teacher)
    te_s, te_lab = load_cache(dataset.test_student)
    te_t, te_lab_t = load_cache(dataset.test_teacher)
    proto_table, _ = load_cache(dataset.prototypes)
    names = load_class_names(dataset.class_names)

    def pick(a, b, what):
        if a is None and b is None:
            raise ValueError(f"no labels found in {what} caches")
        if a is not None and b is not None and not np.array_equal(a, b):
            raise ValueError(f"{what} caches carry conflicting labels")
        return a if a is not None else b

    if not tr_t.normalized:
        tr_t = l2_normalize(tr_t)
    if not te_t.normalized:
        te_t = l2_normalize(te_t)
    protos = PrototypeTable(proto_table.data, normalized=proto_table.normalized)
    if not protos.normalized:
        protos = PrototypeTable(l2_normalize(EmbeddingTable(protos.rows)).data, normalized=True)
    return DatasetBundle(
        train_student=tr_s,
        train_teacher=tr_t,
        test_student=te_s,
        test_teacher=te_t,
        train_labels=pick(tr_lab, tr_lab_t, "train"),
        test_labels=pick(te_lab, te_lab_t, "test"),
        prototypes=protos,
        class_names=names,
    )


def compute_aulc(accuracies: list[float]) -> float:
    """Trapezoidal mean of the accuracy-vs-round curve; equals a flat curve's value."""
    a = np.asarray(accuracies, dtype=np.float64)
    if a.size < 1:
        raise ValueError("empty accuracy sequence")
    if a.size == 1:
        return float(a[0])
    return float(np.mean((a[:-1] + a[1:]) / 2.0))


def labels_to_accuracy(
    records: list[tuple[int, float]], threshold: float, interpolate: bool = True
) -> int | None:
    """Smallest label count whose (interpolated) mean accuracy reaches threshold."""
    for i, (n, acc) in enumerate(records):
        if acc >= threshold:
            if i == 0 or not interpolate:
                return int(n)
            n_prev, acc_prev = records[i - 1]
            frac = (threshold - acc_prev) / (acc - acc_prev)
            # round to 9 decimals first so float dust cannot inflate the ceil
            return int(math.ceil(round(n_prev + frac * (n - n_prev), 9)))
    return None


def aggregate_seeds(curves: list[list[float]]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Per-round sample mean and std (n-1 denominator) across seeds."""
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"seed curves have mismatched lengths {sorted(lengths)}")
    arr = np.asarray(curves, dtype=np.float64)
    flags = []
    if arr.shape[0] == 1:
        flags.append("single seed: std reported as 0")
        return arr[0], np.zeros(arr.shape[1]), flags
    return arr.mean(axis=0), arr.std(axis=0, ddof=1), flags


def _fit_round_calibrators(cfg, pool, p_used_s, p_used_t, train_labels, flags, round_no):
    """Coverage-mode calibrators from the held-out split; size mode returns None
    (fitted later on the candidate pool, which needs no labels)."""
    if cfg.conformal.mode != COVERAGE_TARGET:
        return None, None
    idx = pool.calibration
    if idx.size == 0:
        flags.append(f"round {round_no}: calibration split empty, using labeled seed")
        idx = pool.labeled
    labels = train_labels[idx]
    rows = np.arange(idx.size)
    score_s = nonconformity(p_used_s[idx])[rows, labels]
    score_t = nonconformity(p_used_t[idx])[rows, labels]
    return (
        calibrate_coverage_target(score_s, cfg.conformal.student_target),
        calibrate_coverage_target(score_t, cfg.conformal.teacher_target),
    )


def _query(cfg, bundle, pool, model, p_s_train, p_t_train, seed, round_no, flags):
    """Run the configured strategy; returns (batch, scores-for-diagnostics, cals)."""
    B = min(cfg.batch, pool.unlabeled.size)
    qseed = derive_seed(seed, _SALT_QUERY_ROUND, round_no)
    cal_s, cal_t = _fit_round_calibrators(
        cfg, pool, p_s_train, p_t_train, bundle.train_labels, flags, round_no
    )

    if cfg.strategy == "ccma":
        outcome = ccma_select(
            pool,
            bundle.train_teacher,
            p_s_train,
            p_t_train,
            cfg.selection,
            cal_s=cal_s,
            cal_t=cal_t,
            size_targets=(cfg.conformal.student_target, cfg.conformal.teacher_target),
            size_tol=cfg.conformal.tol,
            eps=cfg.gate_eps,
            seed=qseed,
        )
        return outcome.batch, outcome.scores, outcome.cal_s, outcome.cal_t

    unl = pool.unlabeled
    if cfg.strategy == "random":
        batch = select_random(unl, B, qseed)
    elif cfg.strategy in ("uncertainty", "entropy", "margins"):
        mode = "least_confidence" if cfg.strategy == "uncertainty" else cfg.strategy
        batch = unl[select_uncertainty(p_s_train[unl], B, mode)]
    elif cfg.strategy == "coreset":
        covered = np.concatenate([pool.labeled, pool.calibration])
        batch = select_coreset(bundle.train_student, covered, unl, B)
    elif cfg.strategy == "bald":
        mc = mc_dropout_posteriors(
            model, bundle.train_student.take(unl), cfg.bald_passes, qseed
        )
        batch = unl[select_bald(mc, B)]
    elif cfg.strategy == "badge":
        batch = unl[select_badge(grad_embedding(model, bundle.train_student.take(unl)), B, qseed)]
    else:  # pragma: no cover - guarded by config validation
        raise ValueError(cfg.strategy)
    return batch, None, cal_s, cal_t


def _run_seed(cfg: ExperimentConfig, bundle, p_t_train, p_t_test, seed, flags):
    records: list[RoundRecord] = []
    pool = init_pool(bundle, cfg.resolved_seed_size, cfg.cal_fraction, seed)
    C = bundle.n_classes
    clock = time.perf_counter if cfg.timing == "wall" else (lambda: 0.0)

    for t in range(1, cfg.rounds + 1):
        if pool.unlabeled.size == 0:
            flags.append(f"seed {seed}: unlabeled pool exhausted before round {t}, run truncated")
            break
        n_labeled = pool.n_purchased

        t0 = clock()
        val_feats = val_labels = None
        if pool.calibration.size:
            val_feats = bundle.train_student.take(pool.calibration)
            val_labels = bundle.train_labels[pool.calibration]
        train_cfg = dataclasses.replace(cfg.train, seed=derive_seed(seed, _SALT_TRAIN_ROUND, t))
        model = train_student(
            bundle.train_student.take(pool.labeled),
            bundle.train_labels[pool.labeled],
            C,
            val_feats,
            val_labels,
            train_cfg,
            rho=cfg.dropout,
        )
        train_sec = clock() - t0

        p_s_test = forward(model, bundle.test_student)
        test_acc = accuracy(p_s_test, bundle.test_labels)
        p_s_train = forward(model, bundle.train_student)

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            t1 = clock()
            batch, scores, cal_s, cal_t = _query(
                cfg, bundle, pool, model, p_s_train, p_t_train, seed, t, flags
            )
            query_sec = clock() - t1
        for w in caught:
            flags.append(f"seed {seed} round {t}: {w.message}")

        if scores is None:
            # Baseline strategies: score the unlabeled pool just for diagnostics.
            if cal_s is None or cal_t is None:
                cal_s = calibrate_size_target(
                    nonconformity(p_s_train[pool.unlabeled]),
                    cfg.conformal.student_target,
                    tol=cfg.conformal.tol,
                )
                cal_t = calibrate_size_target(
                    nonconformity(p_t_train[pool.unlabeled]),
                    cfg.conformal.teacher_target,
                    tol=cfg.conformal.tol,
                )
            scores = score_candidates(
                p_s_train[pool.unlabeled], p_t_train[pool.unlabeled], cal_s, cal_t, eps=cfg.gate_eps
            )
        diag = pool_diagnostics(scores)

        cov_s, size_s = audit(predict_sets(cal_s, nonconformity(p_s_test)), bundle.test_labels)
        cov_t, size_t = audit(predict_sets(cal_t, nonconformity(p_t_test)), bundle.test_labels)

        records.append(
            RoundRecord(
                round=t,
                n_labeled=n_labeled,
                test_acc=test_acc,
                query_sec=query_sec,
                train_sec=train_sec,
                mean_overlap=diag.mean_overlap,
                mean_symdiff=diag.mean_symdiff,
                frac_top1_disagree=diag.frac_top1_disagree,
                mean_js=diag.mean_js,
                mean_conf_s=diag.mean_conf_s,
                mean_conf_t=diag.mean_conf_t,
                cov_s=cov_s,
                size_s=size_s,
                cov_t=cov_t,
                size_t=size_t,
            )
        )
        n_cal = int(round(cfg.cal_fraction * batch.size))
        pool.acquire(batch, n_cal)
    return records


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run every seed of one experiment; a pure function of the config."""
    bundle = load_bundle(cfg.dataset)
    if cfg.conformal.mode == SIZE_TARGET:
        for name, target in (
            ("teacher_target", cfg.conformal.teacher_target),
            ("student_target", cfg.conformal.student_target),
        ):
            if not 1 <= target <= bundle.n_classes:
                raise ValueError(
                    f"conformal.{name}={target} outside [1, {bundle.n_classes}] for this dataset"
                )
    teacher = TeacherModel(bundle.prototypes, tau=cfg.tau)
    p_t_train = teacher_posterior(teacher, bundle.train_teacher)
    p_t_test = teacher_posterior(teacher, bundle.test_teacher)

    flags: list[str] = []
    per_seed: dict[int, list[RoundRecord]] = {}
    aulc: dict[int, float] = {}
    for seed in cfg.seeds:
        records = _run_seed(cfg, bundle, p_t_train, p_t_test, seed, flags)
        per_seed[seed] = records
        aulc[seed] = compute_aulc([r.test_acc for r in records])
    return RunResult(config=cfg, per_seed=per_seed, aulc=aulc, flags=flags)


def write_report(result: RunResult, out_dir: str | Path, force: bool = False) -> list[Path]:
    """Per-seed CSVs, aggregate CSV, and a manifest with the resolved config."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; pass force=True to overwrite")
    out.mkdir(parents=True, exist_ok=True)

    written = []
    for seed, records in result.per_seed.items():
        path = out / f"seed_{seed}.csv"
        lines = [",".join(CSV_COLUMNS)] + [r.csv_row() for r in records]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

    curves = [[r.test_acc for r in recs] for recs in result.per_seed.values()]
    mean, std, agg_flags = aggregate_seeds(curves)
    n_labeled = [r.n_labeled for r in next(iter(result.per_seed.values()))]
    rows = ["round,n_labeled,mean_test_acc,std_test_acc"]
    for i in range(mean.size):
        rows.append(f"{i + 1},{n_labeled[i]},{mean[i]:.6f},{std[i]:.6f}")
    agg_path = out / "aggregate.csv"
    agg_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    written.append(agg_path)

    aulc_values = list(result.aulc.values())
    manifest = {
        "engine_version": ENGINE_VERSION,
        "rng": RNG_ALGORITHM,
        "config": result.config.to_dict(),
        "aulc": {str(s): v for s, v in result.aulc.items()},
        "aulc_mean": float(np.mean(aulc_values)),
        "aulc_std": float(np.std(aulc_values, ddof=1)) if len(aulc_values) > 1 else 0.0,
        "flags": result.flags + agg_flags,
    }
    man_path = out / "manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(man_path)
    return written
