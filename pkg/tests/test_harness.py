import json

import numpy as np
import pytest

from ccma.feature_store import SyntheticSpec
from ccma.harness import (
    CSV_COLUMNS,
    CachePaths,
    ExperimentConfig,
    aggregate_seeds,
    compute_aulc,
    labels_to_accuracy,
    load_bundle,
    run_experiment,
    write_report,
)
from ccma.student import TrainConfig


def _spec(**kw):
    base = dict(
        C=5, n_train=400, n_test=200, d_student=12, d_teacher=8,
        class_separation=3.0, teacher_noise=0.5, student_noise=0.3, seed=21,
    )
    base.update(kw)
    return SyntheticSpec(**base)


def _cfg(**kw):
    base = dict(
        dataset=_spec(),
        strategy="random",
        rounds=3,
        batch=5,
        seeds=(1, 10),
        train=TrainConfig(epochs=30),
        timing="none",
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_compute_aulc_flat():
    assert compute_aulc([0.7] * 6) == pytest.approx(0.7)
    assert compute_aulc([0.42]) == 0.42


def test_compute_aulc_ramp():
    assert compute_aulc(list(np.linspace(0, 1, 11))) == pytest.approx(0.5)


def test_labels_to_accuracy_interpolation():
    records = [(100, 0.70), (200, 0.90)]
    assert labels_to_accuracy(records, 0.80) == 150


def test_labels_to_accuracy_immediate_and_never():
    records = [(100, 0.85), (200, 0.90)]
    assert labels_to_accuracy(records, 0.80) == 100
    assert labels_to_accuracy(records, 0.95) is None


def test_labels_to_accuracy_exact_round_mode():
    records = [(100, 0.70), (200, 0.90)]
    assert labels_to_accuracy(records, 0.80, interpolate=False) == 200


def test_aggregate_seeds_values():
    mean, std, flags = aggregate_seeds([[0.8], [0.9]])
    assert mean[0] == pytest.approx(0.85)
    assert std[0] == pytest.approx(0.07071067811865475)
    assert not flags


def test_aggregate_seeds_identical_and_single():
    mean, std, _ = aggregate_seeds([[0.5, 0.6], [0.5, 0.6]])
    assert np.all(std == 0)
    mean, std, flags = aggregate_seeds([[0.5, 0.6]])
    assert np.all(std == 0) and flags


def test_aggregate_seeds_mismatched_lengths():
    with pytest.raises(ValueError):
        aggregate_seeds([[0.5], [0.5, 0.6]])


def test_run_single_round_records():
    res = run_experiment(_cfg(rounds=1))
    assert set(res.per_seed) == {1, 10}
    for records in res.per_seed.values():
        assert len(records) == 1
        assert records[0].n_labeled == 5  # seed set only
        assert 0.0 <= records[0].test_acc <= 1.0


def test_run_label_growth_arithmetic():
    cfg = _cfg(rounds=4, batch=6, seeds=(1,))
    res = run_experiment(cfg)
    counts = [r.n_labeled for r in res.per_seed[1]]
    assert counts == [6, 12, 18, 24]  # seed_size + (t-1) * B


def test_run_deterministic_csv(tmp_path):
    cfg = _cfg(strategy="ccma", variant="V1", rounds=2, batch=4, seeds=(1,))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    write_report(run_experiment(cfg), out_a)
    write_report(run_experiment(cfg), out_b)
    assert (out_a / "seed_1.csv").read_bytes() == (out_b / "seed_1.csv").read_bytes()
    assert (out_a / "aggregate.csv").read_bytes() == (out_b / "aggregate.csv").read_bytes()


@pytest.mark.parametrize(
    "strategy", ["uncertainty", "entropy", "margins", "coreset", "bald", "badge", "ccma"]
)
def test_all_strategies_run(strategy):
    cfg = _cfg(strategy=strategy, rounds=2, seeds=(1,), variant="V3" if strategy == "ccma" else None)
    res = run_experiment(cfg)
    records = res.per_seed[1]
    assert len(records) == 2
    assert records[1].n_labeled == 10


def test_coverage_mode_round_trip():
    from ccma.harness import ConformalConfig

    cfg = _cfg(
        strategy="ccma",
        variant="V2",
        rounds=3,
        batch=8,
        seeds=(1,),
        cal_fraction=0.25,
        conformal=ConformalConfig(mode="coverage_target", student_target=0.2, teacher_target=0.1),
    )
    res = run_experiment(cfg)
    records = res.per_seed[1]
    assert len(records) == 3
    # round 1 has no calibration split yet; the fallback must be flagged
    assert any("calibration split empty" in f for f in res.flags)
    for r in records:
        assert 0.0 <= r.cov_t <= 1.0 and 0.0 <= r.cov_s <= 1.0


def test_pool_exhaustion_truncates():
    cfg = _cfg(
        dataset=_spec(n_train=30), rounds=10, batch=10, seeds=(1,), seed_size=10
    )
    res = run_experiment(cfg)
    assert len(res.per_seed[1]) == 2  # 10 seed + 10 + 10 exhausts the pool
    assert any("exhausted" in f for f in res.flags)


def test_write_report_files_and_headers(tmp_path):
    res = run_experiment(_cfg(seeds=(1, 10)))
    out = tmp_path / "out"
    files = write_report(res, out)
    names = {f.name for f in files}
    assert names == {"seed_1.csv", "seed_10.csv", "aggregate.csv", "manifest.json"}
    header = (out / "seed_1.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    assert (
        header == "round,n_labeled,test_acc,query_sec,train_sec,mean_overlap,mean_symdiff,"
        "frac_top1_disagree,mean_js,mean_conf_s,mean_conf_t,cov_s,size_s,cov_t,size_t"
    )


def test_write_report_refuses_nonempty(tmp_path):
    res = run_experiment(_cfg(seeds=(1,)))
    out = tmp_path / "out"
    write_report(res, out)
    with pytest.raises(FileExistsError):
        write_report(res, out)
    write_report(res, out, force=True)  # explicit opt-in


def test_manifest_reparses_to_resolved_config(tmp_path):
    cfg = _cfg(strategy="ccma", variant="V4", seeds=(1,))
    res = run_experiment(cfg)
    out = tmp_path / "out"
    write_report(res, out)
    manifest = json.loads((out / "manifest.json").read_text())
    reparsed = ExperimentConfig.from_dict(manifest["config"])
    assert reparsed == cfg
    assert manifest["engine_version"]
    assert manifest["rng"] == "pcg64"


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(strategy="alchemy")
    with pytest.raises(ValueError):
        _cfg(rounds=0)
    with pytest.raises(ValueError):
        _cfg(seeds=())
    with pytest.raises(ValueError):
        _cfg(strategy="bald", dropout=0.0)
    with pytest.raises(ValueError):
        _cfg(cal_fraction=1.0)


def test_config_round_trip_defaults():
    cfg = ExperimentConfig.from_dict({"dataset": {"synthetic": {"C": 4, "n_train": 100}}})
    assert cfg.strategy == "ccma"
    assert cfg.seeds == (1, 10, 100, 1000, 10000)
    assert cfg.batch == 100
    assert cfg.train.lr == pytest.approx(1e-2)
    assert cfg.train.weight_decay == pytest.approx(1e-2)
    assert cfg.dropout == pytest.approx(0.75)
    assert cfg.tau == pytest.approx(0.01)
    assert cfg.selection.kappa == pytest.approx(20.0)
    assert cfg.conformal.teacher_target == pytest.approx(3.0)
    assert cfg.conformal.student_target == pytest.approx(5.0)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_load_bundle_from_caches(tmp_path):
    from ccma.cli import main

    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps({"C": 4, "n_train": 60, "n_test": 40, "seed": 2}))
    assert main(["synth", "--spec", str(spec_file), "--out", str(tmp_path / "caches")]) == 0
    paths = json.loads((tmp_path / "caches" / "bundle.json").read_text())["caches"]
    bundle = load_bundle(CachePaths(**paths))
    assert bundle.n_train == 60
    assert bundle.n_classes == 4
    direct = load_bundle(SyntheticSpec(C=4, n_train=60, n_test=40, seed=2))
    assert bundle.train_student.data.tobytes() == direct.train_student.data.tobytes()
    assert np.array_equal(bundle.test_labels, direct.test_labels)
