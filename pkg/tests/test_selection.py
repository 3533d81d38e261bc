import itertools

import numpy as np
import pytest

from ccma.feature_store import EmbeddingTable, SyntheticSpec, generate_synthetic, init_pool
from ccma.selection import (
    SelectionConfig,
    build_subpool,
    ccma_select,
    coverage_greedy,
    coverage_objective,
    kmeans,
    median_sigma,
    top_kappa,
)
from ccma.student import TrainConfig, forward, train_student
from ccma.teacher import TeacherModel, teacher_posterior


def test_kmeans_two_blobs():
    pts = np.array([[0.0], [0.1], [10.0], [10.1]])
    res = kmeans(pts, 2, seed=0)
    centers = np.sort(res.centroids.ravel())
    np.testing.assert_allclose(centers, [0.05, 10.05], atol=1e-6)
    assert res.assignment[0] == res.assignment[1]
    assert res.assignment[2] == res.assignment[3]


def test_kmeans_k_equals_n():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((12, 3))
    res = kmeans(pts, 12, seed=1)
    assert res.inertia < 1e-12  # zero up to dot-product float noise


def test_kmeans_single_cluster_of_duplicates():
    pts = np.tile([[2.0, -1.0]], (5, 1))
    res = kmeans(pts, 1, seed=0)
    np.testing.assert_allclose(res.centroids, [[2.0, -1.0]], atol=1e-12)
    assert res.inertia == 0.0


def test_kmeans_rejects_oversized_k():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4, seed=0)


def test_kmeans_deterministic():
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((60, 4))
    a = kmeans(pts, 8, seed=3)
    b = kmeans(pts, 8, seed=3)
    assert a.centroids.tobytes() == b.centroids.tobytes()
    assert np.array_equal(a.assignment, b.assignment)


def test_kmeans_assignment_is_nearest():
    rng = np.random.default_rng(6)
    pts = rng.standard_normal((80, 3))
    res = kmeans(pts, 6, seed=2)
    d2 = ((pts[:, None, :] - res.centroids[None]) ** 2).sum(-1)
    assert np.all(d2[np.arange(80), res.assignment] <= d2.min(axis=1) + 1e-9)
    np.testing.assert_allclose(res.inertia, d2[np.arange(80), res.assignment].sum(), rtol=1e-9)


def _feats(points):
    return EmbeddingTable(np.asarray(points, dtype=np.float32))


def test_build_subpool_none_is_identity():
    idx = np.array([5, 9, 2, 7])
    cfg = SelectionConfig(batch_B=2, subpool_mode="none")
    out = build_subpool(_feats(np.random.default_rng(0).standard_normal((4, 3))), idx, cfg, seed=0)
    assert np.array_equal(out, np.sort(idx))


def test_build_subpool_selective_full_size_covers_all():
    rng = np.random.default_rng(1)
    idx = np.arange(10, 25)
    cfg = SelectionConfig(batch_B=2, subpool_mode="selective", subpool_size=15)
    out = build_subpool(_feats(rng.standard_normal((15, 3))), idx, cfg, seed=0)
    assert np.array_equal(out, idx)


def test_build_subpool_selective_two_blobs():
    pts = np.array([[0.0, 0], [0.2, 0], [0.1, 0.1], [10.0, 0], [10.2, 0], [10.1, 0.1]])
    idx = np.arange(6)
    cfg = SelectionConfig(batch_B=2, subpool_mode="selective", subpool_size=2)
    out = build_subpool(_feats(pts), idx, cfg, seed=0)
    assert out.size == 2
    assert (out < 3).sum() == 1 and (out >= 3).sum() == 1  # one per blob


def test_build_subpool_clamps_with_warning():
    idx = np.arange(4)
    cfg = SelectionConfig(batch_B=2, subpool_mode="random", subpool_size=50)
    with pytest.warns(RuntimeWarning):
        out = build_subpool(_feats(np.eye(4)), idx, cfg, seed=0)
    assert np.array_equal(out, idx)


def test_build_subpool_random_matches_none_at_full_size():
    rng = np.random.default_rng(2)
    idx = np.arange(30)
    feats = _feats(rng.standard_normal((30, 3)))
    cfg_r = SelectionConfig(batch_B=2, subpool_mode="random", subpool_size=30)
    cfg_n = SelectionConfig(batch_B=2, subpool_mode="none")
    assert np.array_equal(build_subpool(feats, idx, cfg_r, 0), build_subpool(feats, idx, cfg_n, 0))


def test_top_kappa_exact_b():
    scores = np.array([0.1, 0.9, 0.5, 0.7])
    out = top_kappa(scores, B=2, kappa=1.0)
    assert list(out) == [1, 3]


def test_top_kappa_tie_rule():
    scores = np.zeros(10)
    out = top_kappa(scores, B=2, kappa=2.0)
    assert list(out) == [0, 1, 2, 3]


def test_top_kappa_large_pool():
    rng = np.random.default_rng(3)
    out = top_kappa(rng.random(5000), B=100, kappa=20.0)
    assert out.size == 2000


def brute_force_best_subset(feats, scores, B, sigma):
    best_val, best = -1.0, None
    for combo in itertools.combinations(range(len(scores)), B):
        val = coverage_objective(feats, scores, np.array(combo), sigma)
        if val > best_val:
            best_val, best = val, combo
    return best_val, best


def test_coverage_greedy_single_step_definition():
    rng = np.random.default_rng(4)
    feats = rng.standard_normal((8, 2))
    scores = rng.random(8)
    sigma = 1.0
    picks = coverage_greedy(np.arange(8), feats, scores, B=1, sigma=sigma)
    vals = [coverage_objective(feats, scores, np.array([j]), sigma) for j in range(8)]
    assert picks[0] == int(np.argmax(vals))


def test_coverage_greedy_zero_scores_tie_rule():
    rng = np.random.default_rng(5)
    feats = rng.standard_normal((6, 2))
    picks = coverage_greedy(np.arange(6), feats, np.zeros(6), B=3, sigma=1.0)
    assert list(picks) == [0, 1, 2]


def test_coverage_greedy_warns_on_small_candidate_set():
    feats = np.random.default_rng(0).standard_normal((3, 2))
    with pytest.warns(RuntimeWarning):
        out = coverage_greedy(np.array([0, 2]), feats, np.ones(3), B=3, sigma=1.0)
    assert list(out) == [0, 2]


def test_coverage_greedy_approximation_guarantee():
    # (1 - 1/e) bound against exhaustive enumeration on 50 random instances
    rng = np.random.default_rng(6)
    bound = 1.0 - 1.0 / np.e
    for _ in range(50):
        n = int(rng.integers(5, 13))
        B = int(rng.integers(1, min(4, n) + 1))
        feats = rng.standard_normal((n, 2))
        scores = rng.random(n)
        sigma = float(rng.uniform(0.5, 2.0))
        picks = coverage_greedy(np.arange(n), feats, scores, B=B, sigma=sigma)
        greedy_val = coverage_objective(feats, scores, picks, sigma)
        opt_val, _ = brute_force_best_subset(feats, scores, B, sigma)
        assert greedy_val >= bound * opt_val - 1e-12


def test_coverage_monotone_gains():
    rng = np.random.default_rng(7)
    feats = rng.standard_normal((20, 3))
    scores = rng.random(20)
    picks = coverage_greedy(np.arange(20), feats, scores, B=6, sigma=1.0)
    vals = [coverage_objective(feats, scores, picks[: i + 1], 1.0) for i in range(6)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_median_sigma_positive_and_deterministic():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((2000, 4))
    a = median_sigma(X, seed=1)
    b = median_sigma(X, seed=1)
    assert a == b > 0


def _round_inputs(seed=0):
    spec = SyntheticSpec(
        C=5, n_train=300, n_test=100, d_student=12, d_teacher=8,
        class_separation=3.0, teacher_noise=0.5, student_noise=0.3, seed=seed,
    )
    bundle = generate_synthetic(spec)
    pool = init_pool(bundle, seed_size=20, cal_fraction=0.2, seed=seed)
    teacher = TeacherModel(bundle.prototypes, tau=0.05)
    p_t = teacher_posterior(teacher, bundle.train_teacher)
    model = train_student(
        bundle.train_student.take(pool.labeled),
        bundle.train_labels[pool.labeled],
        5, None, None, TrainConfig(epochs=40, seed=seed), rho=0.5,
    )
    p_s = forward(model, bundle.train_student)
    return bundle, pool, p_s, p_t


def test_ccma_select_respects_partition():
    bundle, pool, p_s, p_t = _round_inputs()
    cfg = SelectionConfig.for_variant("V1", batch_B=8, subpool_size=60)
    out = ccma_select(pool, bundle.train_teacher, p_s, p_t, cfg, seed=5)
    assert out.batch.size == 8
    assert np.unique(out.batch).size == 8
    assert np.isin(out.batch, pool.unlabeled).all()
    assert not np.isin(out.batch, pool.labeled).any()
    assert np.isin(out.batch, out.subpool).all()


def test_ccma_select_v5_is_plain_top_b():
    bundle, pool, p_s, p_t = _round_inputs(seed=1)
    cfg = SelectionConfig.for_variant("V5", batch_B=6)
    out = ccma_select(pool, bundle.train_teacher, p_s, p_t, cfg, seed=5)
    order = np.lexsort((np.arange(out.scores.delta.size), -out.scores.delta))
    expected = out.subpool[order[:6]]
    assert np.array_equal(out.batch, expected)
    assert np.array_equal(out.subpool, pool.unlabeled)


def test_ccma_select_deterministic():
    bundle, pool, p_s, p_t = _round_inputs(seed=2)
    cfg = SelectionConfig.for_variant("V1", batch_B=5, subpool_size=50)
    a = ccma_select(pool, bundle.train_teacher, p_s, p_t, cfg, seed=9)
    b = ccma_select(pool, bundle.train_teacher, p_s, p_t, cfg, seed=9)
    assert np.array_equal(a.batch, b.batch)


def test_variant_presets():
    v2 = SelectionConfig.for_variant("V2", batch_B=4)
    assert v2.subpool_mode == "none" and v2.diversity
    v4 = SelectionConfig.for_variant("V4", batch_B=4)
    assert v4.subpool_mode == "selective" and not v4.diversity
    with pytest.raises(ValueError):
        SelectionConfig.for_variant("V9", batch_B=4)
