import numpy as np
import pytest

from difftok import autodiff as ad
from difftok.autodiff import backward, forward_record, gradcheck
from difftok.core_math import SeededRng
from difftok.tokenizer import (
    Codebook,
    assign_soft,
    assignment_forward,
    fit_kmeans,
    gumbel_sample,
    harden,
    init_codebook,
    kmeans_loss,
    tokenize_inference,
)


def brute_force_nearest(x, centers):
    return np.array([int(np.argmin([np.sum((p - c) ** 2) for c in centers]))
                     for p in x])


class TestInitCodebook:
    def test_k_points_k_clusters(self):
        pts = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]])
        fit = fit_kmeans(pts, 4, seed=0)
        got = set(map(tuple, fit.codebook.centroids))
        assert got == set(map(tuple, pts))
        assert fit.final_inertia == 0.0

    def test_separated_blobs_recovered(self):
        rng = SeededRng(11)
        centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
        pts = np.concatenate([c + rng.normal(0, 0.1, size=(200, 2)) for c in centers])
        fit = fit_kmeans(pts, 3, seed=1)
        # brute-force assignment oracle on the generated sample
        labels = brute_force_nearest(pts, fit.codebook.centroids)
        for c in centers:
            est = fit.codebook.centroids[np.argmin(
                [np.sum((c - m) ** 2) for m in fit.codebook.centroids])]
            assert np.linalg.norm(est - c) < 0.05
        np.testing.assert_array_equal(labels, fit.labels)

    def test_inertia_non_increasing(self):
        rng = SeededRng(5)
        pts = rng.normal(size=(300, 4))
        fit = fit_kmeans(pts, 7, seed=2)
        h = fit.inertia_history
        assert all(h[i + 1] <= h[i] + 1e-9 for i in range(len(h) - 1))

    def test_duplicate_points_rejected(self):
        pts = np.ones((10, 3))
        with pytest.raises(ValueError, match="distinct"):
            init_codebook(pts, 2, seed=0)

    def test_codebook_invariants(self):
        rng = SeededRng(9)
        cb = init_codebook(rng.normal(size=(100, 3)), 5, seed=3)
        assert cb.k == 5
        d = np.array([[np.sum((a - b) ** 2) for b in cb.centroids] for a in cb.centroids])
        np.fill_diagonal(d, np.inf)
        assert d.min() > 0


class TestAssignSoft:
    def test_direct_evaluation(self):
        cb = Codebook(centroids=np.array([[0.0], [1.0]]), sigma_sq=1.0)
        p = assign_soft(np.array([[0.0]]), cb)
        np.testing.assert_allclose(p[0], [0.7311, 0.2689], atol=1e-4)

    def test_equidistant_symmetry(self):
        cb = Codebook(centroids=np.array([[-1.0, 0.0], [1.0, 0.0]]))
        p = assign_soft(np.array([[0.0, 3.0]]), cb)
        np.testing.assert_allclose(p[0], [0.5, 0.5], atol=1e-15)

    def test_zero_precision_is_uniform(self):
        cb = Codebook(centroids=np.arange(8.0).reshape(4, 2), sigma_sq=0.0)
        p = assign_soft(np.array([[100.0, -3.0]]), cb)
        np.testing.assert_allclose(p[0], np.full(4, 0.25), atol=1e-15)

    def test_dimension_mismatch(self):
        cb = Codebook(centroids=np.zeros((2, 3)) + np.arange(3))
        with pytest.raises(ValueError):
            assign_soft(np.zeros((4, 2)), cb)


class TestGumbelSample:
    def test_zero_noise_identity_at_tau_one(self):
        probs = np.array([[0.2, 0.5, 0.3], [0.9, 0.05, 0.05]])
        h = gumbel_sample(probs, 1.0, None, noise=np.zeros_like(probs))
        np.testing.assert_allclose(h, probs, atol=1e-12)

    def test_zero_noise_low_temperature_selects_argmax(self):
        probs = np.array([[0.7311, 0.2689]])
        h = gumbel_sample(probs, 0.01, None, noise=np.zeros_like(probs))
        np.testing.assert_allclose(h[0], [1.0, 0.0], atol=1e-12)

    @pytest.mark.parametrize("tau", [0.1, 1.0, 2.0])
    def test_rows_sum_to_one(self, tau):
        rng = SeededRng(4)
        probs = rng.uniform(size=(20, 6))
        probs /= probs.sum(axis=1, keepdims=True)
        h = gumbel_sample(probs, tau, rng)
        np.testing.assert_allclose(h.sum(axis=1), np.ones(20), atol=1e-9)

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            gumbel_sample(np.array([[1.0]]), 0.0, SeededRng(0))

    def test_gumbel_max_statistics(self):
        # harden(gumbel_sample(p)) is an exact categorical sampler in p
        probs = np.tile(np.array([0.5, 0.3, 0.2]), (100_000, 1))
        rng = SeededRng(21)
        h = gumbel_sample(probs, 0.1, rng)
        ids, _ = harden(h)
        freq = np.bincount(ids, minlength=3) / len(ids)
        np.testing.assert_allclose(freq, [0.5, 0.3, 0.2], atol=0.01)


class TestHarden:
    def test_basic(self):
        ids, onehot = harden(np.array([[0.2, 0.8]]))
        np.testing.assert_array_equal(ids, [1])
        np.testing.assert_array_equal(onehot, [[0.0, 1.0]])

    def test_tie_breaks_to_smallest_index(self):
        ids, _ = harden(np.array([[0.5, 0.5]]))
        assert ids[0] == 0

    def test_idempotent_on_onehot(self):
        x = np.eye(3)[[2, 0, 1]]
        ids, onehot = harden(x)
        np.testing.assert_array_equal(onehot, x)
        np.testing.assert_array_equal(ids, [2, 0, 1])


class TestKmeansLoss:
    def test_frames_at_centroids(self):
        cb = Codebook(centroids=np.array([[0.0, 0.0], [1.0, 1.0]]))
        onehot = np.array([[1.0, 0.0], [0.0, 1.0]])
        feats = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert kmeans_loss(feats, onehot, cb) == 0.0

    def test_single_frame(self):
        cb = Codebook(centroids=np.array([[0.0, 0.0], [9.0, 9.0]]))
        assert kmeans_loss(np.array([[1.0, 1.0]]), np.array([[1.0, 0.0]]), cb) == 2.0

    def test_equals_inertia_with_nearest_assignment(self):
        rng = SeededRng(6)
        feats = rng.normal(size=(40, 3))
        cb = Codebook(centroids=rng.normal(size=(5, 3)))
        labels = brute_force_nearest(feats, cb.centroids)
        onehot = np.eye(5)[labels]
        inertia = sum(np.sum((feats[i] - cb.centroids[labels[i]]) ** 2)
                      for i in range(len(feats)))
        assert abs(kmeans_loss(feats, onehot, cb) - inertia) < 1e-9

    def test_lloyd_final_inertia_matches(self):
        rng = SeededRng(8)
        feats = rng.normal(size=(200, 4))
        fit = fit_kmeans(feats, 6, seed=0)
        onehot = np.eye(6)[fit.labels]
        loss = kmeans_loss(feats, onehot, fit.codebook)
        assert abs(loss - fit.final_inertia) < 1e-9 * max(1.0, fit.final_inertia)

    def test_gradient_wrt_centroids(self):
        rng = SeededRng(10)
        feats = rng.normal(size=(12, 3))
        onehot = np.eye(4)[rng.integers(0, 4, size=12)]
        from difftok.autodiff import ParamSet
        params = ParamSet()
        params.add("M", rng.normal(size=(4, 3)))

        def f(pv, _):
            return ad.sum_squares(ad.sub(ad.const(feats),
                                         ad.matmul(ad.const(onehot), pv["M"])))

        report = gradcheck(f, params, None, eps=1e-5)
        assert report["M"]["max_rel_err"] < 1e-6


class TestTokenizeInference:
    def test_features_at_centroids(self):
        cb = Codebook(centroids=np.array([[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]]))
        seq = tokenize_inference(cb.centroids.copy(), cb)
        np.testing.assert_array_equal(seq.ids, [0, 1, 2])

    def test_matches_zero_noise_low_temperature_pipeline(self):
        rng = SeededRng(13)
        feats = rng.normal(size=(50, 4))
        cb = Codebook(centroids=rng.normal(size=(6, 4)))
        am = assignment_forward(feats, cb, tau=1e-3, noise=np.zeros((50, 6)))
        seq = tokenize_inference(feats, cb)
        np.testing.assert_array_equal(seq.ids, am.hard_ids)

    def test_matches_brute_force_scan(self):
        rng = SeededRng(14)
        feats = rng.normal(size=(100, 5))
        cb = Codebook(centroids=rng.normal(size=(5, 5)))
        np.testing.assert_array_equal(tokenize_inference(feats, cb).ids,
                                      brute_force_nearest(feats, cb.centroids))

    def test_pipeline_consistency(self):
        # inference ids == argmin distance == argmax of soft assignment rows
        rng = SeededRng(15)
        feats = rng.normal(size=(80, 3))
        cb = Codebook(centroids=rng.normal(size=(7, 3)), sigma_sq=2.5)
        soft = assign_soft(feats, cb)
        ids = tokenize_inference(feats, cb).ids
        np.testing.assert_array_equal(ids, np.argmax(soft, axis=1))

    def test_dimension_mismatch(self):
        cb = Codebook(centroids=np.zeros((2, 3)) + np.arange(3))
        with pytest.raises(ValueError):
            tokenize_inference(np.zeros((4, 2)), cb)


class TestAssignmentMatrixInvariants:
    def test_rows_and_hard_fields_consistent(self):
        rng = SeededRng(16)
        feats = rng.normal(size=(30, 4))
        cb = Codebook(centroids=rng.normal(size=(5, 4)))
        am = assignment_forward(feats, cb, tau=0.7, rng=rng)
        np.testing.assert_allclose(am.probs.sum(axis=1), np.ones(30), atol=1e-9)
        np.testing.assert_allclose(am.relaxed.sum(axis=1), np.ones(30), atol=1e-9)
        np.testing.assert_array_equal(am.hard_ids, np.argmax(am.relaxed, axis=1))
        assert np.all(am.hard_onehot.sum(axis=1) == 1.0)
