import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import ndimage

from app.metrics import (
    THRESHOLDS,
    evaluate_dataset,
    f1_at,
    f1_mu,
    f1_score,
    iou_matrix,
    match_instances,
    pair_predictions,
)
from tests.conftest import disk, label_fixture


def perturbed(labels, rng):
    """Prediction-like map: shifted, eroded, dropped and spurious instances"""
    out = np.zeros_like(labels)
    shift = rng.integers(-2, 3, size=2)
    moved = np.roll(labels, tuple(shift), axis=(0, 1))
    for k in range(1, int(labels.max()) + 1):
        roll = rng.uniform()
        if roll < 0.15:
            continue
        mask = moved == k
        if roll < 0.4:
            mask = ndimage.binary_erosion(mask, iterations=int(rng.integers(1, 3)))
        out[mask & (out == 0)] = k
    for extra in range(int(rng.integers(0, 3))):
        center = rng.integers(5, labels.shape[0] - 5, size=2)
        spot = disk(labels.shape, center, 3) & (out == 0)
        out[spot] = out.max() + 1
    return out


class TestF1Score:
    def test_empty_is_perfect(self):
        assert f1_score(0, 0, 0) == 1.0

    def test_value(self):
        assert f1_score(3, 1, 2) == pytest.approx(6 / 9)

    def test_empty_prediction_against_objects(self):
        gt = np.zeros((10, 10), dtype=int)
        gt[2:5, 2:5] = 1
        assert f1_at(np.zeros_like(gt), gt) == 0.0
        assert f1_at(np.zeros_like(gt), np.zeros_like(gt)) == 1.0


class TestMatching:
    def test_identity(self):
        gt = label_fixture(64, 1)
        result = match_instances(gt, gt)
        assert result.false_positives == result.false_negatives == 0
        assert f1_mu(gt, gt) == 1.0

    def test_iou_must_exceed_threshold(self):
        gt = np.zeros((4, 4), dtype=int)
        gt[:, :2] = 1
        pred = np.zeros_like(gt)
        pred[:, :1] = 1
        assert f1_at(pred, gt, 0.5) == 0.0
        pred[0, 1] = 1
        assert f1_at(pred, gt, 0.5) == 1.0

    def test_iou_matrix_rows_follow_sorted_ids(self):
        pred = np.array([[5, 5, 0, 2]])
        gt = np.array([[1, 1, 0, 3]])
        matrix, pred_ids, gt_ids = iou_matrix(pred, gt)
        assert_array_equal(pred_ids, [2, 5])
        assert_array_equal(gt_ids, [1, 3])
        assert_allclose(matrix, [[0.0, 1.0], [1.0, 0.0]])

    def test_pairs_report_original_ids(self):
        pred = np.array([[7, 7, 7, 0]])
        gt = np.array([[0, 4, 4, 0]])
        assert match_instances(pred, gt).pairs == [(7, 4, pytest.approx(2 / 3))]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            match_instances(np.zeros((3, 3), int), np.zeros((3, 4), int))

    @pytest.mark.parametrize("tau", [0.3, 0.49, 1.0, 1.2])
    def test_threshold_out_of_range(self, tau):
        gt = np.ones((2, 2), dtype=int)
        with pytest.raises(ValueError):
            match_instances(gt, gt, tau)

    def test_every_iou_just_above_half_gives_one_fifth(self):
        gt = np.zeros((12, 30), dtype=int)
        pred = np.zeros_like(gt)
        gt[1:11, 0:10] = 1
        pred[1:11, 3:13] = 1
        gt[1:11, 16:26] = 2
        pred[1:11, 19:29] = 2
        matrix, _, _ = iou_matrix(pred, gt)
        assert matrix.max() == pytest.approx(70 / 130)
        assert f1_at(pred, gt, 0.5) == 1.0
        assert f1_at(pred, gt, 0.6) == 0.0
        assert f1_mu(pred, gt) == pytest.approx(0.2)

    def test_unknown_method(self):
        gt = np.ones((2, 2), dtype=int)
        with pytest.raises(ValueError):
            match_instances(gt, gt, method="hungarian")

    @pytest.mark.parametrize("seed", range(10))
    def test_greedy_matches_optimal_reduced(self, seed):
        rng = np.random.default_rng(seed)
        gt = label_fixture(64, seed, count_range=(4, 10), min_spacing=0.0)
        pred = perturbed(gt, rng)
        for tau in THRESHOLDS:
            greedy = match_instances(pred, gt, tau, "greedy")
            optimal = match_instances(pred, gt, tau, "optimal")
            assert greedy.true_positives == optimal.true_positives

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(200))
    def test_greedy_matches_optimal_full(self, seed):
        rng = np.random.default_rng(10_000 + seed)
        gt = label_fixture(96, 10_000 + seed, count_range=(6, 16), min_spacing=0.0)
        pred = perturbed(gt, rng)
        for tau in THRESHOLDS:
            assert (
                match_instances(pred, gt, tau, "greedy").true_positives
                == match_instances(pred, gt, tau, "optimal").true_positives
            )

    @pytest.mark.parametrize("seed", range(5))
    def test_f1_non_increasing_in_threshold(self, seed):
        rng = np.random.default_rng(seed)
        gt = label_fixture(64, 50 + seed)
        pred = perturbed(gt, rng)
        scores = [f1_at(pred, gt, tau) for tau in THRESHOLDS]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_permutation_invariant(self, rng):
        gt = label_fixture(64, 7)
        pred = perturbed(gt, rng)
        ids = np.unique(pred[pred > 0])
        mapping = np.zeros(int(pred.max()) + 1, dtype=int)
        mapping[ids] = rng.permutation(ids) + 100
        assert f1_mu(mapping[pred], gt) == pytest.approx(f1_mu(pred, gt))
        assert f1_mu(gt, pred) == pytest.approx(f1_mu(pred, gt))

    def test_f1_mu_is_mean_over_thresholds(self, rng):
        gt = label_fixture(64, 8)
        pred = perturbed(gt, rng)
        expected = np.mean([f1_at(pred, gt, tau) for tau in THRESHOLDS])
        assert f1_mu(pred, gt) == pytest.approx(expected)


class TestDataset:
    def test_report_schema(self, rng):
        gts = [label_fixture(64, s) for s in range(3)]
        preds = [perturbed(gt, rng) for gt in gts]
        report = evaluate_dataset(pair_predictions(preds, gts))
        assert [row["index"] for row in report["per_image"]] == [0, 1, 2]
        assert set(report["per_image"][0]) == {"index", "n_pred", "n_gt", "f1_05", "f1_mu"}
        assert set(report["pooled"]["per_tau"]) == {"0.5", "0.6", "0.7", "0.8", "0.9"}
        assert report["pooled"]["f1_05"] == report["pooled"]["per_tau"]["0.5"]
        counts = report["pooled"]["counts"]["0.5"]
        assert counts["tp"] + counts["fn"] == sum(row["n_gt"] for row in report["per_image"])

    def test_pooled_counts_are_micro_averaged(self):
        gt = np.zeros((10, 10), dtype=int)
        gt[1:4, 1:4] = 1
        gt[6:9, 6:9] = 2
        empty = np.zeros_like(gt)
        report = evaluate_dataset([(gt, gt), (empty, gt)])
        assert report["pooled"]["counts"]["0.5"] == {"tp": 2, "fp": 0, "fn": 2}
        assert report["pooled"]["f1_05"] == pytest.approx(4 / 6)
        assert report["per_image"][1]["f1_05"] == 0.0

    def test_empty_dataset(self):
        report = evaluate_dataset([])
        assert report["per_image"] == []
        assert report["pooled"]["f1_mu"] == 1.0

    def test_pair_count_mismatch(self):
        with pytest.raises(ValueError):
            pair_predictions([np.zeros((2, 2))], [])
