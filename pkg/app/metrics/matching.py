"""
Instance matching and detection F1

A prediction matches a ground-truth instance when their IoU is strictly
greater than tau. For tau >= 0.5 each prediction can exceed tau with at most
one ground-truth instance, so greedy matching by descending IoU already
maximises the match count; the assignment solver is kept as a cross-check.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from app.labelmap.ops import LabelMap, relabel_sequential

THRESHOLDS: Tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)

Method = Literal["greedy", "optimal"]


@dataclass
class MatchResult:
    threshold: float
    true_positives: int
    false_positives: int
    false_negatives: int
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)

    @property
    def f1(self) -> float:
        return f1_score(self.true_positives, self.false_positives, self.false_negatives)


def f1_score(tp: int, fp: int, fn: int) -> float:
    """2TP / (2TP + FP + FN), 1.0 when there is nothing to find and nothing found"""
    denominator = 2 * tp + fp + fn
    return 1.0 if denominator == 0 else 2 * tp / denominator


def iou_matrix(pred: LabelMap, gt: LabelMap) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """IoU of every (prediction, ground truth) pair plus the original label ids of rows and columns"""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    pred_ids = np.unique(pred[pred > 0])
    gt_ids = np.unique(gt[gt > 0])
    p = relabel_sequential(pred)
    g = relabel_sequential(gt)
    n_pred, n_gt = len(pred_ids), len(gt_ids)
    # relabel_sequential orders by first occurrence; map back to sorted ids
    p_order = _sequential_to_sorted(pred, p, n_pred)
    g_order = _sequential_to_sorted(gt, g, n_gt)

    both = (p > 0) & (g > 0)
    joint = np.bincount(
        (p[both] - 1) * max(n_gt, 1) + (g[both] - 1), minlength=n_pred * n_gt
    ).reshape(n_pred, n_gt)
    pred_area = np.bincount(p.reshape(-1), minlength=n_pred + 1)[1:]
    gt_area = np.bincount(g.reshape(-1), minlength=n_gt + 1)[1:]
    union = pred_area[:, None] + gt_area[None, :] - joint
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = np.where(union > 0, joint / np.maximum(union, 1), 0.0)
    return matrix[np.ix_(p_order, g_order)], pred_ids, gt_ids


def _sequential_to_sorted(original: np.ndarray, sequential: np.ndarray, count: int) -> np.ndarray:
    """Row order that puts sequential labels in ascending original-id order"""
    if count == 0:
        return np.zeros(0, dtype=np.intp)
    fg = sequential > 0
    ids = np.zeros(count, dtype=np.int64)
    ids[sequential[fg] - 1] = original[fg]
    return np.argsort(ids, kind="stable")


def match_instances(pred: LabelMap, gt: LabelMap, tau: float = 0.5, method: Method = "greedy") -> MatchResult:
    if not 0.5 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0.5, 1), got {tau}")
    matrix, pred_ids, gt_ids = iou_matrix(pred, gt)
    eligible = matrix > tau
    pairs: List[Tuple[int, int, float]] = []
    if eligible.any():
        if method == "greedy":
            rows, cols = np.nonzero(eligible)
            order = np.lexsort((cols, rows, -matrix[rows, cols]))
            used_rows, used_cols = set(), set()
            for i in order:
                r, c = rows[i], cols[i]
                if r in used_rows or c in used_cols:
                    continue
                used_rows.add(r)
                used_cols.add(c)
                pairs.append((int(pred_ids[r]), int(gt_ids[c]), float(matrix[r, c])))
        elif method == "optimal":
            rows, cols = linear_sum_assignment(eligible.astype(np.float64), maximize=True)
            pairs = [
                (int(pred_ids[r]), int(gt_ids[c]), float(matrix[r, c]))
                for r, c in zip(rows, cols) if eligible[r, c]
            ]
        else:
            raise ValueError(f"unknown matching method {method!r}")
    tp = len(pairs)
    return MatchResult(tau, tp, len(pred_ids) - tp, len(gt_ids) - tp, pairs)


def f1_at(pred: LabelMap, gt: LabelMap, tau: float = 0.5) -> float:
    return match_instances(pred, gt, tau).f1


def f1_mu(pred: LabelMap, gt: LabelMap) -> float:
    """Mean F1 over tau in 0.5, 0.6, 0.7, 0.8, 0.9"""
    matrix, _, _ = iou_matrix(pred, gt)
    return float(np.mean([_counts_from_matrix(matrix, tau).f1 for tau in THRESHOLDS]))


def _counts_from_matrix(matrix: np.ndarray, tau: float) -> MatchResult:
    """Match count from a precomputed IoU matrix; at tau >= 0.5 rows and columns hold at most one eligible entry"""
    eligible = matrix > tau
    tp = int(min(np.count_nonzero(eligible.any(axis=1)), np.count_nonzero(eligible.any(axis=0))))
    n_pred, n_gt = matrix.shape
    return MatchResult(tau, tp, n_pred - tp, n_gt - tp)


def evaluate_dataset(pairs: Sequence[Tuple[LabelMap, LabelMap]]) -> Dict:
    """Per-image F1^0.5 / F1^mu plus pooled (micro-averaged) counts per threshold"""
    pairs = list(pairs)
    per_image = []
    pooled = {tau: [0, 0, 0] for tau in THRESHOLDS}
    for index, (pred, gt) in enumerate(pairs):
        matrix, pred_ids, gt_ids = iou_matrix(pred, gt)
        results = {tau: _counts_from_matrix(matrix, tau) for tau in THRESHOLDS}
        for tau, result in results.items():
            pooled[tau][0] += result.true_positives
            pooled[tau][1] += result.false_positives
            pooled[tau][2] += result.false_negatives
        per_image.append({
            "index": index,
            "n_pred": len(pred_ids),
            "n_gt": len(gt_ids),
            "f1_05": results[0.5].f1,
            "f1_mu": float(np.mean([r.f1 for r in results.values()])),
        })
    per_tau = {f"{tau:.1f}": f1_score(*counts) for tau, counts in pooled.items()}
    return {
        "per_image": per_image,
        "pooled": {
            "f1_05": per_tau["0.5"],
            "f1_mu": float(np.mean(list(per_tau.values()))),
            "per_tau": per_tau,
            "counts": {f"{tau:.1f}": dict(zip(("tp", "fp", "fn"), counts)) for tau, counts in pooled.items()},
        },
    }


def pair_predictions(preds: Sequence[LabelMap], gts: Sequence[LabelMap]) -> List[Tuple[LabelMap, LabelMap]]:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions but {len(gts)} ground-truth maps")
    return list(zip(preds, gts))
