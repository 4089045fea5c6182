"""
Training objectives

Main phase: L1 regression of the boundary-distance map plus the Lovász hinge
of every candidate's logits against its ground-truth mask. Pretraining swaps
them for binary cross entropy on the foreground and Dice on sigmoid(logits).
Per-pixel and per-candidate sums are averaged so magnitudes do not depend on
image or crop size.
"""
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from app.labelmap import boundary_distance, foreground
from app.tensor import ops
from app.tensor.tensor import ShapeError, Tensor

PROB_EPS = 1e-7
DICE_SMOOTH = 1.0
INSTANCE_CAP = 50

Phase = Literal["pretrain", "main"]
Candidate = Tuple[Tensor, np.ndarray]


@dataclass
class LossValue:
    """Scalar loss with its seed / instance breakdown"""

    total: Tensor
    seed: Optional[float] = None
    instance: Optional[float] = None
    empty: bool = False

    def item(self) -> float:
        return self.total.item()

    def breakdown(self) -> Dict[str, float]:
        out = {"total": self.item()}
        if self.seed is not None:
            out["seed"] = self.seed
        if self.instance is not None:
            out["instance"] = self.instance
        return out


def _zero(dtype=np.float64) -> Tensor:
    return Tensor(np.zeros((), dtype=dtype))


def _check_dims(op: str, prediction: Tensor, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    if prediction.shape != target.shape:
        raise ShapeError(f"{op}: prediction {prediction.shape} and target {target.shape} differ")
    return target.astype(prediction.dtype)


def seed_loss(S: Tensor, target: np.ndarray) -> LossValue:
    """Mean absolute error against the distance map, background included"""
    target = _check_dims("seed_loss", S, target)
    total = ops.mean_all(ops.absolute(ops.sub(S, Tensor(target))))
    return LossValue(total, seed=total.item())


def bce_loss(S: Tensor, target: np.ndarray) -> LossValue:
    target = _check_dims("bce_loss", S, target)
    p = ops.clip(S, PROB_EPS, 1.0 - PROB_EPS)
    positive = ops.mul(ops.log(p), Tensor(target))
    negative = ops.mul(ops.log(ops.shift(ops.scale(p, -1.0), 1.0)), Tensor(1.0 - target))
    total = ops.scale(ops.sum_all(ops.add(positive, negative)), -1.0 / max(S.size, 1))
    return LossValue(total, seed=total.item())


def dice_loss(probabilities: Tensor, mask: np.ndarray) -> LossValue:
    """1 - (2|p*g| + 1) / (|p| + |g| + 1)"""
    mask = _check_dims("dice_loss", probabilities, mask)
    intersection = ops.sum_all(ops.mul(probabilities, Tensor(mask)))
    numerator = ops.shift(ops.scale(intersection, 2.0), DICE_SMOOTH)
    denominator = ops.shift(ops.sum_all(probabilities), float(mask.sum()) + DICE_SMOOTH)
    total = ops.shift(ops.scale(ops.div(numerator, denominator), -1.0), 1.0)
    return LossValue(total, instance=total.item())


def lovasz_grad(sorted_labels: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard loss extension at the sorted label vector"""
    labels = np.asarray(sorted_labels, dtype=np.float64)
    positives = labels.sum()
    intersection = positives - np.cumsum(labels)
    union = positives + np.cumsum(1.0 - labels)
    jaccard = 1.0 - intersection / union
    if labels.size > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_hinge(logits: Tensor, labels: np.ndarray) -> LossValue:
    """Lovász extension of the Jaccard loss applied to hinge errors

    The sort is taken as a fixed permutation (ties by index), so the loss is
    differentiable in the logits everywhere except on sort ties.
    """
    labels = np.asarray(labels).reshape(-1)
    if logits.ndim != 1:
        logits = ops.reshape(logits, (logits.size,))
    if logits.size == 0:
        raise ValueError("lovasz_hinge: empty input")
    if labels.size != logits.size:
        raise ShapeError(f"lovasz_hinge: {logits.size} logits but {labels.size} labels")
    labels = (labels > 0).astype(logits.dtype)
    signs = Tensor(2.0 * labels - 1.0)
    errors = ops.relu(ops.shift(ops.scale(ops.mul(logits, signs), -1.0), 1.0))
    order = np.argsort(-errors.data, kind="stable")
    weights = Tensor(lovasz_grad(labels[order]).astype(logits.dtype))
    total = ops.sum_all(ops.mul(ops.gather(errors, order), weights))
    return LossValue(total, instance=total.item())


def cap_candidates(count: int, cap: int = INSTANCE_CAP, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Indices kept under the per-image cap: all of them, or a seeded uniform subsample in index order"""
    if count <= cap:
        return np.arange(count)
    rng = np.random.default_rng(0) if rng is None else rng
    return np.sort(rng.choice(count, size=cap, replace=False))


def instance_loss(
    candidates: Sequence[Candidate],
    kind: Literal["lovasz", "dice"] = "lovasz",
    cap: int = INSTANCE_CAP,
    rng: Optional[np.random.Generator] = None,
) -> LossValue:
    """Mean per-candidate loss over (logits crop, ground-truth mask crop) pairs"""
    if not candidates:
        return LossValue(_zero(), instance=0.0, empty=True)
    keep = cap_candidates(len(candidates), cap, rng)
    terms: List[Tensor] = []
    for i in keep:
        logits, mask = candidates[i]
        if kind == "lovasz":
            terms.append(lovasz_hinge(logits, mask).total)
        else:
            terms.append(dice_loss(ops.sigmoid(logits), mask).total)
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    total = ops.scale(total, 1.0 / len(terms))
    return LossValue(total, instance=total.item())


def joint_loss(
    bundle,
    labels: np.ndarray,
    candidates: Sequence[Candidate],
    phase: Phase = "main",
    cap: int = INSTANCE_CAP,
    rng: Optional[np.random.Generator] = None,
) -> LossValue:
    """Unweighted sum of the seed and instance terms for one image

    `bundle` only needs an `S` tensor; `labels` is the ground-truth label map
    the targets are derived from.
    """
    if phase == "pretrain":
        seed = bce_loss(bundle.S, foreground(labels))
        instance = instance_loss(candidates, kind="dice", cap=cap, rng=rng)
    elif phase == "main":
        seed = seed_loss(bundle.S, boundary_distance(labels))
        instance = instance_loss(candidates, kind="lovasz", cap=cap, rng=rng)
    else:
        raise ValueError(f"unknown training phase {phase!r}")
    instance_total = instance.total
    if instance.empty:
        instance_total = _zero(seed.total.dtype)
    elif instance_total.dtype != seed.total.dtype:
        raise TypeError(f"seed loss is {seed.total.dtype} but instance loss is {instance_total.dtype}")
    total = ops.add(seed.total, instance_total)
    return LossValue(total, seed=seed.seed, instance=instance.instance, empty=instance.empty)
