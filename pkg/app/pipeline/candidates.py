"""
Per-seed instance candidates: crop windows, logits, merging and flattening
"""
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.labelmap.ops import LabelMap, relabel_sequential
from app.model.network import FeatureBundle, phi_forward
from app.model.params import PhiWeights
from app.pipeline.seeds import Seed
from app.tensor import ops
from app.tensor.tensor import Tensor, no_grad
from app.utils.allocation import AllocationTracker


@dataclass(frozen=True)
class Window:
    """Half-open rectangle [r0, r1) x [c0, c1) in image coordinates"""

    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.r1 - self.r0, self.c1 - self.c0

    @property
    def slices(self) -> Tuple[slice, slice]:
        return slice(self.r0, self.r1), slice(self.c0, self.c1)

    def union(self, other: "Window") -> "Window":
        return Window(min(self.r0, other.r0), max(self.r1, other.r1), min(self.c0, other.c0), max(self.c1, other.c1))

    def intersects(self, other: "Window") -> bool:
        return self.r0 < other.r1 and other.r0 < self.r1 and self.c0 < other.c1 and other.c0 < self.c1

    def local(self, outer: "Window") -> Tuple[slice, slice]:
        """Slices of this window inside an enclosing one"""
        return (
            slice(self.r0 - outer.r0, self.r1 - outer.r0),
            slice(self.c0 - outer.c0, self.c1 - outer.c0),
        )


def crop_window(seed: Seed, height: int, width: int, crop_size: int) -> Window:
    """crop_size x crop_size window around the seed, clipped to the image"""
    half = crop_size // 2
    return Window(
        max(0, seed.row - half), min(height, seed.row + half),
        max(0, seed.col - half), min(width, seed.col + half),
    )


@dataclass
class InstanceCandidate:
    seed: Seed
    window: Window
    phi: np.ndarray
    mask: np.ndarray = field(init=False)
    area: int = field(init=False)
    bounds: Optional[Window] = field(init=False)

    def __post_init__(self):
        self.mask = self.phi >= 0
        self.area = int(np.count_nonzero(self.mask))
        self.bounds = None
        if self.area:
            rows = np.flatnonzero(self.mask.any(axis=1))
            cols = np.flatnonzero(self.mask.any(axis=0))
            self.bounds = Window(
                self.window.r0 + int(rows[0]), self.window.r0 + int(rows[-1]) + 1,
                self.window.c0 + int(cols[0]), self.window.c0 + int(cols[-1]) + 1,
            )

    def overlap_iou(self, other: "InstanceCandidate") -> float:
        a, b = self.bounds, other.bounds
        if a is None or b is None or not a.intersects(b):
            return 0.0
        common = Window(max(a.r0, b.r0), min(a.r1, b.r1), max(a.c0, b.c0), min(a.c1, b.c1))
        inter = np.count_nonzero(self.mask[common.local(self.window)] & other.mask[common.local(other.window)])
        return inter / (self.area + other.area - inter)

    def merged(self, other: "InstanceCandidate") -> "InstanceCandidate":
        """Union candidate: logits are the elementwise max over the union of both windows"""
        outer = self.window.union(other.window)
        phi = np.full(outer.shape, -np.inf, dtype=self.phi.dtype)
        for candidate in (self, other):
            region = candidate.window.local(outer)
            phi[region] = np.maximum(phi[region], candidate.phi)
        return InstanceCandidate(self.seed, outer, phi)


def _seed_offsets(Q: np.ndarray, seed: Seed, window: Window) -> np.ndarray:
    return Q[(slice(None),) + window.slices] - Q[:, seed.row, seed.col][:, None, None]


def window_logits(
    bundle: FeatureBundle,
    seeds: Sequence[Seed],
    windows: Sequence[Window],
    phi: PhiWeights,
    tracker: Optional[AllocationTracker] = None,
) -> List[np.ndarray]:
    """Instance-head logits of each seed over its window, batched by window shape"""
    Q = bundle.embedding()
    E = bundle.E.data
    groups: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    for i, window in enumerate(windows):
        groups[window.shape].append(i)

    logits: List[Optional[np.ndarray]] = [None] * len(seeds)
    with no_grad():
        for indices in groups.values():
            offsets = np.stack([_seed_offsets(Q, seeds[i], windows[i]) for i in indices])
            crops = np.stack([E[(slice(None),) + windows[i].slices] for i in indices])
            if tracker is not None:
                tracker.allocate("offsets", offsets)
                tracker.allocate("crops", crops)
            out = phi_forward(Tensor(offsets), Tensor(crops), phi, tracker=tracker).data
            for row, i in enumerate(indices):
                logits[i] = out[row]
            if tracker is not None:
                for name in ("offsets", "crops", "phi.logits"):
                    tracker.free(name)
    return logits


def predict_instances(
    bundle: FeatureBundle,
    seeds: Sequence[Seed],
    phi: PhiWeights,
    crop_size: int,
    tracker: Optional[AllocationTracker] = None,
    keep_empty: bool = False,
) -> List[InstanceCandidate]:
    """Evaluate the instance head around every seed

    Seeds whose windows share a shape are evaluated as one batch, so memory
    grows with the number of seeds times crop_size^2 and not with the image.
    Candidates without any logit >= 0 are dropped unless keep_empty is set.
    """
    if not seeds:
        return []
    windows = [crop_window(seed, bundle.height, bundle.width, crop_size) for seed in seeds]
    logits = window_logits(bundle, seeds, windows, phi, tracker)
    candidates = [InstanceCandidate(seed, window, phi_map) for seed, window, phi_map in zip(seeds, windows, logits)]
    if keep_empty:
        return candidates
    return [c for c in candidates if c.mask.any()]


def candidate_logits(bundle: FeatureBundle, seed: Seed, phi: PhiWeights, crop_size: int) -> Tuple[Tensor, Window]:
    """Graph-attached logits for one seed (training path)"""
    window = crop_window(seed, bundle.height, bundle.width, crop_size)
    h, w = window.shape
    Q = ops.add(bundle.P, bundle.O)
    rows, cols = window.slices
    at_seed = ops.index(Q, (slice(None), slice(seed.row, seed.row + 1), slice(seed.col, seed.col + 1)))
    offsets = ops.sub(ops.index(Q, (slice(None), rows, cols)), ops.tile_hw(at_seed, h, w))
    E_crop = ops.index(bundle.E, (slice(None), rows, cols))
    return phi_forward(offsets, E_crop, phi), window


def merge_redundant(candidates: Sequence[InstanceCandidate], merge_iou: float = 0.5) -> List[InstanceCandidate]:
    """Greedy union of candidates overlapping by IoU >= merge_iou, repeated to a fixed point

    Candidates are visited in descending seed score; the merged candidate
    keeps the higher-scoring seed.
    """
    pool = sorted(candidates, key=lambda c: -c.seed.score)
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(pool):
            j = i + 1
            while j < len(pool):
                if pool[i].overlap_iou(pool[j]) >= merge_iou:
                    pool[i] = pool[i].merged(pool.pop(j))
                    changed = True
                else:
                    j += 1
            i += 1
    return pool


def flatten(candidates: Sequence[InstanceCandidate], height: int, width: int) -> LabelMap:
    """Per-pixel argmax over candidate logits, background where the best logit is < 0

    Ties go to the lower candidate index; labels come out sequential.
    """
    best = np.full((height, width), -np.inf)
    labels = np.zeros((height, width), dtype=np.int32)
    for k, candidate in enumerate(candidates, start=1):
        region = candidate.window.slices
        better = candidate.phi > best[region]
        labels[region][better] = k
        best[region] = np.where(better, candidate.phi, best[region])
    labels[best < 0] = 0
    return relabel_sequential(labels)
