"""
Test-time augmentation over the 16 (rotation, hflip, vflip) combinations

The image is zero-padded to a square so quarter turns keep its frame.
Seed maps of all branches are mapped back and averaged, seeds are sampled
once on the average, and each seed's window is evaluated in every branch at
the transformed seed and window. The per-pixel median of the 16 logit maps
(mean of the two central values) becomes the candidate's logits.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Union

import numpy as np
from loguru import logger

from app.config import PipelineConfig, settings
from app.labelmap.ops import LabelMap
from app.model.network import FeatureBundle
from app.model.params import ModelParams
from app.pipeline.candidates import InstanceCandidate, Window, crop_window, flatten, merge_redundant, window_logits
from app.pipeline.inference import Predictor, as_predictor
from app.pipeline.seeds import Seed, sample_seeds
from app.utils.dihedral import DIHEDRAL_16, Dihedral


def pad_to_square(X: np.ndarray) -> np.ndarray:
    _, height, width = X.shape
    side = max(height, width)
    return np.pad(X, ((0, 0), (0, side - height), (0, side - width)))


def averaged_seed_map(bundles: List[FeatureBundle], transforms: List[Dihedral], height: int, width: int) -> np.ndarray:
    """Mean of the de-augmented seed maps, restricted to the original image"""
    stack = np.stack([t.invert(b.S.data) for t, b in zip(transforms, bundles)])
    return stack.mean(axis=0)[:height, :width]


def tta_infer(
    X: np.ndarray,
    model: Union[ModelParams, Predictor],
    cfg: Optional[PipelineConfig] = None,
    threads: Optional[int] = None,
) -> LabelMap:
    cfg = cfg or PipelineConfig()
    predictor = as_predictor(model, cfg.precision)
    X = np.asarray(X)
    _, height, width = X.shape
    square = pad_to_square(X)
    side = square.shape[1]
    transforms = list(DIHEDRAL_16)

    with ThreadPoolExecutor(max_workers=threads or settings.THREADS) as pool:
        bundles = list(pool.map(lambda t: predictor.features(t.apply(square)), transforms))

    seeds = sample_seeds(averaged_seed_map(bundles, transforms, height, width), cfg.seed_threshold, cfg.window_radius)
    if not seeds:
        return np.zeros((height, width), dtype=np.int32)
    windows = [crop_window(seed, height, width, cfg.crop_size) for seed in seeds]
    stacks = [np.empty((len(transforms),) + w.shape) for w in windows]

    for branch, (t, bundle) in enumerate(zip(transforms, bundles)):
        moved_seeds = [Seed(*t.map_point(s.row, s.col, (side, side)), s.score) for s in seeds]
        moved_windows = [Window(*t.map_rect(w.r0, w.r1, w.c0, w.c1, (side, side))) for w in windows]
        for k, logits in enumerate(window_logits(bundle, moved_seeds, moved_windows, predictor.phi)):
            stacks[k][branch] = t.invert(logits)

    candidates = [
        InstanceCandidate(seed, window, np.median(stack, axis=0))
        for seed, window, stack in zip(seeds, windows, stacks)
    ]
    candidates = [c for c in candidates if c.area]
    merged = merge_redundant(candidates, cfg.merge_iou)
    logger.debug(f"tta: seeds={len(seeds)} candidates={len(candidates)} merged={len(merged)}")
    return flatten(merged, height, width)
