"""
Training augmentation: one of the eight dihedral symmetries plus a random crop
"""
from typing import Optional, Tuple

import numpy as np

from app.labelmap.ops import LabelMap
from app.utils.dihedral import DIHEDRAL_8, Dihedral


def random_crop(
    image: np.ndarray, labels: LabelMap, crop: int, rng: np.random.Generator
) -> Tuple[np.ndarray, LabelMap]:
    height, width = labels.shape
    ch, cw = min(crop, height), min(crop, width)
    r0 = int(rng.integers(0, height - ch + 1))
    c0 = int(rng.integers(0, width - cw + 1))
    return image[:, r0:r0 + ch, c0:c0 + cw].copy(), labels[r0:r0 + ch, c0:c0 + cw].copy()


def augment_sample(
    image: np.ndarray,
    labels: LabelMap,
    rng: np.random.Generator,
    crop: Optional[int] = None,
    transform: Optional[Dihedral] = None,
) -> Tuple[np.ndarray, LabelMap]:
    """Same transform on image (C x H x W) and labels (H x W); crop side is min(crop, image side)"""
    if transform is None:
        transform = DIHEDRAL_8[int(rng.integers(len(DIHEDRAL_8)))]
    image = transform.apply(image)
    labels = transform.apply(labels)
    if crop is not None:
        image, labels = random_crop(image, labels, crop, rng)
    return image, labels
