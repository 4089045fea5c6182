"""
Seed sampling: local maxima of the seed map above a threshold
"""
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage

from app.labelmap.ops import FOUR_CONNECTED


@dataclass(frozen=True)
class Seed:
    row: int
    col: int
    score: float

    @property
    def u(self):
        return self.row, self.col


def local_maxima(S: np.ndarray, threshold: float, radius: int) -> np.ndarray:
    """Pixels >= threshold that equal the maximum of their (2r+1)^2 window"""
    S = np.asarray(S, dtype=np.float64)
    window_max = ndimage.maximum_filter(S, size=2 * radius + 1, mode="constant", cval=-np.inf)
    return (S >= threshold) & (S == window_max)


def sample_seeds(S: np.ndarray, threshold: float = 0.5, radius: int = 2) -> List[Seed]:
    """Seeds in descending score order; each connected plateau of equal maxima yields its raster-first pixel"""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise ValueError(f"seed map must be 2-d, got shape {S.shape}")
    peaks = local_maxima(S, threshold, radius)
    if not peaks.any():
        return []
    plateaus, _ = ndimage.label(peaks, structure=FOUR_CONNECTED)
    flat_ids = plateaus.reshape(-1)
    flat_scores = S.reshape(-1)
    positions = np.flatnonzero(flat_ids)
    # one seed per (plateau, value); np.unique keeps the first raster index
    keys = np.stack([flat_ids[positions], np.unique(flat_scores[positions], return_inverse=True)[1]], axis=1)
    _, first = np.unique(keys, axis=0, return_index=True)
    chosen = np.sort(positions[first])
    order = np.argsort(-flat_scores[chosen], kind="stable")
    width = S.shape[1]
    return [Seed(int(p // width), int(p % width), float(flat_scores[p])) for p in chosen[order]]
