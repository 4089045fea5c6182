"""
Training-free feature model built from a known label map

Every pixel of instance k gets Q = centroid(k), so offsets to any seed of
the same instance are exactly zero; background gets a far-away Q. The
instance head is hand-set to

    logit = 0.5 + 0.1 * relu(E_0) - ||offset||_1

with E_0 the instance's equivalent radius, so a candidate covers exactly
the pixels of the instance its seed falls in. The features transform
exactly under rotations and flips of the label map.
"""
from typing import Tuple

import numpy as np

from app.labelmap.ops import LabelMap, boundary_distance, relabel_sequential
from app.model.network import FeatureBundle, coordinate_grid
from app.model.params import PhiWeights
from app.tensor.tensor import Tensor

BACKGROUND_POSITION = -1.0e3
LOGIT_BIAS = 0.5
RADIUS_GAIN = 0.1


def analytic_phi(positional_dim: int, conditional_dim: int) -> PhiWeights:
    """Hidden units relu(+off_c), relu(-off_c) per positional channel, then relu(E_0) when present"""
    inputs = positional_dim + conditional_dim
    hidden = 2 * positional_dim + (1 if conditional_dim else 0)
    w1 = np.zeros((hidden, inputs, 1, 1))
    w2 = np.zeros((1, hidden, 1, 1))
    for c in range(positional_dim):
        w1[2 * c, c] = 1.0
        w1[2 * c + 1, c] = -1.0
        w2[0, 2 * c] = w2[0, 2 * c + 1] = -1.0
    if conditional_dim:
        w1[hidden - 1, positional_dim] = 1.0
        w2[0, hidden - 1] = RADIUS_GAIN
    return PhiWeights(
        Tensor(w1), Tensor(np.zeros(hidden)), Tensor(w2), Tensor(np.full(1, LOGIT_BIAS)),
        positional_dim, conditional_dim,
    )


def analytic_bundle(labels: LabelMap, positional_dim: int = 4, conditional_dim: int = 4) -> Tuple[FeatureBundle, PhiWeights]:
    labels = relabel_sequential(np.asarray(labels))
    height, width = labels.shape
    O = coordinate_grid(height, width, positional_dim)
    count = int(labels.max()) if labels.size else 0

    flat = labels.reshape(-1)
    areas = np.bincount(flat, minlength=count + 1).astype(np.float64)
    rows, cols = np.indices(labels.shape)
    centroid_r = np.bincount(flat, weights=rows.reshape(-1), minlength=count + 1) / np.maximum(areas, 1)
    centroid_c = np.bincount(flat, weights=cols.reshape(-1), minlength=count + 1) / np.maximum(areas, 1)

    inside = labels > 0
    Q = np.zeros((positional_dim, height, width))
    Q[0] = np.where(inside, centroid_r[labels], BACKGROUND_POSITION)
    Q[1] = np.where(inside, centroid_c[labels], BACKGROUND_POSITION)
    P = Q - O.data

    E = np.zeros((conditional_dim, height, width))
    if conditional_dim:
        E[0] = np.where(inside, np.sqrt(areas[labels] / np.pi), 0.0)

    bundle = FeatureBundle(S=Tensor(boundary_distance(labels)), P=Tensor(P), E=Tensor(E), O=O)
    return bundle, analytic_phi(positional_dim, conditional_dim)


class AnalyticModel:
    """Predictor whose input image carries the label map in channel 0"""

    def __init__(self, positional_dim: int = 4, conditional_dim: int = 4):
        self.positional_dim = positional_dim
        self.conditional_dim = conditional_dim
        self.phi = analytic_phi(positional_dim, conditional_dim)

    def features(self, image: np.ndarray) -> FeatureBundle:
        labels = np.rint(np.asarray(image)[0]).astype(np.int64)
        bundle, _ = analytic_bundle(labels, self.positional_dim, self.conditional_dim)
        return bundle

    @staticmethod
    def encode(labels: LabelMap) -> np.ndarray:
        """Label map as a 1 x H x W float 'image' this model reads back"""
        return np.asarray(labels, dtype=np.float64)[None]
