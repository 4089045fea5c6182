"""
Label-map utilities

A LabelMap is an H x W integer array, 0 for background. A BinaryMask is an
H x W bool array. All connectivity is 4-connectivity.
"""
import numpy as np
import numpy.typing as npt
from scipy import ndimage

LabelMap = npt.NDArray[np.integer]
BinaryMask = npt.NDArray[np.bool_]
DistanceMap = npt.NDArray[np.floating]

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def relabel_sequential(labels: LabelMap) -> LabelMap:
    """Map positive labels onto 1..K in raster order of first occurrence"""
    labels = np.asarray(labels)
    flat = labels.reshape(-1)
    values, first = np.unique(flat, return_index=True)
    positive = values > 0
    values, first = values[positive], first[positive]
    out = np.zeros(labels.shape, dtype=np.int32)
    if values.size == 0:
        return out
    new_ids = np.empty(values.size, dtype=np.int32)
    new_ids[np.argsort(first, kind="stable")] = np.arange(1, values.size + 1, dtype=np.int32)
    foreground = flat > 0
    out.reshape(-1)[foreground] = new_ids[np.searchsorted(values, flat[foreground])]
    return out


def connected_components(mask: BinaryMask) -> LabelMap:
    """4-connected components labelled 1..K in raster order of each component's first pixel"""
    labelled, _ = ndimage.label(np.asarray(mask, dtype=bool), structure=FOUR_CONNECTED)
    return relabel_sequential(labelled)


def binary_mask(labels: LabelMap, k: int) -> BinaryMask:
    if k <= 0:
        raise ValueError(f"instance label must be positive, got {k}")
    return np.asarray(labels) == k


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a & b| / |a | b|, 0.0 when both masks are empty"""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"iou: mask shapes {a.shape} and {b.shape} differ")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def boundary_distance(labels: LabelMap) -> DistanceMap:
    """Distance to the nearest differently-labelled pixel, normalised to peak at 1.0 per instance

    Pixels outside the image count as background, so instances cut by the
    image border get low values along it.
    """
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, dtype=np.float64)
    if not labels.any():
        return out
    compact = relabel_sequential(labels)
    for k, window in enumerate(ndimage.find_objects(compact), start=1):
        if window is None:
            continue
        inside = compact[window] == k
        distance = ndimage.distance_transform_edt(np.pad(inside, 1))[1:-1, 1:-1]
        peak = distance[inside].max()
        region = out[window]
        region[inside] = distance[inside] / peak
    return out


def foreground(labels: LabelMap) -> BinaryMask:
    return np.asarray(labels) > 0


def instance_count(labels: LabelMap) -> int:
    values = np.unique(np.asarray(labels))
    return int(np.count_nonzero(values > 0))


def partitions_equal(a: LabelMap, b: LabelMap) -> bool:
    """True when a and b describe the same instances up to a relabelling"""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    fg_a, fg_b = a > 0, b > 0
    if not np.array_equal(fg_a, fg_b):
        return False
    if not fg_a.any():
        return True
    pairs = np.unique(np.stack([a[fg_a], b[fg_a]], axis=1), axis=0)
    return len(pairs) == len(np.unique(pairs[:, 0])) == len(np.unique(pairs[:, 1]))
