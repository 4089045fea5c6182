"""
Integer label maps: components, distance targets, masks, IoU
"""
from app.labelmap.io import read_image, read_labels, write_image, write_labels
from app.labelmap.ops import (
    BinaryMask,
    DistanceMap,
    LabelMap,
    binary_mask,
    boundary_distance,
    connected_components,
    foreground,
    instance_count,
    iou,
    partitions_equal,
    relabel_sequential,
)

__all__ = [
    "BinaryMask",
    "DistanceMap",
    "LabelMap",
    "binary_mask",
    "boundary_distance",
    "connected_components",
    "foreground",
    "instance_count",
    "iou",
    "partitions_equal",
    "read_image",
    "read_labels",
    "relabel_sequential",
    "write_image",
    "write_labels",
]
