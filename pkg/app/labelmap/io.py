"""
PNG I/O for label maps (16-bit grayscale) and images (8-bit, C x H x W floats in [0, 1])
"""
from pathlib import Path

import numpy as np
from PIL import Image

from app.labelmap.ops import LabelMap

MAX_LABEL = 65535


def write_labels(path, labels: LabelMap) -> Path:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-d, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > MAX_LABEL):
        raise ValueError(f"labels must lie in [0, {MAX_LABEL}] for a 16-bit PNG")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.astype(np.uint16)).save(path)
    return path


def read_labels(path) -> LabelMap:
    with Image.open(path) as img:
        return np.asarray(img).astype(np.int32)


def write_image(path, image: np.ndarray) -> Path:
    """Store a C x H x W float image (C in {1, 3}) as an 8-bit PNG"""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ValueError(f"expected a 1- or 3-channel C x H x W image, got shape {image.shape}")
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.shape[0] == 1:
        Image.fromarray(pixels[0]).save(path)
    else:
        Image.fromarray(np.ascontiguousarray(np.moveaxis(pixels, 0, -1))).save(path)
    return path


def read_image(path) -> np.ndarray:
    """Read a PNG as C x H x W float64 in [0, 1]; 16-bit grayscale is scaled by 65535"""
    with Image.open(path) as img:
        if img.mode in ("I;16", "I;16B", "I"):
            pixels = np.asarray(img).astype(np.float64) / 65535.0
            return pixels[None]
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        pixels = np.asarray(img).astype(np.float64) / 255.0
    if pixels.ndim == 2:
        return pixels[None]
    return np.moveaxis(pixels, -1, 0).copy()
