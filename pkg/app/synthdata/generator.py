"""
Synthetic nucleus-like images with exact label maps

Ellipses are placed by rejection sampling: an ellipse is kept only when it
lies fully inside the image and every one of its pixels is at least
`min_spacing` away (Euclidean) from pixels already placed. Each sample is a
pure function of (cfg.seed, index).

Dataset layout on disk:

    images/NNNN.png      8-bit, 1 or 3 channels
    labels/NNNN.png      16-bit label map
    manifest.json        {"config": SynthConfig, "splits": {"train": [...], "val": [...], "test": [...]}}
"""
import json
from pathlib import Path
from typing import Dict, List, NamedTuple, Tuple

import numpy as np
from loguru import logger
from scipy import ndimage
from skimage.draw import ellipse

from app.config import SynthConfig
from app.labelmap.io import read_image, read_labels, write_image, write_labels
from app.labelmap.ops import LabelMap, relabel_sequential

MAX_TRIES = 1000
TEXTURE_SIGMA = 4.0
SPLITS = ("train", "val", "test")


class Sample(NamedTuple):
    image: np.ndarray
    labels: LabelMap


def _place_ellipses(cfg: SynthConfig, rng: np.random.Generator) -> LabelMap:
    size = cfg.image_size
    target = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    labels = np.zeros((size, size), dtype=np.int32)
    clearance = np.full((size, size), np.inf)
    placed = 0
    for _ in range(MAX_TRIES):
        if placed >= target:
            break
        major = rng.uniform(*cfg.radius_range)
        minor = major * (1.0 - rng.uniform(*cfg.eccentricity_range))
        angle = rng.uniform(0.0, np.pi)
        margin = major + 1.0
        row = rng.uniform(margin, size - 1 - margin)
        col = rng.uniform(margin, size - 1 - margin)
        rr, cc = ellipse(row, col, major, minor, shape=labels.shape, rotation=angle)
        if rr.size == 0 or clearance[rr, cc].min() < max(cfg.min_spacing, 1.0):
            continue
        placed += 1
        labels[rr, cc] = placed
        clearance = ndimage.distance_transform_edt(labels == 0)
    if placed < target:
        logger.debug(f"placed {placed} of {target} ellipses after {MAX_TRIES} tries")
    return relabel_sequential(labels)


def _render(labels: LabelMap, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    size = cfg.image_size
    channels = cfg.channels
    texture = ndimage.gaussian_filter(rng.standard_normal((channels, size, size)), sigma=(0, TEXTURE_SIGMA, TEXTURE_SIGMA))
    texture /= max(float(np.abs(texture).max()), 1e-12)
    image = rng.uniform(*cfg.background_intensity) + cfg.texture_amplitude * texture
    for k in range(1, int(labels.max()) + 1):
        inside = labels == k
        tint = rng.uniform(0.8, 1.0, size=channels) if channels > 1 else np.ones(1)
        intensity = rng.uniform(*cfg.foreground_intensity)
        image[:, inside] = (intensity * tint)[:, None] + cfg.texture_amplitude * texture[:, inside]
    image += rng.normal(0.0, cfg.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def gen_sample(cfg: SynthConfig, index: int) -> Sample:
    """(C x H x W image in [0, 1], label map), deterministic in (cfg.seed, index)"""
    rng = np.random.default_rng([cfg.seed, index])
    labels = _place_ellipses(cfg, rng)
    return Sample(_render(labels, cfg, rng), labels)


def gen_dataset(cfg: SynthConfig, n_train: int, n_val: int, n_test: int, out_dir) -> Dict:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    splits: Dict[str, List[str]] = {}
    index = 0
    for split, count in zip(SPLITS, (n_train, n_val, n_test)):
        names = []
        for _ in range(count):
            name = f"{index:04d}"
            sample = gen_sample(cfg, index)
            write_image(out_dir / "images" / f"{name}.png", sample.image)
            write_labels(out_dir / "labels" / f"{name}.png", sample.labels)
            names.append(name)
            index += 1
        splits[split] = names
    manifest = {"config": cfg.model_dump(mode="json"), "splits": splits}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info(f"wrote {index} samples to {out_dir} ({n_train}/{n_val}/{n_test})")
    return manifest


def read_manifest(path) -> Tuple[Path, Dict]:
    """Accepts the dataset directory or its manifest.json"""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    with open(manifest_path, "r", encoding="utf-8") as f:
        return manifest_path.parent, json.load(f)


def load_split(path, split: str) -> List[Sample]:
    """Images and labels of one split of any directory in the dataset layout"""
    root, manifest = read_manifest(path)
    if split not in manifest.get("splits", {}):
        raise KeyError(f"split {split!r} not in manifest {root / 'manifest.json'}")
    return [
        Sample(read_image(root / "images" / f"{name}.png"), read_labels(root / "labels" / f"{name}.png"))
        for name in manifest["splits"][split]
    ]
