"""
Image providers: pixel blocks on demand for tiled inference
"""
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional

import numpy as np
from loguru import logger

from app.labelmap.io import read_image
from app.tiling.plan import Rect


class ImageProvider(ABC):
    """C x H x W image served block by block

    Every block read is counted so callers can check that no more than a
    tile's worth of raw pixels is requested at once.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.pixels_read = 0
        self.blocks_read = 0
        self.peak_block_pixels = 0

    @property
    @abstractmethod
    def height(self) -> int:
        ...

    @property
    @abstractmethod
    def width(self) -> int:
        ...

    @property
    @abstractmethod
    def channels(self) -> int:
        ...

    @abstractmethod
    def _read(self, rect: Rect) -> np.ndarray:
        ...

    def read_block(self, rect: Rect) -> np.ndarray:
        """C x h x w float array for the rectangle, which must lie inside the image"""
        if rect.r0 < 0 or rect.c0 < 0 or rect.r1 > self.height or rect.c1 > self.width or rect.area == 0:
            raise ValueError(f"block {rect} outside {self.height}x{self.width} image")
        block = self._read(rect)
        with self._lock:
            self.pixels_read += rect.area
            self.blocks_read += 1
            self.peak_block_pixels = max(self.peak_block_pixels, rect.area)
        return block


class ArrayProvider(ImageProvider):
    """In-memory image, mostly for tests"""

    def __init__(self, image: np.ndarray):
        super().__init__()
        image = np.asarray(image)
        if image.ndim != 3:
            raise ValueError(f"expected a C x H x W image, got shape {image.shape}")
        self._image = image

    @property
    def height(self) -> int:
        return self._image.shape[1]

    @property
    def width(self) -> int:
        return self._image.shape[2]

    @property
    def channels(self) -> int:
        return self._image.shape[0]

    def _read(self, rect: Rect) -> np.ndarray:
        return self._image[:, rect.r0:rect.r1, rect.c0:rect.c1].copy()


class PngProvider(ImageProvider):
    """PNG file decoded once on first access, then served as blocks"""

    def __init__(self, path):
        super().__init__()
        self.path = Path(path)
        if not self.path.is_file():
            raise FileNotFoundError(f"image not found: {self.path}")
        self._image: Optional[np.ndarray] = None

    def _pixels(self) -> np.ndarray:
        with self._lock:
            if self._image is None:
                self._image = read_image(self.path)
                logger.debug(f"decoded {self.path} as {self._image.shape}")
            return self._image

    @property
    def height(self) -> int:
        return self._pixels().shape[1]

    @property
    def width(self) -> int:
        return self._pixels().shape[2]

    @property
    def channels(self) -> int:
        return self._pixels().shape[0]

    def _read(self, rect: Rect) -> np.ndarray:
        return self._pixels()[:, rect.r0:rect.r1, rect.c0:rect.c1].copy()
