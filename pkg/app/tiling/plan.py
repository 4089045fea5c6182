"""
Tile geometry
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from app.config import TilingConfig


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle [r0, r1) x [c0, c1)"""

    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.r1 - self.r0, self.c1 - self.c0

    @property
    def area(self) -> int:
        return max(self.r1 - self.r0, 0) * max(self.c1 - self.c0, 0)

    @property
    def slices(self) -> Tuple[slice, slice]:
        return slice(self.r0, self.r1), slice(self.c0, self.c1)

    def intersection(self, other: "Rect") -> Optional["Rect"]:
        r0, r1 = max(self.r0, other.r0), min(self.r1, other.r1)
        c0, c1 = max(self.c0, other.c0), min(self.c1, other.c1)
        if r0 >= r1 or c0 >= c1:
            return None
        return Rect(r0, r1, c0, c1)

    def local(self, outer: "Rect") -> "Rect":
        """This rectangle in the coordinates of `outer`"""
        return Rect(self.r0 - outer.r0, self.r1 - outer.r0, self.c0 - outer.c0, self.c1 - outer.c0)


@dataclass(frozen=True)
class TilePlan:
    height: int
    width: int
    tile_size: int
    overlap: int
    tiles: List[Rect] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tiles)

    def __iter__(self):
        return iter(self.tiles)


def tile_origins(extent: int, tile_size: int, overlap: int) -> List[int]:
    """Origins at 0, stride, 2*stride, ... with the last one clamped to end at the border"""
    if extent <= tile_size:
        return [0]
    stride = tile_size - overlap
    origins = list(range(0, extent - tile_size, stride))
    origins.append(extent - tile_size)
    return origins


def plan_tiles(height: int, width: int, tile_size: int = 512, overlap: int = 80) -> TilePlan:
    """Raster-ordered tiles covering height x width; tiles never exceed the image"""
    if tile_size <= 2 * overlap:
        raise ValueError(f"tile_size ({tile_size}) must exceed twice the overlap ({overlap})")
    if overlap < 0:
        raise ValueError(f"overlap must be non-negative, got {overlap}")
    if height < 1 or width < 1:
        raise ValueError(f"cannot tile an empty {height}x{width} image")
    tiles = [
        Rect(r, min(r + tile_size, height), c, min(c + tile_size, width))
        for r in tile_origins(height, tile_size, overlap)
        for c in tile_origins(width, tile_size, overlap)
    ]
    return TilePlan(height, width, tile_size, overlap, tiles)


def plan_from_config(height: int, width: int, cfg: TilingConfig) -> TilePlan:
    return plan_tiles(height, width, cfg.tile_size, cfg.overlap)
