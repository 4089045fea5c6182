"""
Axis-aligned rotations and flips acting on the last two axes of an array

A transform applies the flips first, then `rotations` quarter turns
counter-clockwise (np.rot90). Sixteen (rotation, hflip, vflip) combinations
exist but only eight distinct symmetries: (k, h, v) and (k + 2, not h, not v)
act identically.
"""
from typing import List, NamedTuple, Tuple

import numpy as np


class Dihedral(NamedTuple):
    rotations: int = 0
    hflip: bool = False
    vflip: bool = False

    def apply(self, array: np.ndarray) -> np.ndarray:
        out = np.asarray(array)
        if self.hflip:
            out = out[..., :, ::-1]
        if self.vflip:
            out = out[..., ::-1, :]
        return np.ascontiguousarray(np.rot90(out, self.rotations % 4, axes=(-2, -1)))

    def invert(self, array: np.ndarray) -> np.ndarray:
        out = np.rot90(np.asarray(array), -(self.rotations % 4), axes=(-2, -1))
        if self.vflip:
            out = out[..., ::-1, :]
        if self.hflip:
            out = out[..., :, ::-1]
        return np.ascontiguousarray(out)

    def output_shape(self, shape: Tuple[int, int]) -> Tuple[int, int]:
        height, width = shape
        return (width, height) if self.rotations % 2 else (height, width)

    def map_point(self, row: int, col: int, shape: Tuple[int, int]) -> Tuple[int, int]:
        """Where pixel (row, col) of an input of `shape` lands in the output"""
        height, width = shape
        if self.hflip:
            col = width - 1 - col
        if self.vflip:
            row = height - 1 - row
        for _ in range(self.rotations % 4):
            row, col = width - 1 - col, row
            height, width = width, height
        return row, col

    def map_rect(self, r0: int, r1: int, c0: int, c1: int, shape: Tuple[int, int]) -> Tuple[int, int, int, int]:
        """Image of the half-open rectangle [r0, r1) x [c0, c1)"""
        corners = [self.map_point(r, c, shape) for r in (r0, r1 - 1) for c in (c0, c1 - 1)]
        rows = [r for r, _ in corners]
        cols = [c for _, c in corners]
        return min(rows), max(rows) + 1, min(cols), max(cols) + 1


DIHEDRAL_16: List[Dihedral] = [
    Dihedral(k, h, v) for k in range(4) for h in (False, True) for v in (False, True)
]
DIHEDRAL_8: List[Dihedral] = [Dihedral(k, h, False) for k in range(4) for h in (False, True)]
