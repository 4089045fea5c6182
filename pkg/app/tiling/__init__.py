"""
Tiled inference over images larger than one forward pass
"""
from app.tiling.plan import Rect, TilePlan, plan_from_config, plan_tiles, tile_origins
from app.tiling.provider import ArrayProvider, ImageProvider, PngProvider
from app.tiling.stitch import LabelStore, infer_tiled

__all__ = [
    "ArrayProvider",
    "ImageProvider",
    "LabelStore",
    "PngProvider",
    "Rect",
    "TilePlan",
    "infer_tiled",
    "plan_from_config",
    "plan_tiles",
    "tile_origins",
]
