"""
Tiled inference with label-space stitching

Tiles are inferred independently (in parallel, at most `threads` at a time)
and committed one by one in plan order into a global label store. Each tile
instance is compared with the committed instances it lands on, measuring IoU
only inside the part of the tile those instances' source tiles already
observed. A match at or above `match_iou` extends the committed instance;
anything else becomes a new instance on the still unlabelled pixels.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Union

import numpy as np
from loguru import logger
from scipy import ndimage

from app.config import PipelineConfig, TilingConfig, settings
from app.labelmap.ops import LabelMap, relabel_sequential
from app.model.params import ModelParams
from app.pipeline.inference import Predictor, as_predictor, infer
from app.tiling.plan import Rect, TilePlan, plan_tiles
from app.tiling.provider import ArrayProvider, ImageProvider


class LabelStore:
    """Global label map plus, per committed label, its bounding box and source tiles"""

    def __init__(self, height: int, width: int, match_iou: float = 0.5):
        self.labels = np.zeros((height, width), dtype=np.int32)
        self.match_iou = match_iou
        self.bounds: Dict[int, Rect] = {}
        self.sources: Dict[int, List[Rect]] = {}
        self._next = 1
        self.matched = 0
        self.created = 0

    def _observed(self, label: int, tile: Rect, region: Rect) -> np.ndarray:
        """Mask over `region` of the pixels label's source tiles have seen"""
        mask = np.zeros(region.shape, dtype=bool)
        for source in self.sources[label]:
            seen = source.intersection(region)
            if seen is not None:
                mask[seen.local(region).slices] = True
        return mask

    def _overlap_iou(self, label: int, piece: np.ndarray, piece_rect: Rect, tile: Rect) -> float:
        region = piece_rect
        committed = self.bounds[label].intersection(tile)
        if committed is not None:
            region = Rect(
                min(region.r0, committed.r0), max(region.r1, committed.r1),
                min(region.c0, committed.c0), max(region.c1, committed.c1),
            )
        ours = np.zeros(region.shape, dtype=bool)
        ours[piece_rect.local(region).slices] = piece
        ours &= self._observed(label, tile, region)
        theirs = self.labels[region.slices] == label
        inter = np.count_nonzero(ours & theirs)
        union = np.count_nonzero(ours) + np.count_nonzero(theirs) - inter
        return inter / union if union else 0.0

    def _assign(self, label: int, piece: np.ndarray, piece_rect: Rect, tile: Rect) -> int:
        target = self.labels[piece_rect.slices]
        free = piece & (target == 0)
        target[free] = label
        assigned = int(np.count_nonzero(free))
        if assigned:
            box = self.bounds.get(label, piece_rect)
            self.bounds[label] = Rect(
                min(box.r0, piece_rect.r0), max(box.r1, piece_rect.r1),
                min(box.c0, piece_rect.c0), max(box.c1, piece_rect.c1),
            )
            sources = self.sources.setdefault(label, [])
            if tile not in sources:
                sources.append(tile)
        return assigned

    def commit(self, tile: Rect, tile_labels: LabelMap) -> None:
        tile_labels = np.asarray(tile_labels)
        if tile_labels.shape != tile.shape:
            raise ValueError(f"tile labels {tile_labels.shape} do not match tile {tile.shape}")
        for k, window in enumerate(ndimage.find_objects(tile_labels), start=1):
            if window is None:
                continue
            piece = tile_labels[window] == k
            piece_rect = Rect(
                tile.r0 + window[0].start, tile.r0 + window[0].stop,
                tile.c0 + window[1].start, tile.c0 + window[1].stop,
            )
            under = np.unique(self.labels[piece_rect.slices][piece])
            best, best_iou = 0, -1.0
            for label in under[under > 0]:
                score = self._overlap_iou(int(label), piece, piece_rect, tile)
                if score > best_iou:
                    best, best_iou = int(label), score
            if best and best_iou >= self.match_iou:
                self._assign(best, piece, piece_rect, tile)
                self.matched += 1
            elif self._assign(self._next, piece, piece_rect, tile):
                self._next += 1
                self.created += 1

    def result(self) -> LabelMap:
        return relabel_sequential(self.labels)


def _infer_tile(source: ImageProvider, tile: Rect, predictor: Predictor, cfg: PipelineConfig, nested_threads: int) -> LabelMap:
    block = source.read_block(tile)
    if cfg.tta:
        from app.pipeline.tta import tta_infer

        return tta_infer(block, predictor, cfg, threads=nested_threads)
    return infer(block, predictor, cfg)


def infer_tiled(
    source: Union[ImageProvider, np.ndarray],
    model: Union[ModelParams, Predictor],
    pipeline_cfg: Optional[PipelineConfig] = None,
    tiling_cfg: Optional[TilingConfig] = None,
    threads: Optional[int] = None,
) -> LabelMap:
    """Whole-image label map assembled from per-tile inference; tile_size 0 infers in one block"""
    pipeline_cfg = pipeline_cfg or PipelineConfig()
    tiling_cfg = tiling_cfg or TilingConfig()
    if not isinstance(source, ImageProvider):
        source = ArrayProvider(source)
    threads = max(1, threads or settings.THREADS)
    height, width = source.height, source.width

    if tiling_cfg.tile_size == 0:
        plan = TilePlan(height, width, 0, 0, [Rect(0, height, 0, width)])
    else:
        plan = plan_tiles(height, width, tiling_cfg.tile_size, tiling_cfg.overlap)
    predictor = as_predictor(model, pipeline_cfg.precision)
    store = LabelStore(height, width, tiling_cfg.match_iou)
    nested = 1 if threads > 1 else settings.THREADS
    logger.debug(f"{len(plan)} tiles of {plan.tile_size}px over {height}x{width}, {threads} workers")

    with ThreadPoolExecutor(max_workers=threads) as executor:
        for start in range(0, len(plan.tiles), threads):
            chunk = plan.tiles[start:start + threads]
            results = executor.map(lambda tile: _infer_tile(source, tile, predictor, pipeline_cfg, nested), chunk)
            for offset, (tile, tile_labels) in enumerate(zip(chunk, results)):
                store.commit(tile, tile_labels)
                logger.debug(
                    f"tile {start + offset + 1}/{len(plan)} at ({tile.r0}, {tile.c0}): "
                    f"{int(tile_labels.max()) if tile_labels.size else 0} instances"
                )

    labels = store.result()
    logger.info(
        f"tiled inference: {int(labels.max())} instances from {len(plan)} tiles "
        f"({store.matched} cross-tile matches, {store.created} new)"
    )
    return labels

