"""
Single-image inference: features -> seeds -> candidates -> merge -> flatten
"""
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Union

import numpy as np
from loguru import logger

from app.config import PipelineConfig
from app.labelmap.ops import LabelMap
from app.model.network import FeatureBundle, forward
from app.model.params import ModelParams, PhiWeights
from app.pipeline.candidates import InstanceCandidate, flatten, merge_redundant, predict_instances
from app.pipeline.seeds import Seed, sample_seeds
from app.utils.allocation import AllocationTracker


class Predictor(Protocol):
    positional_dim: int
    conditional_dim: int
    phi: PhiWeights

    def features(self, image: np.ndarray) -> FeatureBundle:
        ...


class NetworkPredictor:
    """Eval-mode wrapper over a private, gradient-free copy of the parameters"""

    def __init__(self, params: ModelParams, precision: str = "float64"):
        dtype = np.dtype(precision)
        self.params = params.copy(dtype=dtype).requires_grad_(False)
        self.positional_dim = params.config.positional_dim
        self.conditional_dim = params.config.conditional_dim
        self.phi = self.params.phi

    def features(self, image: np.ndarray) -> FeatureBundle:
        return forward(image, self.params, mode="eval")


def as_predictor(model: Union[ModelParams, Predictor], precision: str = "float64") -> Predictor:
    if isinstance(model, ModelParams):
        return NetworkPredictor(model, precision)
    return model


@dataclass
class InferenceTrace:
    """Intermediate results of one inference, for inspection and tests"""

    seeds: List[Seed] = field(default_factory=list)
    candidates: List[InstanceCandidate] = field(default_factory=list)
    merged: List[InstanceCandidate] = field(default_factory=list)
    labels: Optional[LabelMap] = None


def infer_bundle(
    bundle: FeatureBundle,
    phi: PhiWeights,
    cfg: PipelineConfig,
    tracker: Optional[AllocationTracker] = None,
) -> InferenceTrace:
    trace = InferenceTrace()
    trace.seeds = sample_seeds(bundle.S.data, cfg.seed_threshold, cfg.window_radius)
    trace.candidates = predict_instances(bundle, trace.seeds, phi, cfg.crop_size, tracker=tracker)
    trace.merged = merge_redundant(trace.candidates, cfg.merge_iou)
    trace.labels = flatten(trace.merged, bundle.height, bundle.width)
    logger.debug(
        f"seeds={len(trace.seeds)} candidates={len(trace.candidates)} merged={len(trace.merged)}"
    )
    return trace


def infer(X: np.ndarray, model: Union[ModelParams, Predictor], cfg: Optional[PipelineConfig] = None) -> LabelMap:
    """Label map for a C x H x W image; deterministic for a fixed model"""
    cfg = cfg or PipelineConfig()
    predictor = as_predictor(model, cfg.precision)
    return infer_bundle(predictor.features(np.asarray(X)), predictor.phi, cfg).labels


def segment(X: np.ndarray, model: Union[ModelParams, Predictor], cfg: Optional[PipelineConfig] = None) -> LabelMap:
    """infer or tta_infer depending on cfg.tta"""
    cfg = cfg or PipelineConfig()
    if cfg.tta:
        from app.pipeline.tta import tta_infer

        return tta_infer(X, model, cfg)
    return infer(X, model, cfg)
