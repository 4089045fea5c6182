"""
Seeds, candidates, merging, inference, TTA and training
"""
from app.pipeline.analytic import AnalyticModel, analytic_bundle, analytic_phi
from app.pipeline.candidates import (
    InstanceCandidate,
    Window,
    candidate_logits,
    crop_window,
    flatten,
    merge_redundant,
    predict_instances,
)
from app.pipeline.inference import InferenceTrace, NetworkPredictor, Predictor, as_predictor, infer, infer_bundle, segment
from app.pipeline.seeds import Seed, sample_seeds
from app.pipeline.training import TrainResult, train, train_step, validate
from app.pipeline.tta import tta_infer

__all__ = [
    "AnalyticModel",
    "InferenceTrace",
    "InstanceCandidate",
    "NetworkPredictor",
    "Predictor",
    "Seed",
    "TrainResult",
    "Window",
    "analytic_bundle",
    "analytic_phi",
    "as_predictor",
    "candidate_logits",
    "crop_window",
    "flatten",
    "infer",
    "infer_bundle",
    "merge_redundant",
    "predict_instances",
    "sample_seeds",
    "segment",
    "train",
    "train_step",
    "tta_infer",
    "validate",
]
