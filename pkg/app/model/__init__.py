"""
Backbone, heads, instance head and their on-disk container
"""
from app.model.container import (
    ModelFormatError,
    decode_model,
    encode_model,
    load_model,
    load_model_with_metadata,
    save_model,
)
from app.model.network import (
    FeatureBundle,
    bundle_at,
    coordinate_grid,
    forward,
    forward_batch,
    padded_extent,
    phi_forward,
)
from app.model.params import ModelParams, PhiWeights, build_model

__all__ = [
    "FeatureBundle",
    "ModelFormatError",
    "ModelParams",
    "PhiWeights",
    "build_model",
    "bundle_at",
    "coordinate_grid",
    "decode_model",
    "encode_model",
    "forward",
    "forward_batch",
    "load_model",
    "load_model_with_metadata",
    "padded_extent",
    "phi_forward",
    "save_model",
]
