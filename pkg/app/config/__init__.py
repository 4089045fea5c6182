"""
Application configuration
"""
from app.config.run_config import (
    ArchitectureConfig,
    PipelineConfig,
    RunConfig,
    SynthConfig,
    TilingConfig,
    TrainConfig,
)
from app.config.settings import settings

__all__ = [
    "ArchitectureConfig",
    "PipelineConfig",
    "RunConfig",
    "SynthConfig",
    "TilingConfig",
    "TrainConfig",
    "settings",
]
