"""
Run configuration: every tunable of a reproducible run, grouped by concern
"""
import hashlib
import json
from pathlib import Path
from typing import Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArchitectureConfig(_Section):
    """U-Net backbone, heads and instance head shapes"""

    in_channels: int = Field(3, ge=1)
    widths: Tuple[int, ...] = (16, 32, 64, 128)
    feature_dim: int = Field(16, ge=1)
    positional_dim: int = Field(4, ge=2)
    conditional_dim: int = Field(4, ge=0)
    phi_hidden: int = Field(32, ge=1)
    norm: Literal["batch", "instance"] = "batch"
    seed: int = 0

    @field_validator("widths")
    @classmethod
    def _check_widths(cls, widths: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(widths) < 2:
            raise ValueError(f"need at least two levels, got widths={widths}")
        if any(w < 1 for w in widths):
            raise ValueError(f"widths must be positive, got {widths}")
        return widths

    @property
    def downsampling(self) -> int:
        return 2 ** (len(self.widths) - 1)


class PipelineConfig(_Section):
    """Seed sampling, candidate prediction and merging"""

    seed_threshold: float = Field(0.5, gt=0.0, lt=1.0)
    window_radius: int = Field(2, ge=0)
    crop_size: int = Field(128, ge=2)
    merge_iou: float = Field(0.5, gt=0.0, lt=1.0)
    tta: bool = False
    precision: Literal["float64", "float32"] = "float64"

    @field_validator("crop_size")
    @classmethod
    def _check_crop(cls, crop_size: int) -> int:
        if crop_size % 2:
            raise ValueError(f"crop_size must be even, got {crop_size}")
        return crop_size


class TilingConfig(_Section):
    """Tiled inference geometry; tile_size 0 disables tiling"""

    tile_size: int = Field(512, ge=0)
    overlap: int = Field(80, ge=0)
    match_iou: float = Field(0.5, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_geometry(self) -> "TilingConfig":
        if self.tile_size and self.tile_size <= 2 * self.overlap:
            raise ValueError(
                f"tile_size ({self.tile_size}) must exceed twice the overlap ({self.overlap})"
            )
        return self


class TrainConfig(_Section):
    """Optimisation schedule; full scale is 500 epochs of 1000 batches

    The desk-scale run keeps these defaults except pretrain_epochs=2.
    """

    epochs: int = Field(20, ge=0)
    pretrain_epochs: int = Field(10, ge=0)
    batches_per_epoch: int = Field(100, ge=1)
    batch_size: int = Field(3, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    crop: int = Field(256, ge=8)
    instance_cap: int = Field(50, ge=1)
    seed: int = 0


class SynthConfig(_Section):
    """Synthetic nucleus-like images"""

    preset: Literal["default", "crowded"] = "default"
    image_size: int = Field(128, ge=16)
    count_range: Tuple[int, int] = (8, 20)
    radius_range: Tuple[float, float] = (4.0, 12.0)
    eccentricity_range: Tuple[float, float] = (0.0, 0.4)
    min_spacing: float = Field(3.0, ge=0.0)
    foreground_intensity: Tuple[float, float] = (0.5, 1.0)
    background_intensity: Tuple[float, float] = (0.0, 0.2)
    noise_sigma: float = Field(0.03, ge=0.0)
    texture_amplitude: float = Field(0.05, ge=0.0)
    channels: Literal[1, 3] = 3
    seed: int = 0

    @field_validator(
        "count_range", "radius_range", "eccentricity_range",
        "foreground_intensity", "background_intensity",
    )
    @classmethod
    def _check_range(cls, bounds):
        lo, hi = bounds
        if lo > hi:
            raise ValueError(f"range lower bound {lo} exceeds upper bound {hi}")
        return bounds

    @model_validator(mode="after")
    def _check_shapes(self) -> "SynthConfig":
        r_min, r_max = self.radius_range
        e_min, e_max = self.eccentricity_range
        if e_min < 0.0 or e_max >= 1.0:
            raise ValueError(f"eccentricity must lie in [0, 1), got {self.eccentricity_range}")
        if r_min * (1.0 - e_max) < 2.0:
            raise ValueError(
                f"minor radius {r_min * (1.0 - e_max):.2f} < 2; raise radius_range or lower eccentricity"
            )
        if 2 * r_max + 4 > self.image_size:
            raise ValueError(f"radius {r_max} does not fit a {self.image_size}px image")
        if self.count_range[0] < 0:
            raise ValueError("instance count cannot be negative")
        return self

    @classmethod
    def from_preset(cls, preset: str, **overrides) -> "SynthConfig":
        if preset == "crowded":
            base = dict(preset="crowded", count_range=(20, 40), radius_range=(4.0, 10.0), min_spacing=1.0)
        elif preset == "default":
            base = dict(preset="default")
        else:
            raise ValueError(f"unknown preset {preset!r}")
        base.update(overrides)
        return cls(**base)


class RunConfig(_Section):
    """Fully resolved configuration written next to every output"""

    architecture: ArchitectureConfig = ArchitectureConfig()
    pipeline: PipelineConfig = PipelineConfig()
    tiling: TilingConfig = TilingConfig()
    train: TrainConfig = TrainConfig()
    synth: SynthConfig = SynthConfig()

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True), encoding="utf-8")
        return path

    def digest(self) -> str:
        """sha256 over the parts that shape a trained model; epoch counts may change on resume"""
        payload = {
            "architecture": self.architecture.model_dump(mode="json"),
            "train": self.train.model_dump(mode="json", exclude={"epochs", "pretrain_epochs"}),
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def updated(self, section: str, **changes) -> "RunConfig":
        """Copy with fields of one section replaced (values re-validated)"""
        current = getattr(self, section)
        merged = {**current.model_dump(), **{k: v for k, v in changes.items() if v is not None}}
        return self.model_copy(update={section: type(current).model_validate(merged)})
