import json

import pytest
from pydantic import ValidationError

from app.config import ArchitectureConfig, PipelineConfig, RunConfig, SynthConfig, TilingConfig, TrainConfig


class TestSections:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            PipelineConfig(seed_thresh=0.4)
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"pipline": {}})

    def test_crop_size_even(self):
        with pytest.raises(ValidationError):
            PipelineConfig(crop_size=127)
        assert PipelineConfig(crop_size=64).crop_size == 64

    @pytest.mark.parametrize("threshold", [0.0, 1.0, 1.5])
    def test_seed_threshold_open_interval(self, threshold):
        with pytest.raises(ValidationError):
            PipelineConfig(seed_threshold=threshold)

    def test_tiling_geometry(self):
        with pytest.raises(ValidationError):
            TilingConfig(tile_size=160, overlap=80)
        assert TilingConfig(tile_size=0, overlap=80).tile_size == 0

    def test_synth_ranges(self):
        with pytest.raises(ValidationError):
            SynthConfig(radius_range=(10.0, 4.0))
        with pytest.raises(ValidationError):
            SynthConfig(radius_range=(2.0, 4.0), eccentricity_range=(0.0, 0.5))
        with pytest.raises(ValidationError):
            SynthConfig(image_size=16, radius_range=(4.0, 12.0))

    def test_sections_are_frozen(self):
        cfg = TrainConfig()
        with pytest.raises(ValidationError):
            cfg.lr = 0.5

    def test_downsampling(self):
        assert ArchitectureConfig().downsampling == 8
        assert ArchitectureConfig(widths=(4, 8)).downsampling == 2


class TestRunConfig:
    def test_save_load_round_trip(self, tmp_path):
        cfg = RunConfig().updated("pipeline", crop_size=64, tta=True)
        path = cfg.save(tmp_path / "nested" / "run_config.json")
        assert RunConfig.load(path) == cfg
        assert json.loads(path.read_text(encoding="utf-8"))["pipeline"]["crop_size"] == 64

    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "partial.json"
        path.write_text(json.dumps({"train": {"lr": 0.01}}), encoding="utf-8")
        cfg = RunConfig.load(path)
        assert cfg.train.lr == 0.01
        assert cfg.train.epochs == TrainConfig().epochs
        assert cfg.pipeline == PipelineConfig()

    def test_updated_ignores_none_and_revalidates(self):
        cfg = RunConfig()
        same = cfg.updated("train", lr=None, epochs=None)
        assert same == cfg
        assert cfg.updated("train", epochs=3).train.epochs == 3
        with pytest.raises(ValidationError):
            cfg.updated("pipeline", crop_size=33)

    def test_digest_stable(self):
        assert RunConfig().digest() == RunConfig().digest()
        assert len(RunConfig().digest()) == 64

    def test_digest_tracks_model_shaping_fields(self):
        base = RunConfig()
        assert base.updated("architecture", phi_hidden=8).digest() != base.digest()
        assert base.updated("train", lr=0.5).digest() != base.digest()
        assert base.updated("train", seed=9).digest() != base.digest()

    def test_digest_ignores_epoch_counts_and_inference_settings(self):
        base = RunConfig()
        assert base.updated("train", epochs=500, pretrain_epochs=1).digest() == base.digest()
        assert base.updated("pipeline", tta=True).digest() == base.digest()
        assert base.updated("tiling", tile_size=256).digest() == base.digest()
