import json

import numpy as np
import pytest

import main
from app.cli import EXIT_ERROR, EXIT_OK, EXIT_VERIFY
from app.config import ArchitectureConfig, RunConfig, settings
from app.labelmap import read_labels, write_image, write_labels
from app.model import build_model, load_model_with_metadata, save_model


@pytest.fixture(autouse=True)
def log_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setattr(settings, "THREADS", 1)


def write_config(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


@pytest.fixture
def dataset(tmp_path):
    cfg = write_config(tmp_path / "synth.json", {"synth": {"image_size": 32, "count_range": [1, 3], "channels": 1}})
    out = tmp_path / "data"
    code = main.main(["gen", "--config", cfg, "--out", str(out), "--n-train", "2", "--n-val", "1", "--n-test", "1"])
    assert code == EXIT_OK
    return out


@pytest.fixture
def silent_model(tmp_path):
    """Model whose seed map is ~0 everywhere, so it never finds an instance"""
    params = build_model(ArchitectureConfig(in_channels=1, widths=(4, 8), feature_dim=4, phi_hidden=4))
    params["head_s.weight"].data[:] = 0.0
    params["head_s.bias"].data[:] = -30.0
    return save_model(params, tmp_path / "silent.isgm")


class TestGen:
    def test_writes_dataset_and_run_config(self, dataset):
        manifest = json.loads((dataset / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["splits"]["train"] == ["0000", "0001"]
        assert RunConfig.load(dataset / "run_config.json").synth.image_size == 32
        assert read_labels(dataset / "labels" / "0003.png").shape == (32, 32)

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x", encoding="utf-8")
        assert main.main(["gen", "--out", str(blocker / "sub"), "--n-train", "1", "--n-val", "0", "--n-test", "0"]) == EXIT_ERROR

    def test_unknown_config_key(self, tmp_path):
        cfg = write_config(tmp_path / "bad.json", {"synth": {"size": 32}})
        assert main.main(["gen", "--config", cfg, "--out", str(tmp_path / "d")]) == EXIT_ERROR


class TestEval:
    def test_self_match_is_perfect(self, dataset, tmp_path, capsys):
        report = tmp_path / "out" / "report.json"
        labels = str(dataset / "labels")
        assert main.main(["eval", "--pred-dir", labels, "--gt-dir", labels, "--report", str(report)]) == EXIT_OK
        assert "F1^mu 1.0000" in capsys.readouterr().out
        payload = json.loads(report.read_text(encoding="utf-8"))
        assert payload["pooled"]["f1_mu"] == 1.0
        assert payload["per_image"][0]["file"] == "0000.png"
        assert (report.parent / "run_config.json").is_file()

    def test_pairs_files_by_name(self, tmp_path, capsys):
        gt, pred = tmp_path / "gt", tmp_path / "pred"
        first = np.zeros((16, 16), dtype=np.int64)
        first[2:6, 2:6] = 1
        second = np.zeros((16, 16), dtype=np.int64)
        second[8:14, 9:15] = 1
        second[1:4, 10:13] = 2
        write_labels(gt / "0001.png", first)
        write_labels(gt / "0002.png", second)
        write_labels(pred / "0001.png", first)
        write_labels(pred / "0002.png", second)
        report = tmp_path / "report.json"
        assert main.main(["eval", "--pred-dir", str(pred), "--gt-dir", str(gt), "--report", str(report)]) == EXIT_OK
        assert "F1^mu 1.0000" in capsys.readouterr().out
        entries = json.loads(report.read_text(encoding="utf-8"))["per_image"]
        assert [e["file"] for e in entries] == ["0001.png", "0002.png"]

    def test_mismatched_names(self, tmp_path):
        gt, pred = tmp_path / "gt", tmp_path / "pred"
        labels = np.zeros((8, 8), dtype=np.int64)
        labels[1:4, 1:4] = 1
        write_labels(gt / "0001.png", labels)
        write_labels(gt / "0002.png", labels)
        write_labels(pred / "a.png", labels)
        write_labels(pred / "b.png", labels)
        assert main.main(["eval", "--pred-dir", str(pred), "--gt-dir", str(gt)]) == EXIT_ERROR

    def test_missing_prediction(self, tmp_path):
        gt, pred = tmp_path / "gt", tmp_path / "pred"
        labels = np.zeros((8, 8), dtype=np.int64)
        labels[2:5, 2:5] = 1
        write_labels(gt / "0001.png", labels)
        write_labels(gt / "0002.png", labels)
        write_labels(pred / "0001.png", labels)
        assert main.main(["eval", "--pred-dir", str(pred), "--gt-dir", str(gt)]) == EXIT_ERROR

    def test_empty_directories(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        assert main.main(["eval", "--pred-dir", str(tmp_path / "a"), "--gt-dir", str(tmp_path / "b")]) == EXIT_ERROR

    def test_missing_directory(self, tmp_path):
        assert main.main(["eval", "--pred-dir", str(tmp_path / "x"), "--gt-dir", str(tmp_path / "y")]) == EXIT_ERROR


class TestGradcheck:
    def test_failure_exits_with_verification_code(self, monkeypatch):
        monkeypatch.setattr("app.cli.commands.run_suite", lambda trials, seed: {"relu": 1e-9, "conv2d_3x3": 1e-2})
        assert main.main(["gradcheck", "--trials", "1"]) == EXIT_VERIFY

    def test_pass(self, monkeypatch, capsys):
        monkeypatch.setattr("app.cli.commands.run_suite", lambda trials, seed: {"relu": 1e-9})
        assert main.main(["gradcheck"]) == EXIT_OK
        assert "relu" in capsys.readouterr().out


class TestInfer:
    @pytest.mark.parametrize("tiling", [["--tile-size", "0"], [], ["--tile-size", "32", "--overlap", "8"]])
    def test_blank_image_has_no_instances(self, silent_model, tmp_path, capsys, tiling):
        image = write_image(tmp_path / "blank.png", np.zeros((1, 40, 40)))
        out = tmp_path / "pred" / "blank.png"
        code = main.main(["--threads", "2", "infer", "--model", str(silent_model), "--in", str(image), "--out", str(out), *tiling])
        assert code == EXIT_OK
        assert capsys.readouterr().out.strip() == "0"
        assert not read_labels(out).any()
        assert (out.parent / "run_config.json").is_file()

    def test_directory_input(self, silent_model, tmp_path, capsys):
        for name in ("a.png", "b.png"):
            write_image(tmp_path / "images" / name, np.zeros((1, 24, 24)))
        out = tmp_path / "pred"
        code = main.main(["infer", "--model", str(silent_model), "--in", str(tmp_path / "images"), "--out", str(out)])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines == ["a.png: 0 instances", "b.png: 0 instances", "total: 0 instances"]
        assert sorted(p.name for p in out.glob("*.png")) == ["a.png", "b.png"]

    def test_missing_model(self, tmp_path):
        image = write_image(tmp_path / "x.png", np.zeros((1, 8, 8)))
        code = main.main(["infer", "--model", str(tmp_path / "none.isgm"), "--in", str(image), "--out", str(tmp_path / "o.png")])
        assert code == EXIT_ERROR

    def test_precision_from_environment(self, silent_model, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "PRECISION", "float32")
        image = write_image(tmp_path / "blank.png", np.zeros((1, 16, 16)))
        out = tmp_path / "o.png"
        assert main.main(["infer", "--model", str(silent_model), "--in", str(image), "--out", str(out)]) == EXIT_OK
        assert RunConfig.load(tmp_path / "run_config.json").pipeline.precision == "float32"


class TestTrain:
    def test_smoke_and_resume_guard(self, dataset, tmp_path):
        cfg = write_config(tmp_path / "train.json", {
            "architecture": {"widths": [4, 8], "feature_dim": 4, "phi_hidden": 4},
            "pipeline": {"crop_size": 32},
            "train": {"epochs": 1, "pretrain_epochs": 1, "batches_per_epoch": 1, "batch_size": 1, "crop": 32},
        })
        model = tmp_path / "models" / "m.isgm"
        base = ["train", "--config", cfg, "--data", str(dataset), "--out-model", str(model), "--no-progress"]
        assert main.main(base) == EXIT_OK

        params, metadata = load_model_with_metadata(model)
        assert params.config.in_channels == 1
        assert metadata["epochs_completed"] == 2
        assert metadata["digest"] == RunConfig.load(model.parent / "run_config.json").digest()
        assert model.with_suffix(".metrics.jsonl").is_file()

        assert main.main(base + ["--resume", str(model), "--seed", "5"]) == EXIT_ERROR
        assert main.main(base + ["--resume", str(model), "--epochs", "1"]) == EXIT_OK

    def test_resume_carries_best_score(self, dataset, tmp_path):
        cfg = write_config(tmp_path / "train.json", {
            "architecture": {"widths": [4, 8], "feature_dim": 4, "phi_hidden": 4},
            "pipeline": {"crop_size": 32},
            "train": {"epochs": 2, "pretrain_epochs": 0, "batches_per_epoch": 1, "batch_size": 1, "crop": 32},
        })
        model = tmp_path / "m.isgm"
        params = build_model(ArchitectureConfig(in_channels=1, widths=(4, 8), feature_dim=4, phi_hidden=4))
        digest = RunConfig.load(cfg).updated("architecture", in_channels=1).digest()
        save_model(params, model, metadata={"digest": digest, "epochs_completed": 1, "best_epoch": 0, "best_f1_mu": 2.0})
        code = main.main(["train", "--config", cfg, "--data", str(dataset), "--out-model", str(model), "--resume", str(model), "--no-progress"])
        assert code == EXIT_OK
        restored, metadata = load_model_with_metadata(model)
        assert metadata["best_f1_mu"] == 2.0
        assert metadata["best_epoch"] == 0
        assert restored.equals(params)

    def test_empty_split(self, tmp_path):
        cfg = write_config(tmp_path / "synth.json", {"synth": {"image_size": 32, "channels": 1}})
        data = tmp_path / "data"
        assert main.main(["gen", "--config", cfg, "--out", str(data), "--n-train", "0", "--n-val", "1", "--n-test", "0"]) == EXIT_OK
        assert main.main(["train", "--data", str(data), "--out-model", str(tmp_path / "m.isgm"), "--no-progress"]) == EXIT_ERROR
