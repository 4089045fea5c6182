import json
import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.config import ArchitectureConfig
from app.model import (
    ModelFormatError,
    build_model,
    coordinate_grid,
    decode_model,
    encode_model,
    forward,
    forward_batch,
    load_model,
    load_model_with_metadata,
    padded_extent,
    phi_forward,
    save_model,
)
from app.model.container import MAGIC
from app.pipeline import infer
from app.tensor import ShapeError, Tensor


class TestParams:
    def test_deterministic_in_seed(self, tiny_arch):
        assert build_model(tiny_arch).equals(build_model(tiny_arch))
        other = build_model(tiny_arch.model_copy(update={"seed": 8}))
        assert not build_model(tiny_arch).equals(other)

    def test_phi_output_bias_starts_negative(self, tiny_params):
        assert_array_equal(tiny_params["phi.b2"].data, [-1.0])
        assert tiny_params.phi.w1.shape == (4, 4, 1, 1)

    def test_no_conditional_head_when_disabled(self, tiny_arch):
        params = build_model(tiny_arch.model_copy(update={"conditional_dim": 0}))
        assert "head_e.weight" not in params.tensors
        assert params.phi.w1.shape[1] == tiny_arch.positional_dim

    def test_instance_norm_has_no_running_stats(self, tiny_arch):
        params = build_model(tiny_arch.model_copy(update={"norm": "instance"}))
        assert params.norm_states == {}

    def test_copy_casts_and_detaches(self, tiny_params):
        copy = tiny_params.copy(dtype=np.float32)
        assert copy.dtype == np.float32
        copy["phi.b2"].data[:] = 5.0
        assert tiny_params["phi.b2"].data[0] == -1.0


class TestForward:
    def test_padding_multiple(self):
        assert padded_extent(32) == 32
        assert padded_extent(33) == 64
        assert padded_extent(1) == 32

    def test_coordinate_grid(self):
        grid = coordinate_grid(3, 4, 3).data
        assert grid[0, 2, 1] == 2 and grid[1, 2, 1] == 1
        assert_array_equal(grid[2], 0)
        with pytest.raises(ValueError):
            coordinate_grid(3, 4, 1)

    @pytest.mark.parametrize("height,width", [(32, 32), (20, 27), (1, 5)])
    def test_output_shapes_match_input(self, tiny_params, rng, height, width):
        bundle = forward(rng.uniform(size=(1, height, width)), tiny_params)
        assert bundle.S.shape == (height, width)
        assert bundle.P.shape == (2, height, width)
        assert bundle.E.shape == (2, height, width)
        assert ((bundle.S.data > 0) & (bundle.S.data < 1)).all()

    def test_channel_mismatch(self, tiny_params):
        with pytest.raises(ShapeError):
            forward(np.zeros((3, 16, 16)), tiny_params)

    def test_eval_leaves_running_stats(self, tiny_params, rng):
        before = {k: s.running_mean.copy() for k, s in tiny_params.norm_states.items()}
        forward(rng.uniform(size=(1, 16, 16)), tiny_params, mode="eval")
        for name, state in tiny_params.norm_states.items():
            assert_array_equal(state.running_mean, before[name])

    def test_train_updates_running_stats_and_records_graph(self, tiny_params, rng):
        S, _, _ = forward_batch(rng.uniform(size=(2, 1, 16, 16)), tiny_params, training=True)
        assert S.requires_grad
        assert any(s.running_mean.any() for s in tiny_params.norm_states.values())

    def test_batch_items_independent_in_eval(self, tiny_params, rng):
        X = rng.uniform(size=(2, 1, 16, 16))
        S, _, _ = forward_batch(X, tiny_params)
        alone = forward(X[1], tiny_params)
        assert_allclose(S.data[1], alone.S.data)

    def test_translation_covariant_in_interior(self, tiny_params, rng):
        scene = rng.uniform(size=(1, 176, 176))
        shift = 16
        base = forward(scene[:, :160, :160], tiny_params)
        moved = forward(scene[:, shift:shift + 160, shift:shift + 160], tiny_params)
        inner = slice(32, 112)
        outer = slice(32 + shift, 112 + shift)
        assert_allclose(moved.S.data[inner, inner], base.S.data[outer, outer], atol=1e-10)
        assert_allclose(moved.P.data[:, inner, inner], base.P.data[:, outer, outer], atol=1e-10)
        assert_allclose(moved.E.data[:, inner, inner], base.E.data[:, outer, outer], atol=1e-10)


class TestPhi:
    def test_batched_matches_single(self, tiny_params, rng):
        offsets = rng.standard_normal((3, 2, 5, 6))
        crops = rng.standard_normal((3, 2, 5, 6))
        batched = phi_forward(Tensor(offsets), Tensor(crops), tiny_params)
        for i in range(3):
            single = phi_forward(Tensor(offsets[i]), Tensor(crops[i]), tiny_params)
            assert_allclose(batched.data[i], single.data)

    def test_channel_checks(self, tiny_params):
        with pytest.raises(ShapeError):
            phi_forward(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((2, 4, 4))), tiny_params)
        with pytest.raises(ShapeError):
            phi_forward(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((2, 4, 5))), tiny_params)

    def test_zero_offsets_give_bias_dominated_logits(self, tiny_params):
        logits = phi_forward(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 3, 3))), tiny_params)
        assert_allclose(logits.data, -1.0)


class TestContainer:
    def test_round_trip_bit_exact(self, tiny_params, tmp_path, rng):
        forward_batch(rng.uniform(size=(2, 1, 16, 16)), tiny_params, training=True)
        path = save_model(tiny_params, tmp_path / "m.isgm", metadata={"note": "x"})
        loaded, metadata = load_model_with_metadata(path)
        assert loaded.equals(tiny_params)
        assert metadata == {"note": "x"}

    def test_inference_identical_after_round_trip(self, tiny_params, tmp_path, rng):
        loaded = load_model(save_model(tiny_params, tmp_path / "m.isgm"))
        for _ in range(10):
            image = rng.uniform(size=(1, 24, 24))
            assert forward(image, loaded).S.data.tobytes() == forward(image, tiny_params).S.data.tobytes()
            assert_array_equal(infer(image, loaded), infer(image, tiny_params))

    def test_header_layout(self, tiny_params):
        blob = encode_model(tiny_params)
        assert blob[:4] == MAGIC
        (length,) = struct.unpack_from("<I", blob, 4)
        header = json.loads(blob[8:8 + length])
        assert header["version"] == 1
        assert header["config"]["widths"] == [4, 8]
        assert header["tensors"][0]["offset"] == 0
        assert blob[8 + length:8 + length + 4] == b"RTF1"

    def test_bad_magic(self, tiny_params):
        with pytest.raises(ModelFormatError):
            decode_model(b"NOPE" + encode_model(tiny_params)[4:])

    def test_unsupported_version(self, tiny_params):
        blob = encode_model(tiny_params)
        (length,) = struct.unpack_from("<I", blob, 4)
        header = json.loads(blob[8:8 + length])
        header["version"] = 2
        raw = json.dumps(header).encode()
        with pytest.raises(ModelFormatError, match="version"):
            decode_model(MAGIC + struct.pack("<I", len(raw)) + raw + blob[8 + length:])

    def test_truncated_payload(self, tiny_params):
        with pytest.raises(ModelFormatError):
            decode_model(encode_model(tiny_params)[:-3])

    def test_config_parameter_mismatch(self, tiny_params):
        blob = encode_model(tiny_params)
        (length,) = struct.unpack_from("<I", blob, 4)
        header = json.loads(blob[8:8 + length])
        header["config"]["phi_hidden"] = 5
        raw = json.dumps(header).encode()
        with pytest.raises(ModelFormatError):
            decode_model(MAGIC + struct.pack("<I", len(raw)) + raw + blob[8 + length:])

    def test_float32_parameters_survive(self, tiny_params):
        params = tiny_params.copy(dtype=np.float32)
        loaded, _ = decode_model(encode_model(params))
        assert loaded.dtype == np.float32
        assert loaded.equals(params)

    def test_architecture_config_validation(self):
        with pytest.raises(ValueError):
            ArchitectureConfig(widths=(16,))
        with pytest.raises(ValueError):
            ArchitectureConfig(positional_dim=1)
