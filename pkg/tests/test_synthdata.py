import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal
from scipy import ndimage

from app.config import SynthConfig
from app.labelmap import connected_components, instance_count, relabel_sequential
from app.synthdata import augment_sample, gen_dataset, gen_sample, load_split, random_crop, read_manifest
from app.utils import DIHEDRAL_8, Dihedral


class TestGenerator:
    def test_deterministic_in_seed_and_index(self, synth_cfg):
        a, b = gen_sample(synth_cfg, 3), gen_sample(synth_cfg, 3)
        assert_array_equal(a.image, b.image)
        assert_array_equal(a.labels, b.labels)
        other = gen_sample(synth_cfg, 4)
        assert not np.array_equal(a.labels, other.labels)

    def test_image_range_and_shape(self, synth_cfg):
        sample = gen_sample(synth_cfg, 0)
        assert sample.image.shape == (1, 64, 64)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0
        rgb = gen_sample(synth_cfg.model_copy(update={"channels": 3}), 0)
        assert rgb.image.shape == (3, 64, 64)

    @pytest.mark.parametrize("index", range(8))
    def test_default_instance_areas_within_geometric_bounds(self, index):
        cfg = SynthConfig(channels=1, seed=21)
        (r_min, r_max), e_max = cfg.radius_range, cfg.eccentricity_range[1]
        lower = np.pi * r_min ** 2 * (1 - e_max) * 0.8
        upper = np.pi * r_max ** 2 * 1.2
        labels = gen_sample(cfg, index).labels
        areas = np.bincount(labels.ravel())[1:]
        assert len(areas) >= 1
        assert lower <= areas.min() and areas.max() <= upper
        for k in range(1, len(areas) + 1):
            assert connected_components(labels == k).max() == 1

    def test_instances_are_single_components(self, synth_cfg):
        labels = gen_sample(synth_cfg, 1).labels
        for k in range(1, instance_count(labels) + 1):
            assert connected_components(labels == k).max() == 1

    @pytest.mark.parametrize("index", range(5))
    def test_spacing_respected(self, synth_cfg, index):
        labels = gen_sample(synth_cfg, index).labels
        assert_array_equal(labels, relabel_sequential(labels))
        for k in range(1, int(labels.max()) + 1):
            others = (labels > 0) & (labels != k)
            if not others.any():
                continue
            distance = ndimage.distance_transform_edt(~others)
            assert distance[labels == k].min() >= synth_cfg.min_spacing

    def test_count_within_range(self, synth_cfg):
        for index in range(5):
            count = instance_count(gen_sample(synth_cfg, index).labels)
            assert 1 <= count <= synth_cfg.count_range[1]

    def test_crowded_preset(self):
        cfg = SynthConfig.from_preset("crowded", image_size=128, channels=1)
        assert cfg.min_spacing == 1.0
        assert instance_count(gen_sample(cfg, 0).labels) > 10
        with pytest.raises(ValueError):
            SynthConfig.from_preset("sparse")


class TestDataset:
    def test_layout_and_manifest(self, synth_cfg, tmp_path):
        manifest = gen_dataset(synth_cfg, 3, 2, 1, tmp_path / "data")
        assert manifest["splits"] == {"train": ["0000", "0001", "0002"], "val": ["0003", "0004"], "test": ["0005"]}
        assert sorted(p.name for p in (tmp_path / "data" / "images").iterdir())[-1] == "0005.png"
        on_disk = json.loads((tmp_path / "data" / "manifest.json").read_text(encoding="utf-8"))
        assert SynthConfig.model_validate(on_disk["config"]) == synth_cfg

    def test_load_split_round_trip(self, synth_cfg, tmp_path):
        gen_dataset(synth_cfg, 2, 1, 0, tmp_path)
        val = load_split(tmp_path, "val")
        assert len(val) == 1
        assert_array_equal(val[0].labels, gen_sample(synth_cfg, 2).labels)
        assert val[0].image.shape == (1, 64, 64)
        assert load_split(tmp_path / "manifest.json", "test") == []

    def test_unknown_split(self, synth_cfg, tmp_path):
        gen_dataset(synth_cfg, 1, 0, 0, tmp_path)
        with pytest.raises(KeyError):
            load_split(tmp_path, "holdout")

    def test_read_manifest_accepts_file_or_dir(self, synth_cfg, tmp_path):
        gen_dataset(synth_cfg, 1, 0, 0, tmp_path)
        root, manifest = read_manifest(tmp_path / "manifest.json")
        assert root == tmp_path
        assert read_manifest(tmp_path)[1] == manifest


class TestAugment:
    def test_transform_applied_to_both(self, rng):
        labels = np.arange(12).reshape(3, 4)
        image = np.stack([labels, labels * 2]).astype(float)
        out_image, out_labels = augment_sample(image, labels, rng, transform=Dihedral(1, True, False))
        assert out_labels.shape == (4, 3)
        assert_array_equal(out_image[0], out_labels)
        assert_array_equal(out_image[1], out_labels * 2)

    def test_random_transform_and_crop_stay_aligned(self, rng):
        labels = rng.integers(0, 5, size=(20, 30))
        image = labels[None].astype(float)
        for _ in range(10):
            out_image, out_labels = augment_sample(image, labels, rng, crop=16)
            assert out_labels.shape == (16, 16)
            assert_array_equal(out_image[0], out_labels)

    def test_crop_larger_than_image(self, rng):
        labels = np.ones((10, 12), dtype=int)
        image, cropped = random_crop(labels[None].astype(float), labels, 64, rng)
        assert cropped.shape == (10, 12) and image.shape == (1, 10, 12)


class TestDihedral:
    @pytest.mark.parametrize("transform", DIHEDRAL_8)
    def test_invert_undoes_apply(self, rng, transform):
        array = rng.standard_normal((2, 5, 7))
        assert_array_equal(transform.invert(transform.apply(array)), array)

    @pytest.mark.parametrize("transform", DIHEDRAL_8)
    def test_map_point_follows_apply(self, transform):
        array = np.zeros((5, 7))
        array[1, 4] = 1
        row, col = transform.map_point(1, 4, (5, 7))
        out = transform.apply(array)
        assert out.shape == transform.output_shape((5, 7))
        assert out[row, col] == 1

    def test_sixteen_combinations_give_eight_symmetries(self, rng):
        from app.utils import DIHEDRAL_16

        array = rng.standard_normal((4, 6))
        distinct = {t.apply(array).tobytes() + bytes(t.apply(array).shape) for t in DIHEDRAL_16}
        assert len(DIHEDRAL_16) == 16 and len(distinct) == 8

    def test_map_rect(self):
        t = Dihedral(1, False, False)
        array = np.zeros((6, 8), dtype=int)
        array[1:3, 2:6] = 1
        r0, r1, c0, c1 = t.map_rect(1, 3, 2, 6, (6, 8))
        out = t.apply(array)
        assert out[r0:r1, c0:c1].all() and out.sum() == (r1 - r0) * (c1 - c0)
