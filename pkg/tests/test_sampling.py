import json
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from iceseg.sampling import (SamplingError, SplitError, SplitManifest, build_split,
                             half_window, load_patch_index, region_window,
                             sample_patches, save_patch_index)

MONTH_IDS = [f"2018-{m:02d}" for m in range(1, 13)]


def scene(scene_id="2018-03", shape=(2000, 2000)):
    return SimpleNamespace(scene_id=scene_id, shape=shape)


class TestBuildSplit:
    def test_test_scenes_are_january_and_july(self):
        manifest = build_split(MONTH_IDS)
        assert manifest.test_scenes == ["2018-01", "2018-07"]

    def test_val_has_four_half_scenes(self):
        manifest = build_split(MONTH_IDS)
        assert manifest.val_regions == [("2018-02", "left"), ("2018-06", "left"),
                                        ("2018-08", "left"), ("2018-12", "left")]

    def test_train_is_the_remaining_six(self):
        manifest = build_split(MONTH_IDS)
        assert manifest.train_scenes == ["2018-03", "2018-04", "2018-05",
                                         "2018-09", "2018-10", "2018-11"]

    def test_train_sources_include_val_complements(self):
        sources = build_split(MONTH_IDS).train_sources()
        assert ("2018-03", None) in sources
        assert ("2018-02", "right") in sources
        assert len(sources) == 10

    def test_missing_month_is_named(self):
        with pytest.raises(SplitError, match="11"):
            build_split([s for s in MONTH_IDS if s != "2018-11"])

    def test_duplicate_month_rejected(self):
        with pytest.raises(SplitError, match="duplicate"):
            build_split(MONTH_IDS[:-1] + ["2018-01"])

    def test_malformed_id_rejected(self):
        with pytest.raises(SplitError):
            build_split(MONTH_IDS[:-1] + ["january"])

    def test_manifest_roundtrip(self, tmp_path):
        manifest = build_split(MONTH_IDS, seed=9, patch_size=500, patches_per_scene=12)
        path = tmp_path / "split.json"
        manifest.save(path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"train", "val", "test", "seed", "patch_size", "patches_per_scene"}
        assert SplitManifest.load(path) == manifest


class TestWindows:
    @pytest.mark.parametrize("shape", [(512, 512), (511, 513), (100, 7)])
    def test_halves_partition_the_scene(self, shape):
        left = half_window(shape, "left")
        right = half_window(shape, "right")
        assert left[1] == 0 and right[1] == left[3]
        assert left[3] + right[3] == shape[1]
        assert left[2] == right[2] == shape[0]

    def test_top_bottom(self):
        assert half_window((10, 6), "top") == (0, 0, 5, 6)
        assert half_window((11, 6), "bottom") == (5, 0, 6, 6)

    def test_region_window_defaults_to_full(self):
        assert region_window((9, 7), None) == (0, 0, 9, 7)

    def test_unknown_half(self):
        with pytest.raises(SplitError):
            half_window((8, 8), "diagonal")


class TestSamplePatches:
    def test_exact_fit_single_position(self):
        patches = sample_patches(scene(shape=(1000, 1000)), n=20, seed=3, size=1000)
        assert len(patches) == 20
        assert all(p.row0 == 0 and p.col0 == 0 for p in patches)

    def test_same_seed_reproduces(self):
        a = sample_patches(scene(), n=50, seed=11, size=500)
        b = sample_patches(scene(), n=50, seed=11, size=500)
        assert a == b

    def test_different_scene_or_seed_differs(self):
        base = sample_patches(scene(), n=50, seed=11, size=500)
        assert sample_patches(scene(), n=50, seed=12, size=500) != base
        assert sample_patches(scene(scene_id="2018-04"), n=50, seed=11, size=500) != base

    def test_windows_inside_scene(self):
        patches = sample_patches(scene(shape=(1400, 1700)), n=300, seed=5, size=1000)
        for p in patches:
            assert 0 <= p.row0 <= 400
            assert 0 <= p.col0 <= 700

    def test_windows_inside_region(self):
        region = (0, 256, 512, 256)  # right half of a 512x512 scene
        patches = sample_patches(scene(shape=(512, 512)), n=200, seed=5, size=128,
                                 region=region)
        for p in patches:
            assert 0 <= p.row0 <= 384
            assert 256 <= p.col0 <= 384

    def test_scene_smaller_than_patch(self):
        with pytest.raises(SamplingError):
            sample_patches(scene(shape=(999, 2000)), n=1, seed=0, size=1000)

    def test_corner_distribution_uniform(self):
        # 2000x2000 scene, patch 1000: offsets uniform over [0, 1000]^2.
        patches = sample_patches(scene(shape=(2000, 2000)), n=10_000, seed=0, size=1000)
        rows = np.array([p.row0 for p in patches])
        cols = np.array([p.col0 for p in patches])
        edges = np.linspace(0, 1001, 5)
        counts, _, _ = np.histogram2d(rows, cols, bins=[edges, edges])
        _, p_value = stats.chisquare(counts.ravel())
        assert p_value > 0.01

    def test_patch_index_roundtrip(self, tmp_path):
        patches = sample_patches(scene(shape=(512, 512)), n=7, seed=2, size=128)
        path = tmp_path / "patches.json"
        save_patch_index(path, patches, seed=2, patch_size=128, patches_per_scene=7)
        assert load_patch_index(path) == patches
