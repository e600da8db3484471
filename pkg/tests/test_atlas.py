import numpy as np
import pytest

from eak.atlas import (
    AtlasSpec,
    AtlasUnit,
    atlas_series,
    build_atlas,
    fc_expand,
    load_atlas,
    pearson_r,
    reference_series,
    save_atlas,
)
from eak.errors import DataError, DigestMismatch, OverlapError
from eak.volume import Parcellation

from conftest import make_block, make_volume


def simple_setup(nx=4, n_blocks=3, nt=None, seed=0):
    """One subject, a few blocks, parcellation with labels 1..nx (x-slabs)."""
    rng = np.random.default_rng(seed)
    nt = nt or (30 + 40 * n_blocks) // 2
    data = rng.normal(size=(nx, 2, 2, nt))
    vol = make_volume(data)
    labels = np.zeros((nx, 2, 2), dtype=np.int64)
    for x in range(nx):
        labels[x] = x + 1
    parc = Parcellation(labels=labels)
    blocks = [make_block(subject="s1",
                         stim=tuple(range(15 + 20 * i, 20 + 20 * i)),
                         rest=tuple(range(5 + 20 * i, 10 + 20 * i)))
              for i in range(n_blocks)]
    return {"s1": vol}, parc, blocks


class TestPearson:
    def test_symmetric_bounded_affine_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.normal(size=50)
            b = rng.normal(size=50)
            r = pearson_r(a, b)
            assert -1 <= r <= 1
            assert abs(r - pearson_r(b, a)) < 1e-12
            assert abs(r - pearson_r(3.5 * a + 2.0, b)) < 1e-9
            assert abs(r - pearson_r(a, 0.1 * b - 7.0)) < 1e-9

    def test_zero_variance_rejected(self):
        with pytest.raises(DataError):
            pearson_r(np.ones(10), np.arange(10))


class TestFcExpand:
    def test_duplicate_voxel_retained(self):
        vols, parc, blocks = simple_setup()
        vol = vols["s1"]
        # make every voxel of region 2 an exact copy of region 1's mean
        ref = vol.data[parc.labels == 1].mean(axis=0)
        data = vol.data.copy()
        data[parc.labels == 2] = ref
        vols = {"s1": make_volume(data)}
        sub_rois = {1: [tuple(v) for v in np.argwhere(parc.labels == 1)]}
        retained, skipped = fc_expand(vols, blocks, sub_rois, parc, 0.95)
        retained_parents = {r["parent_region"] for r in retained}
        assert 2 in retained_parents
        for r in retained:
            if r["parent_region"] == 2:
                assert r["r"] == pytest.approx(1.0)

    def test_boundary_not_retained(self):
        vols, parc, blocks = simple_setup(seed=3)
        sub_rois = {1: [tuple(v) for v in np.argwhere(parc.labels == 1)]}
        retained, _ = fc_expand(vols, blocks, sub_rois, parc, 0.95)
        for r in retained:
            assert r["r"] > 0.95  # strict inequality everywhere

    def test_independent_noise_never_retained(self):
        # 63 blocks x 5 points = 315 reference samples, as at full scale
        for seed in range(3):
            rng = np.random.default_rng(seed)
            sub_ref = rng.normal(size=315)
            noise = rng.normal(size=(1000, 315))
            nc = noise - noise.mean(axis=1, keepdims=True)
            sc = sub_ref - sub_ref.mean()
            r = (nc @ sc) / (np.linalg.norm(nc, axis=1)
                             * np.linalg.norm(sc))
            assert np.max(np.abs(r)) < 0.95

    def test_threshold_one_retains_nothing(self):
        vols, parc, blocks = simple_setup(seed=4)
        sub_rois = {1: [tuple(v) for v in np.argwhere(parc.labels == 1)]}
        retained, _ = fc_expand(vols, blocks, sub_rois, parc, 1.0)
        assert retained == []

    def test_low_threshold_retains_everything(self):
        vols, parc, blocks = simple_setup(seed=5)
        sub_rois = {1: [tuple(v) for v in np.argwhere(parc.labels == 1)]}
        retained, skipped = fc_expand(vols, blocks, sub_rois, parc, -0.999)
        n_candidates = int((parc.labels > 1).sum())
        assert len(retained) + skipped == n_candidates

    def test_characteristic_regions_excluded(self):
        vols, parc, blocks = simple_setup(seed=6)
        sub_rois = {1: [(0, 0, 0)], 2: [(1, 0, 0)]}
        retained, _ = fc_expand(vols, blocks, sub_rois, parc, -0.999)
        assert all(r["parent_region"] not in (1, 2) for r in retained)

    def test_reference_series_shape(self):
        vols, parc, blocks = simple_setup(n_blocks=3)
        series = vols["s1"].data[0, 0, 0]
        ref = reference_series(series, blocks, "stim")
        assert ref.shape == (15,)
        assert ref.min() >= 0 and ref.max() <= 1


class TestBuildAtlas:
    def _fabricate(self, n_sub, n_expanded_regions, voxels_per=1):
        dims = (20, 20, 10)
        labels = np.arange(np.prod(dims)).reshape(dims) % 300 + 1
        parc = Parcellation(labels=labels)
        sub_rois = {lab: [tuple(v) for v in
                          np.argwhere(labels == lab)[:voxels_per]]
                    for lab in range(1, n_sub + 1)}
        expanded = []
        for lab in range(n_sub + 1, n_sub + 1 + n_expanded_regions):
            for v in np.argwhere(labels == lab)[:voxels_per]:
                expanded.append({"voxel": tuple(v), "parent_region": lab})
        return sub_rois, expanded, parc

    def test_full_scale_positive_counts(self):
        # 26 characteristic regions + expansion into 76 others -> 102
        sub_rois, expanded, parc = self._fabricate(26, 76)
        atlas = build_atlas(sub_rois, expanded, parc, name="PEA")
        assert len(atlas.region_labels) == 102

    def test_full_scale_negative_counts(self):
        sub_rois, expanded, parc = self._fabricate(22, 55)
        atlas = build_atlas(sub_rois, expanded, parc, name="NEA")
        assert len(atlas.region_labels) == 77

    def test_empty_expansion(self):
        sub_rois, _, parc = self._fabricate(3, 0)
        atlas = build_atlas(sub_rois, [], parc)
        assert len(atlas.units) == 3
        assert all(u.provenance == "sub_roi" for u in atlas.units)

    def test_overlap_rejected(self):
        sub_rois, _, parc = self._fabricate(2, 0)
        dup = next(iter(sub_rois[1]))
        with pytest.raises(OverlapError):
            build_atlas(sub_rois, [{"voxel": dup, "parent_region": 9}], parc)

    def test_voxel_sets_disjoint(self):
        sub_rois, expanded, parc = self._fabricate(5, 4, voxels_per=3)
        atlas = build_atlas(sub_rois, expanded, parc)
        all_vox = [v for u in atlas.units for v in u.voxels]
        assert len(all_vox) == len(set(all_vox)) == atlas.n_voxels


class TestAtlasSeries:
    def test_single_voxel_unit(self):
        vol = make_volume(np.random.default_rng(0).normal(size=(3, 3, 3, 8)))
        atlas = AtlasSpec(name="a", units=(
            AtlasUnit(parent_label=1, voxels=((1, 2, 0),),
                      provenance="sub_roi"),),
            parcellation_digest="x")
        out = atlas_series(vol, atlas)
        assert np.array_equal(out[0].values, vol.data[1, 2, 0])

    def test_two_voxel_mean(self):
        data = np.zeros((2, 1, 1, 2))
        data[0, 0, 0] = [1, 2]
        data[1, 0, 0] = [3, 4]
        atlas = AtlasSpec(name="a", units=(
            AtlasUnit(parent_label=1, voxels=((0, 0, 0), (1, 0, 0)),
                      provenance="sub_roi"),),
            parcellation_digest="x")
        out = atlas_series(make_volume(data), atlas)
        assert np.array_equal(out[0].values, [2.0, 3.0])


class TestSerialization:
    def test_round_trip(self, tmp_path):
        labels = np.ones((2, 2, 2), dtype=np.int64)
        parc = Parcellation(labels=labels)
        atlas = build_atlas({1: [(0, 0, 0), (1, 1, 1)]}, [], parc,
                            name="PEA", params={"fc_threshold": 0.95})
        save_atlas(atlas, tmp_path / "a.json")
        back = load_atlas(tmp_path / "a.json", parc)
        assert back == atlas

    def test_digest_mismatch(self, tmp_path):
        parc1 = Parcellation(labels=np.ones((2, 2, 2), dtype=np.int64))
        parc2 = Parcellation(labels=np.full((2, 2, 2), 2, dtype=np.int64))
        atlas = build_atlas({1: [(0, 0, 0)]}, [], parc1)
        save_atlas(atlas, tmp_path / "a.json")
        with pytest.raises(DigestMismatch):
            load_atlas(tmp_path / "a.json", parc2)

    def test_minimal_handwritten_file(self, tmp_path):
        (tmp_path / "a.json").write_text(
            '{"name": "mini", "parcellation_digest": "d",'
            ' "units": [{"parent_label": 3, "provenance": "sub_roi",'
            ' "voxels": [[0, 0, 0]]}]}')
        atlas = load_atlas(tmp_path / "a.json")
        assert atlas.units[0].parent_label == 3
