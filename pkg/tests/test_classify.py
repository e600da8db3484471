import numpy as np
import pytest

from eak.atlas import AtlasSpec, AtlasUnit
from eak.classify import (
    DEFAULT_C_GRID,
    DEFAULT_GAMMA_GRID,
    atlas_features,
    export_grid_csv,
    export_metric_bars,
    grid_search_cv,
    metrics,
    save_grid_result,
)
from eak.errors import DataError, EmptyConfusion, InsufficientUnits
from eak.features import FeatureMatrix

from conftest import make_volume


def matrix_from(X, y):
    X = np.asarray(X, dtype=np.float64)
    return FeatureMatrix(values=X, labels=np.asarray(y),
                         feature_ids=tuple(range(X.shape[1])),
                         sample_ids=tuple(("s", i, "x")
                                          for i in range(X.shape[0])))


def separable_matrix(n=40, m=3, gap=6.0, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    X[: n // 2, 0] += gap
    X[n // 2:, 0] -= gap
    y = np.array([1] * (n // 2) + [-1] * (n // 2))
    return matrix_from(X, y)


def unit_atlas(n_units, voxels_per=1, dims=(6, 6, 6)):
    units = []
    flat = [(x, y, z) for x in range(dims[0]) for y in range(dims[1])
            for z in range(dims[2])]
    i = 0
    for u in range(n_units):
        vox = tuple(flat[i:i + voxels_per])
        i += voxels_per
        units.append(AtlasUnit(parent_label=u + 1, voxels=vox,
                               provenance="sub_roi"))
    return AtlasSpec(name="toy", units=tuple(units),
                     parcellation_digest="d")


class TestMetrics:
    def test_perfect(self):
        assert metrics((5, 0, 0, 5)) == (1.0, 1.0, 1.0, 1.0)

    def test_mixed(self):
        acc, prec, rec, f1 = metrics((3, 1, 2, 4))
        assert acc == pytest.approx(0.7)
        assert prec == pytest.approx(0.75)
        assert rec == pytest.approx(0.6)
        assert f1 == pytest.approx(2 / 3)

    def test_never_predicts_positive(self):
        acc, prec, rec, f1 = metrics((0, 0, 5, 5))
        assert (prec, rec, f1) == (0.0, 0.0, 0.0)
        assert acc == 0.5

    def test_empty_rejected(self):
        with pytest.raises(EmptyConfusion):
            metrics((0, 0, 0, 0))


class TestAtlasFeatures:
    def test_alff_per_unit_length(self):
        vol = make_volume(np.random.default_rng(0).normal(size=(6, 6, 6, 50)))
        feats = atlas_features(vol, unit_atlas(4), mode="alff_per_unit")
        assert feats.shape == (4,)
        assert np.all(feats > 0)

    def test_mean_activation_bounded(self):
        vol = make_volume(np.random.default_rng(1).normal(size=(6, 6, 6, 20)))
        feats = atlas_features(vol, unit_atlas(3),
                               mode="mean_activation_per_unit")
        assert feats.shape == (3,)
        assert feats.min() >= 0 and feats.max() <= 1

    def test_fc_length_is_u_choose_2(self):
        vol = make_volume(np.random.default_rng(2).normal(size=(6, 6, 6, 30)))
        for u in (2, 5, 8):
            feats = atlas_features(vol, unit_atlas(u),
                                   mode="fc_upper_triangle")
            assert feats.shape == (u * (u - 1) // 2,)
            assert np.all(np.abs(feats) <= 1.0)

    def test_fc_single_unit_rejected(self):
        vol = make_volume(np.random.default_rng(3).normal(size=(6, 6, 6, 30)))
        with pytest.raises(InsufficientUnits):
            atlas_features(vol, unit_atlas(1), mode="fc_upper_triangle")

    def test_unknown_mode(self):
        vol = make_volume(np.zeros((6, 6, 6, 20)))
        with pytest.raises(DataError):
            atlas_features(vol, unit_atlas(2), mode="nope")


class TestGridSearch:
    def test_full_grid_size(self):
        res = grid_search_cv(separable_matrix(), k=5, seed=0)
        assert len(res.entries) == len(DEFAULT_C_GRID) * len(DEFAULT_GAMMA_GRID)
        assert len(res.entries) == 30

    def test_separable_reaches_high_accuracy(self):
        res = grid_search_cv(separable_matrix(), k=5, seed=0)
        assert res.best["mean_accuracy"] >= 0.9

    def test_single_candidate(self):
        res = grid_search_cv(separable_matrix(), C_grid=(1.0,),
                             gamma_grid=(2.0,), k=5, seed=0)
        assert res.best_params == (1.0, 2.0)
        assert len(res.entries) == 1

    def test_tie_prefers_smallest_c_then_gamma(self):
        # compact separable data: every candidate scores 1.0, so the
        # tie rule decides
        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 3)) * 0.1
        X[:20, 0] += 1.0
        X[20:, 0] -= 1.0
        y = np.array([1] * 20 + [-1] * 20)
        res = grid_search_cv(matrix_from(X, y),
                             C_grid=(4.0, 0.5, 2.0),
                             gamma_grid=(2.0, 0.5), k=5, seed=0)
        accs = {e["mean_accuracy"] for e in res.entries}
        assert accs == {1.0}
        assert res.best_params == (0.5, 0.5)

    def test_folds_shared_across_candidates(self):
        X = separable_matrix()
        res = grid_search_cv(X, C_grid=(0.5, 2.0), gamma_grid=(1.0,),
                             k=5, seed=3)
        # per-fold test counts derive only from the shared assignment
        for e in res.entries:
            totals = [sum(c) for c in e["fold_confusions"]]
            expected = [int((res.fold_assignments == f).sum())
                        for f in range(len(totals))]
            assert totals == expected

    def test_auto_weights_require_both_classes(self):
        X = matrix_from(np.random.default_rng(4).normal(size=(10, 2)),
                        [1] * 10)
        with pytest.raises(DataError):
            grid_search_cv(X, k=2, seed=0)

    def test_shuffled_labels_near_chance(self):
        accs = []
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            X = rng.random((40, 4))
            y = rng.permutation([1] * 20 + [-1] * 20)
            res = grid_search_cv(matrix_from(X, y), C_grid=(1.0,),
                                 gamma_grid=(2.0,), k=5, seed=seed)
            accs.append(res.best["mean_accuracy"])
        assert 0.35 <= np.mean(accs) <= 0.75

    def test_reproducible(self):
        X = separable_matrix(seed=9)
        r1 = grid_search_cv(X, C_grid=(1.0,), gamma_grid=(1.0,), k=5, seed=5)
        r2 = grid_search_cv(X, C_grid=(1.0,), gamma_grid=(1.0,), k=5, seed=5)
        assert r1.entries == r2.entries


class TestExports:
    def test_files(self, tmp_path):
        res = grid_search_cv(separable_matrix(), C_grid=(1.0,),
                             gamma_grid=(1.0, 2.0), k=5, seed=0)
        save_grid_result(res, tmp_path / "grid.json")
        export_grid_csv(res, tmp_path / "grid.csv")
        export_metric_bars({"PEA": res, "NEA": res}, tmp_path / "bars.csv")
        lines = (tmp_path / "grid.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        bars = (tmp_path / "bars.csv").read_text().strip().splitlines()
        assert bars[1].startswith("NEA,") and bars[2].startswith("PEA,")
