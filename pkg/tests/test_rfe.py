import numpy as np
import pytest

from eak.errors import TooFewFolds
from eak.features import FeatureMatrix
from eak.rfe import (
    export_accuracy_curve,
    rank_scores,
    save_trace,
    svm_rfe,
    two_stage_select,
)
from eak.svm import TrainConfig

CFG = TrainConfig(C=1.0)


def matrix_from(X, y, feature_ids=None):
    X = np.asarray(X, dtype=np.float64)
    fids = tuple(feature_ids) if feature_ids is not None \
        else tuple(range(X.shape[1]))
    return FeatureMatrix(values=X, labels=np.asarray(y), feature_ids=fids,
                         sample_ids=tuple(("s", i, "x")
                                          for i in range(X.shape[0])))


def planted_matrix(n=60, m=10, informative=(0,), effect=1.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.array([1] * (n // 2) + [-1] * (n // 2))
    X = rng.normal(size=(n, m))
    for f in informative:
        X[:, f] += effect * y / 2.0
    return matrix_from(X, y)


class TestRankScores:
    def test_informative_feature_ranks_first(self):
        m = planted_matrix(informative=(3,), effect=3.0, seed=1)
        table = rank_scores(m, k=5, cfg=CFG, seed=7)
        assert int(np.argmax(table.mean_scores)) == 3

    def test_mean_is_fold_average(self):
        m = planted_matrix(seed=2)
        table = rank_scores(m, k=5, cfg=CFG, seed=0)
        assert np.allclose(table.mean_scores,
                           table.fold_scores.mean(axis=0), atol=0)
        assert np.all(table.fold_scores >= 0)

    def test_duplicated_columns_tie(self):
        rng = np.random.default_rng(3)
        col = rng.normal(size=30)
        y = np.array([1] * 15 + [-1] * 15)
        X = np.column_stack([col, col, rng.normal(size=30)])
        table = rank_scores(matrix_from(X, y), k=5, cfg=CFG, seed=0)
        assert abs(table.mean_scores[0] - table.mean_scores[1]) < 1e-9

    def test_single_fold_rejected(self):
        with pytest.raises(TooFewFolds):
            rank_scores(planted_matrix(), k=1, cfg=CFG, seed=0)


class TestSvmRfe:
    def test_planted_features_survive(self):
        hits = 0
        for seed in range(5):
            m = planted_matrix(n=126, m=10, informative=(2, 7), effect=3.0,
                               seed=seed)
            trace = svm_rfe(m, k=10, cfg=CFG, seed=seed)
            if {2, 7} <= set(trace.best_subset):
                hits += 1
        assert hits >= 4

    def test_single_feature_identity(self):
        m = planted_matrix(m=1, informative=(0,), effect=3.0)
        trace = svm_rfe(m, k=5, cfg=CFG, seed=0)
        assert len(trace.records) == 1
        assert trace.best_subset == (0,)

    def test_identical_features_tie_rule(self):
        # all columns equal: ranking ties eliminate the largest id first
        col = np.concatenate([np.ones(10), -np.ones(10)])
        X = np.column_stack([col] * 4)
        y = np.array([1] * 10 + [-1] * 10)
        trace = svm_rfe(matrix_from(X, y), k=5, cfg=CFG, seed=0)
        eliminated = [r["eliminated"][0] for r in trace.records
                      if r["eliminated"]]
        assert eliminated == [3, 2, 1]

    def test_eliminated_never_reappear(self):
        m = planted_matrix(n=40, m=8, seed=4)
        trace = svm_rfe(m, k=5, cfg=CFG, seed=0)
        gone = set()
        for r in trace.records:
            assert not (gone & set(r["surviving"]))
            if r["eliminated"]:
                gone |= set(r["eliminated"])

    def test_best_at_least_full_set(self):
        m = planted_matrix(n=40, m=8, informative=(0,), effect=2.0, seed=5)
        trace = svm_rfe(m, k=5, cfg=CFG, seed=0)
        assert trace.best_accuracy >= trace.records[0]["accuracy"]
        assert trace.best_accuracy == max(r["accuracy"]
                                          for r in trace.records)

    def test_bitwise_repeatable(self):
        m = planted_matrix(n=40, m=6, seed=6)
        t1 = svm_rfe(m, k=5, cfg=CFG, seed=99)
        t2 = svm_rfe(m, k=5, cfg=CFG, seed=99)
        assert t1 == t2

    def test_fraction_schedule(self):
        m = planted_matrix(n=40, m=20, informative=(0,), effect=3.0, seed=7)
        trace = svm_rfe(m, k=5, cfg=CFG, schedule=0.25, seed=0)
        sizes = [len(r["surviving"]) for r in trace.records]
        assert sizes[0] == 20 and sizes[1] == 15
        assert sizes[-1] == 1


class TestTwoStage:
    def test_single_roi_reduces_to_plain_rfe(self):
        roi = planted_matrix(n=40, m=1, informative=(0,), effect=3.0,
                             seed=8)
        vox = planted_matrix(n=40, m=4, informative=(1,), effect=3.0, seed=9)

        kept, sub_rois, stage1, stage2 = two_stage_select(
            roi, lambda label: vox, k=5, cfg=CFG, seed=0)
        assert kept == [0]
        assert 1 in sub_rois[0]

    def test_planted_regions_recovered(self):
        # 6 ROI columns, 2 informative; voxel matrices inherit the signal
        roi = planted_matrix(n=60, m=6, informative=(1, 4), effect=3.0,
                             seed=10)

        def voxel_matrix_for(label):
            eff = 3.0 if label in (1, 4) else 0.0
            vm = planted_matrix(n=60, m=5, informative=(0, 1), effect=eff,
                                seed=100 + label)
            return FeatureMatrix(
                values=vm.values, labels=vm.labels,
                feature_ids=tuple((label, 0, j) for j in range(5)),
                sample_ids=vm.sample_ids)

        kept, sub_rois, _, _ = two_stage_select(
            roi, voxel_matrix_for, k=5, cfg=CFG, seed=3)
        assert {1, 4} & set(kept)
        for label in kept:
            assert len(sub_rois[label]) >= 1


class TestExport:
    def test_trace_files(self, tmp_path):
        m = planted_matrix(n=30, m=4, seed=11)
        trace = svm_rfe(m, k=3, cfg=CFG, seed=0)
        save_trace(trace, tmp_path / "trace.json")
        export_accuracy_curve(trace, tmp_path / "curve.csv")
        assert (tmp_path / "trace.json").exists()
        lines = (tmp_path / "curve.csv").read_text().strip().splitlines()
        assert lines[0] == "n_features,accuracy"
        assert len(lines) == len(trace.records) + 1
