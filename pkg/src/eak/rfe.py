"""Backward feature elimination ranked by fold-averaged squared SVM weights.

Per iteration: draw stratified folds (re-seeded from the master seed and the
iteration index), train a linear SVM per fold, square its weights, average
the squares across folds, and drop the lowest-scoring feature(s).  The kept
subset is the one at the global cross-validated accuracy maximum; accuracy
ties go to the smaller subset, score ties eliminate the largest feature id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, TooFewFolds
from .features import FeatureMatrix
from .svm import KernelSpec, TrainConfig, linear_weights, predict, \
    stratified_folds, train_svm


_M64 = (1 << 64) - 1


def _iteration_seed(master_seed: int, iteration: int) -> int:
    # splitmix64-style mix so per-iteration fold draws are independent
    z = (master_seed + iteration * 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D2495B8AA657C1) & _M64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RankingTable:
    feature_ids: tuple
    fold_scores: np.ndarray    # (k, n_features), c_i per fold
    mean_scores: np.ndarray    # (n_features,), fold average
    mean_accuracy: float
    iteration: int = 0


@dataclass(frozen=True)
class RfeTrace:
    records: tuple              # of dicts: surviving, eliminated, accuracy
    best_subset: tuple
    best_accuracy: float


def _rank_fold_loop(X: FeatureMatrix, k: int, cfg: TrainConfig, seed: int):
    if k < 2:
        raise TooFewFolds("ranking needs k >= 2 folds")
    assign, k = stratified_folds(X.labels, k, seed)
    kernel = KernelSpec(kind="linear")
    scores = np.empty((k, X.n_features))
    accs = np.empty(k)
    for fold in range(k):
        test = assign == fold
        train = ~test
        model = train_svm(X.values[train], X.labels[train], cfg, kernel, seed)
        w = linear_weights(model)
        scores[fold] = w * w
        accs[fold] = float((predict(model, X.values[test])
                            == X.labels[test]).mean())
    return scores, float(accs.mean())


def rank_scores(X: FeatureMatrix, k: int, cfg: TrainConfig = None,
                seed: int = 0, iteration: int = 0) -> RankingTable:
    cfg = cfg or TrainConfig()
    if X.n_features < 2:
        raise DataError("ranking needs at least 2 features")
    scores, acc = _rank_fold_loop(X, k, cfg, seed)
    return RankingTable(feature_ids=X.feature_ids, fold_scores=scores,
                        mean_scores=scores.mean(axis=0), mean_accuracy=acc,
                        iteration=iteration)


def _elimination_order(feature_ids, mean_scores):
    """Ascending by score; ties eliminate the largest feature id first."""
    order = sorted(range(len(feature_ids)),
                   key=lambda i: (mean_scores[i], _neg_key(feature_ids[i])))
    return order


class _neg_key:
    """Reverses comparison so larger feature ids sort first on ties."""

    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v

    def __lt__(self, other):
        return other.v < self.v


def svm_rfe(X: FeatureMatrix, k: int = 10, cfg: TrainConfig = None,
            schedule="one", seed: int = 0) -> RfeTrace:
    """Run elimination to exhaustion; keep the subset with peak CV accuracy.

    ``schedule`` is ``"one"`` (drop one feature per iteration) or a float
    fraction f in (0, 1) (drop max(1, floor(f * n_surviving)) per iteration).
    """
    cfg = cfg or TrainConfig()
    if X.n_features < 1:
        raise DataError("need at least one feature")
    current = X
    records = []
    iteration = 0
    while True:
        it_seed = _iteration_seed(seed, iteration)
        if current.n_features == 1:
            # no weights to rank; score the singleton subset directly
            from .svm import k_fold_cv
            acc, _, _ = k_fold_cv(current, k, cfg, KernelSpec("linear"),
                                  it_seed)
            records.append({"surviving": current.feature_ids,
                            "eliminated": None, "accuracy": acc})
            break
        table = rank_scores(current, k, cfg, it_seed, iteration)
        order = _elimination_order(table.feature_ids, table.mean_scores)
        if schedule == "one":
            n_drop = 1
        else:
            frac = float(schedule)
            if not (0 < frac < 1):
                raise DataError(f"bad elimination schedule {schedule!r}")
            n_drop = max(1, int(frac * current.n_features))
        n_drop = min(n_drop, current.n_features - 1)
        dropped = [table.feature_ids[i] for i in order[:n_drop]]
        records.append({"surviving": current.feature_ids,
                        "eliminated": tuple(dropped),
                        "accuracy": table.mean_accuracy})
        keep = [f for f in current.feature_ids if f not in set(dropped)]
        current = current.select_features(keep)
        iteration += 1
    # global max accuracy; ties -> fewest features (later record wins ties)
    best_i = 0
    for i, r in enumerate(records):
        if r["accuracy"] > records[best_i]["accuracy"] or (
                r["accuracy"] == records[best_i]["accuracy"]
                and len(r["surviving"]) < len(records[best_i]["surviving"])):
            best_i = i
    return RfeTrace(records=tuple(records),
                    best_subset=tuple(records[best_i]["surviving"]),
                    best_accuracy=float(records[best_i]["accuracy"]))


def two_stage_select(roi_matrix: FeatureMatrix, voxel_matrix_for,
                     k: int = 10, cfg: TrainConfig = None,
                     roi_schedule="one", voxel_schedule="one",
                     seed: int = 0):
    """ROI-level elimination, then voxel-level elimination inside survivors.

    ``voxel_matrix_for(roi_label)`` must return the voxel-granularity
    FeatureMatrix of that region.  Returns (characteristic_rois,
    {roi_label: surviving voxel ids}, stage1_trace, stage2_traces).
    """
    cfg = cfg or TrainConfig()
    stage1 = svm_rfe(roi_matrix, k, cfg, roi_schedule, seed)
    characteristic = list(stage1.best_subset)
    sub_rois = {}
    stage2 = {}
    for pos, roi in enumerate(characteristic):
        vm = voxel_matrix_for(roi)
        if vm.n_features == 0:
            continue
        trace = svm_rfe(vm, k, cfg, voxel_schedule,
                        _iteration_seed(seed, 1_000_000 + pos))
        stage2[roi] = trace
        if trace.best_subset:
            sub_rois[roi] = tuple(trace.best_subset)
    kept_rois = [r for r in characteristic if r in sub_rois]
    dropped = set(characteristic) - set(kept_rois)
    if dropped:
        import warnings
        warnings.warn(f"regions with empty voxel selection dropped: "
                      f"{sorted(dropped)}")
    return kept_rois, sub_rois, stage1, stage2


# ---------------------------------------------------------------------------
# serialization

def _ids_to_json(ids):
    return [list(f) if isinstance(f, tuple) else f for f in ids]


def save_trace(trace: RfeTrace, path) -> None:
    doc = {
        "best_subset": _ids_to_json(trace.best_subset),
        "best_accuracy": trace.best_accuracy,
        "iterations": [
            {"surviving": _ids_to_json(r["surviving"]),
             "eliminated": (_ids_to_json(r["eliminated"])
                            if r["eliminated"] else None),
             "accuracy": r["accuracy"]}
            for r in trace.records],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1),
                          encoding="utf-8")


def export_accuracy_curve(trace: RfeTrace, path) -> None:
    lines = ["n_features,accuracy"]
    for r in trace.records:
        lines.append(f"{len(r['surviving'])},{r['accuracy']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
