"""Atlas-based feature vectors and cost-sensitive RBF grid search.

The default grid is C in {0.25, 0.5, 1, 2, 4} and gamma in
{0.5, 1, 2, 4, 8, 15}; one stratified fold draw is shared by every
candidate so the comparison is free of fold noise.  The positive class is
"depressed"; undefined precision/recall/F collapse to 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alff import alff
from .atlas import AtlasSpec, atlas_series, pearson_r
from .errors import (
    DataError,
    EmptyConfusion,
    InsufficientUnits,
    TooShortForAlff,
)
from .features import FeatureMatrix, minmax_normalize
from .svm import KernelSpec, TrainConfig, predict, stratified_folds, train_svm
from .volume import Volume4D

DEFAULT_C_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
DEFAULT_GAMMA_GRID = (0.5, 1.0, 2.0, 4.0, 8.0, 15.0)

FEATURE_MODES = ("alff_per_unit", "mean_activation_per_unit",
                 "fc_upper_triangle")


def atlas_features(vol: Volume4D, atlas: AtlasSpec,
                   mode: str = "alff_per_unit",
                   band=(0.01, 0.08)) -> np.ndarray:
    """One feature vector per subject volume, derived from atlas units."""
    if mode not in FEATURE_MODES:
        raise DataError(f"unknown feature mode {mode!r}")
    series = atlas_series(vol, atlas)
    if mode == "alff_per_unit":
        if vol.dims[3] < 16:
            raise TooShortForAlff("ALFF features need >= 16 timepoints")
        return np.array([alff(s, band) for s in series])
    if mode == "mean_activation_per_unit":
        return np.array([float(minmax_normalize(s.values).mean())
                         for s in series])
    # fc_upper_triangle
    if len(series) < 2:
        raise InsufficientUnits("FC features need at least 2 atlas units")
    u = len(series)
    out = []
    for i in range(u):
        for j in range(i + 1, u):
            out.append(pearson_r(series[i].values, series[j].values))
    return np.array(out)


def metrics(confusion):
    """(accuracy, precision, recall, f_score) from (TP, FP, FN, TN)."""
    tp, fp, fn, tn = (int(v) for v in confusion)
    if min(tp, fp, fn, tn) < 0 or tp + fp + fn + tn == 0:
        raise EmptyConfusion("confusion counts must be non-negative, total>0")
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f_score = 2 * precision * recall / (precision + recall) \
        if precision + recall else 0.0
    return accuracy, precision, recall, f_score


@dataclass(frozen=True)
class GridSearchResult:
    entries: tuple              # of dicts per (C, gamma) candidate
    best: dict
    seed: int
    fold_assignments: np.ndarray

    @property
    def best_params(self):
        return self.best["C"], self.best["gamma"]


def grid_search_cv(X: FeatureMatrix, C_grid=DEFAULT_C_GRID,
                   gamma_grid=DEFAULT_GAMMA_GRID, class_weights="auto",
                   k: int = 10, seed: int = 0,
                   kkt_tolerance: float = 1e-3) -> GridSearchResult:
    """Evaluate every (C, gamma) with one shared stratified fold draw."""
    if not C_grid or not gamma_grid:
        raise DataError("grids must be non-empty")
    y = X.labels
    n_pos = int((y == 1).sum())
    n_neg = int((y == -1).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("grid search needs both classes")
    if class_weights == "auto":
        # misclassifying the positive (depressed) class is the costly error
        w_pos, w_neg = n_neg / n_pos, 1.0
    else:
        w_pos, w_neg = class_weights
    assign, k = stratified_folds(y, k, seed)
    entries = []
    for C in C_grid:
        for gamma in gamma_grid:
            cfg = TrainConfig(C=C, class_weight_pos=w_pos,
                              class_weight_neg=w_neg,
                              kkt_tolerance=kkt_tolerance)
            kernel = KernelSpec(kind="rbf", gamma=gamma)
            fold_confusions = []
            fold_accs = []
            for fold in range(k):
                test = assign == fold
                train = ~test
                model = train_svm(X.values[train], y[train], cfg, kernel,
                                  seed)
                pred = predict(model, X.values[test])
                truth = y[test]
                tp = int(((pred == 1) & (truth == 1)).sum())
                fp = int(((pred == 1) & (truth == -1)).sum())
                fn = int(((pred == -1) & (truth == 1)).sum())
                tn = int(((pred == -1) & (truth == -1)).sum())
                fold_confusions.append((tp, fp, fn, tn))
                fold_accs.append((tp + tn) / max(1, tp + fp + fn + tn))
            pooled = tuple(int(sum(c[i] for c in fold_confusions))
                           for i in range(4))
            acc, prec, rec, f1 = metrics(pooled)
            entries.append({
                "C": float(C), "gamma": float(gamma),
                "mean_accuracy": float(np.mean(fold_accs)),
                "accuracy": acc, "precision": prec, "recall": rec,
                "f_score": f1, "fold_confusions": fold_confusions,
            })
    best = max(entries,
               key=lambda e: (e["mean_accuracy"], -e["C"], -e["gamma"]))
    return GridSearchResult(entries=tuple(entries), best=best, seed=seed,
                            fold_assignments=assign)


# ---------------------------------------------------------------------------
# serialization

def save_grid_result(res: GridSearchResult, path) -> None:
    doc = {
        "seed": res.seed,
        "fold_assignments": [int(v) for v in res.fold_assignments],
        "best": {k: v for k, v in res.best.items()
                 if k != "fold_confusions"},
        "entries": [
            {k: (v if k != "fold_confusions" else [list(c) for c in v])
             for k, v in e.items()} for e in res.entries],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1),
                          encoding="utf-8")


def export_grid_csv(res: GridSearchResult, path) -> None:
    lines = ["C,gamma,mean_accuracy,accuracy,precision,recall,f_score"]
    for e in res.entries:
        lines.append(f"{e['C']!r},{e['gamma']!r},{e['mean_accuracy']!r},"
                     f"{e['accuracy']!r},{e['precision']!r},{e['recall']!r},"
                     f"{e['f_score']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_metric_bars(results: dict, path) -> None:
    """Bar-chart data: one row of the four metrics per template name."""
    lines = ["template,accuracy,precision,recall,f_score"]
    for name in sorted(results):
        b = results[name].best
        lines.append(f"{name},{b['accuracy']!r},{b['precision']!r},"
                     f"{b['recall']!r},{b['f_score']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
