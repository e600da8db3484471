"""Soft-margin binary SVM trained by maximal-violating-pair SMO.

The dual is minimized directly:

    J(a) = 1/2 sum_hk y_h y_k a_h a_k K(x_h, x_k) - sum_k a_k
    s.t.  0 <= a_k <= C_k,   sum_k a_k y_k = 0

with per-class box limits C_k = C * class_weight(y_k), which is how
cost-sensitive misclassification penalties enter.  Working pairs are chosen
by maximal KKT violation; everything is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    NonLinearKernel,
    SingleClassInput,
    TooFewSamples,
)
from .features import FeatureMatrix


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"          # "linear" | "rbf"
    gamma: float = 1.0            # rbf only: K(u,v) = exp(-gamma ||u-v||^2)

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise DataError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not (np.isfinite(self.gamma)
                                       and self.gamma > 0):
            raise DataError("rbf gamma must be finite and positive")

    def gram(self, A, B):
        A = np.asarray(A, dtype=np.float64)
        B = np.asarray(B, dtype=np.float64)
        if self.kind == "linear":
            return A @ B.T
        sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :]
              - 2.0 * (A @ B.T))
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-self.gamma * sq)


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    class_weight_pos: float = 1.0
    class_weight_neg: float = 1.0
    kkt_tolerance: float = 1e-3
    max_passes: int = 200_000     # cap on SMO pair updates

    def __post_init__(self):
        if min(self.C, self.class_weight_pos, self.class_weight_neg,
               self.kkt_tolerance) <= 0 or self.max_passes <= 0:
            raise DataError("all TrainConfig fields must be positive")

    def box(self, y):
        """Upper box limit per sample given labels y."""
        y = np.asarray(y)
        return np.where(y > 0, self.C * self.class_weight_pos,
                        self.C * self.class_weight_neg)


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    sv_labels: np.ndarray
    bias: float
    kernel: KernelSpec
    n_features: int
    dual_objective: float
    converged: bool = True

    @property
    def n_support(self):
        return self.alphas.size


def train_svm(X, y=None, cfg: TrainConfig = None, kernel: KernelSpec = None,
              seed: int = 0) -> SvmModel:
    """Train on a FeatureMatrix (or raw arrays X, y)."""
    if isinstance(X, FeatureMatrix):
        data, labels = X.values, X.labels
    else:
        data, labels = np.asarray(X, dtype=np.float64), np.asarray(y)
    cfg = cfg or TrainConfig()
    kernel = kernel or KernelSpec()
    y = labels.astype(np.float64)
    n = data.shape[0]
    if n < 2 or len(np.unique(y)) < 2:
        raise SingleClassInput("need at least one sample of each class")

    K = kernel.gram(data, data)
    Q = (y[:, None] * y[None, :]) * K
    Qdiag = np.diag(Q).copy()
    C_up = cfg.box(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)            # grad J = Q a - 1
    tol = cfg.kkt_tolerance
    converged = False

    for _ in range(cfg.max_passes):
        yg = -y * grad
        up = ((y > 0) & (alpha < C_up - 1e-12)) | ((y < 0) & (alpha > 1e-12))
        low = ((y > 0) & (alpha > 1e-12)) | ((y < 0) & (alpha < C_up - 1e-12))
        if not up.any() or not low.any():
            converged = True
            break
        yg_up = np.where(up, yg, -np.inf)
        yg_low = np.where(low, yg, np.inf)
        i = int(np.argmax(yg_up))
        j = int(np.argmin(yg_low))
        m_val, M_val = yg_up[i], yg_low[j]
        if m_val - M_val <= tol:
            converged = True
            break
        # two-variable subproblem along the feasible direction
        # (d_i, d_j) = (y_i, -y_j) keeps sum_k y_k a_k constant
        d_i, d_j = y[i], -y[j]
        eta = Qdiag[i] + Qdiag[j] - 2.0 * y[i] * y[j] * Q[i, j]
        deriv = grad[i] * d_i + grad[j] * d_j  # dJ/dt at t=0, equals M - m < 0
        t_max = np.inf
        for idx, d in ((i, d_i), (j, d_j)):
            if d > 0:
                t_max = min(t_max, C_up[idx] - alpha[idx])
            else:
                t_max = min(t_max, alpha[idx])
        if eta > 1e-15:
            t = min(max(-deriv / eta, 0.0), t_max)
        else:
            t = t_max if deriv < 0 else 0.0
        if t <= 0.0:
            # numerically stalled at the box boundary
            converged = m_val - M_val <= tol
            break
        alpha[i] += t * d_i
        alpha[j] += t * d_j
        grad += t * d_i * Q[:, i] + t * d_j * Q[:, j]
    else:
        warnings.warn("SMO hit max_passes before satisfying KKT conditions")

    # bias from free support vectors, else midpoint of the violation gap
    yg = -y * grad
    free = (alpha > 1e-8) & (alpha < C_up - 1e-8)
    if free.any():
        b = float(np.mean(yg[free]))
    else:
        up = ((y > 0) & (alpha < C_up - 1e-12)) | ((y < 0) & (alpha > 1e-12))
        low = ((y > 0) & (alpha > 1e-12)) | ((y < 0) & (alpha < C_up - 1e-12))
        hi = yg[up].max() if up.any() else 0.0
        lo = yg[low].min() if low.any() else 0.0
        b = float((hi + lo) / 2.0)

    obj = float(0.5 * alpha @ (Q @ alpha) - alpha.sum())
    sv = alpha > 1e-10
    return SvmModel(support_vectors=data[sv].copy(), alphas=alpha[sv].copy(),
                    sv_labels=labels[sv].astype(np.int64), bias=b,
                    kernel=kernel, n_features=data.shape[1],
                    dual_objective=obj, converged=converged)


def decision_values(model: SvmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(
            f"query has {X.shape[1]} features, model expects "
            f"{model.n_features}")
    if model.n_support == 0:
        return np.full(X.shape[0], model.bias)
    K = model.kernel.gram(X, model.support_vectors)
    return K @ (model.alphas * model.sv_labels) + model.bias


def decision_value(model: SvmModel, x) -> float:
    return float(decision_values(model, np.asarray(x)[None, :])[0])


def predict(model: SvmModel, X) -> np.ndarray:
    d = decision_values(model, X)
    return np.where(d >= 0, 1, -1)  # sign(0) -> +1


def linear_weights(model: SvmModel) -> np.ndarray:
    """Explicit w for a linear-kernel model: w = sum_k a_k y_k x_k."""
    if model.kernel.kind != "linear":
        raise NonLinearKernel("weight extraction needs a linear kernel")
    if model.n_support == 0:
        return np.zeros(model.n_features)
    return (model.alphas * model.sv_labels) @ model.support_vectors


# ---------------------------------------------------------------------------
# cross-validation

def stratified_folds(labels, k: int, seed: int):
    """Seeded stratified fold assignment; returns a per-sample fold index."""
    y = np.asarray(labels)
    counts = {c: int((y == c).sum()) for c in np.unique(y)}
    min_count = min(counts.values())
    if k < 2:
        raise TooFewSamples("k must be >= 2")
    if min_count < k:
        warnings.warn(f"class with {min_count} samples < k={k}; lowering k")
        k = min_count
        if k < 2:
            raise TooFewSamples("a class has fewer than 2 samples")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    assign = np.empty(y.size, dtype=np.int64)
    for c in sorted(counts):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        for pos, sample in enumerate(idx):
            assign[sample] = pos % k
    return assign, k


def k_fold_cv(X: FeatureMatrix, k: int, cfg: TrainConfig,
              kernel: KernelSpec, seed: int):
    """Stratified k-fold CV; returns (mean_accuracy, models, assignments)."""
    assign, k = stratified_folds(X.labels, k, seed)
    accs, models = [], []
    for fold in range(k):
        test = assign == fold
        train = ~test
        model = train_svm(X.values[train], X.labels[train], cfg, kernel, seed)
        pred = predict(model, X.values[test])
        accs.append(float((pred == X.labels[test]).mean()))
        models.append(model)
    return float(np.mean(accs)), models, assign


# ---------------------------------------------------------------------------
# serialization

def save_model(model: SvmModel, path) -> None:
    doc = {
        "support_vectors": model.support_vectors.tolist(),
        "alphas": model.alphas.tolist(),
        "labels": model.sv_labels.tolist(),
        "bias": model.bias,
        "kernel": {"kind": model.kernel.kind, "gamma": model.kernel.gamma},
        "n_features": model.n_features,
        "dual_objective": model.dual_objective,
        "converged": model.converged,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_model(path) -> SvmModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return SvmModel(
        support_vectors=np.asarray(doc["support_vectors"], dtype=np.float64
                                   ).reshape(-1, doc["n_features"]),
        alphas=np.asarray(doc["alphas"], dtype=np.float64),
        sv_labels=np.asarray(doc["labels"], dtype=np.int64),
        bias=float(doc["bias"]),
        kernel=KernelSpec(**doc["kernel"]),
        n_features=int(doc["n_features"]),
        dual_objective=float(doc["dual_objective"]),
        converged=bool(doc["converged"]),
    )
