"""Feature matrices from blocks: per-window Min-Max normalization + mean.

Each (block, phase) pair contributes one row; each analysis unit (region
label or voxel index) one column.  Normalization is taken over the five
window samples of that unit only, so a constant window encodes to zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionMismatch

PHASES = ("stim", "rest")


@dataclass(frozen=True)
class FeatureMatrix:
    """samples x features matrix with +/-1 labels and unit identifiers."""

    values: np.ndarray          # (n_samples, n_features) float64
    labels: np.ndarray          # (n_samples,) in {+1, -1}
    feature_ids: tuple
    sample_ids: tuple           # of (subject, block_index, phase)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if v.ndim != 2:
            raise DimensionMismatch("values must be 2-D")
        if y.shape != (v.shape[0],) or not np.all(np.isin(y, (-1, 1))):
            raise DataError("labels must be one +/-1 per row")
        if not np.all(np.isfinite(v)):
            raise DataError("matrix values must be finite")
        fids = tuple(self.feature_ids)
        if len(fids) != v.shape[1] or len(set(fids)) != len(fids):
            raise DataError("feature_ids must be unique, one per column")
        sids = tuple(tuple(s) for s in self.sample_ids)
        if len(sids) != v.shape[0]:
            raise DataError("sample_ids must have one entry per row")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_ids", fids)
        object.__setattr__(self, "sample_ids", sids)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1]

    def select_features(self, feature_ids):
        idx = [self.feature_ids.index(f) for f in feature_ids]
        return FeatureMatrix(values=self.values[:, idx], labels=self.labels,
                             feature_ids=tuple(feature_ids),
                             sample_ids=self.sample_ids)


def minmax_normalize(values):
    """(v - min) / (max - min); a constant input maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def block_feature(series_values, block, phase, shared_minmax=False):
    """Mean of the Min-Max-normalized window samples of one unit.

    By default min and max come from the phase window alone.  With
    ``shared_minmax`` they come from the union of the block's stimulus
    and rest windows, which preserves the amplitude contrast between the
    two phases (a flat activation shift survives normalization).
    """
    if phase not in PHASES:
        raise DataError(f"phase must be one of {PHASES}")
    series = np.asarray(series_values, dtype=np.float64)
    idx = block.stim_volumes if phase == "stim" else block.rest_volumes
    window = series[list(idx)]
    if not shared_minmax:
        return float(minmax_normalize(window).mean())
    both = series[list(block.stim_volumes) + list(block.rest_volumes)]
    lo, hi = both.min(), both.max()
    if hi == lo:
        return 0.0
    return float(((window - lo) / (hi - lo)).mean())


def assemble_matrix(blocks, units, series_for, shared_minmax=False):
    """Build the samples x units matrix for a list of pooled blocks.

    ``series_for(subject_id, unit_id)`` must return the unit's full time
    series for that subject.  Rows come in (block, stim) then (block, rest)
    order per block; stim rows are labeled +1, rest rows -1.
    """
    if not blocks or not units:
        raise DataError("need at least one block and one unit")
    units = tuple(units)
    rows, labels, sample_ids = [], [], []
    series_cache = {}
    for bi, block in enumerate(blocks):
        cols = []
        for u in units:
            key = (block.subject_id, u)
            if key not in series_cache:
                series_cache[key] = np.asarray(
                    series_for(block.subject_id, u), dtype=np.float64)
            cols.append(series_cache[key])
        for phase, lab in (("stim", 1), ("rest", -1)):
            rows.append([block_feature(c, block, phase, shared_minmax)
                         for c in cols])
            labels.append(lab)
            sample_ids.append((block.subject_id, bi, phase))
    return FeatureMatrix(values=np.array(rows), labels=np.array(labels),
                         feature_ids=units, sample_ids=tuple(sample_ids))


# ---------------------------------------------------------------------------
# serialization

def _fid_to_json(fid):
    return list(fid) if isinstance(fid, tuple) else fid


def _fid_from_json(fid):
    return tuple(fid) if isinstance(fid, list) else fid


def save_matrix(m: FeatureMatrix, path) -> None:
    """Binary cache: JSON header + row-major float32 payload."""
    path = Path(path)
    data_file = path.with_suffix(path.suffix + ".f32").name
    header = {
        "rows": m.n_samples,
        "cols": m.n_features,
        "labels": [int(v) for v in m.labels],
        "feature_ids": [_fid_to_json(f) for f in m.feature_ids],
        "sample_ids": [list(s) for s in m.sample_ids],
        "data_file": data_file,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(header, f, sort_keys=True)
    (path.parent / data_file).write_bytes(
        m.values.astype("<f4").ravel(order="C").tobytes())


def load_matrix(path) -> FeatureMatrix:
    path = Path(path)
    header = json.loads(path.read_text(encoding="utf-8"))
    raw = np.frombuffer((path.parent / header["data_file"]).read_bytes(),
                        dtype="<f4")
    rows, cols = header["rows"], header["cols"]
    if raw.size != rows * cols:
        raise DimensionMismatch("matrix payload size mismatch")
    return FeatureMatrix(
        values=raw.astype(np.float64).reshape(rows, cols),
        labels=np.asarray(header["labels"]),
        feature_ids=tuple(_fid_from_json(f) for f in header["feature_ids"]),
        sample_ids=tuple(tuple(s) for s in header["sample_ids"]),
    )


def export_csv(m: FeatureMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["label"] + [str(fid) for fid in m.feature_ids])
        for y, row in zip(m.labels, m.values):
            w.writerow([int(y)] + [repr(float(v)) for v in row])
