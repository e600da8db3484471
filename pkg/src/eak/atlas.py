"""Emotion-atlas assembly: characteristic sub-ROIs plus FC-expanded voxels.

The connectivity reference series of a unit is the concatenation, over all
pooled stimulus blocks, of the unit's Min-Max-normalized window samples
(the same normalization the feature stage applies).  Voxels in
non-characteristic regions whose best Pearson correlation with any sub-ROI
reference series strictly exceeds the threshold are retained once, under
the sub-ROI with maximal r.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DigestMismatch,
    DimensionMismatch,
    OverlapError,
    SchemaError,
)
from .features import minmax_normalize
from .volume import Parcellation, Series, Volume4D


@dataclass(frozen=True)
class AtlasUnit:
    parent_label: int
    voxels: tuple               # of (x, y, z)
    provenance: str             # "sub_roi" | "fc_expanded"

    def __post_init__(self):
        if self.provenance not in ("sub_roi", "fc_expanded"):
            raise SchemaError(f"bad provenance {self.provenance!r}")
        object.__setattr__(self, "voxels",
                           tuple(tuple(int(c) for c in v)
                                 for v in self.voxels))


@dataclass(frozen=True)
class AtlasSpec:
    name: str
    units: tuple
    parcellation_digest: str
    construction_params: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for u in self.units:
            for v in u.voxels:
                if v in seen:
                    raise OverlapError(f"voxel {v} appears in two units")
                seen.add(v)
        object.__setattr__(self, "units", tuple(self.units))

    @property
    def n_voxels(self):
        return sum(len(u.voxels) for u in self.units)

    @property
    def region_labels(self):
        return sorted({u.parent_label for u in self.units})


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac @ ac) * (bc @ bc))
    if denom == 0:
        raise DataError("correlation undefined for a zero-variance series")
    return float(np.clip((ac @ bc) / denom, -1.0, 1.0))


def reference_series(full_series, blocks, phase: str = "stim") -> np.ndarray:
    """Concatenated per-block normalized windows, in pooled block order."""
    out = []
    for b in blocks:
        idx = list(b.stim_volumes if phase == "stim" else b.rest_volumes)
        out.append(minmax_normalize(np.asarray(full_series)[idx]))
    return np.concatenate(out)


def fc_expand(vols, blocks, sub_rois, parc: Parcellation,
              threshold: float = 0.95, phase: str = "stim", threads: int = 1):
    """Scan all voxels of non-characteristic regions for strong FC.

    Parameters
    ----------
    vols : dict subject_id -> Volume4D
    blocks : pooled stimulus blocks of the target condition
    sub_rois : dict roi_label -> iterable of (x, y, z) voxel indices
    threshold : strict retention threshold on the best Pearson r

    Returns
    -------
    (retained, n_skipped) where retained is a list of dicts with keys
    voxel, parent_region, sub_roi, r -- in row-major voxel order.
    """
    if not (-1 < threshold <= 1):
        raise DataError("fc threshold must lie in (-1, 1]")
    if not sub_rois:
        raise DataError("need at least one characteristic sub-ROI")
    dims = parc.dims
    for v in vols.values():
        if v.dims[:3] != dims:
            raise DimensionMismatch("volume/parcellation grids differ")

    characteristic = set(sub_rois)
    cand_mask = (parc.labels > 0) & ~np.isin(parc.labels,
                                             sorted(characteristic))
    cand_idx = np.argwhere(cand_mask)  # row-major (C-order) by construction

    # per-subject block lists, preserving pooled order for concatenation
    sub_ref = _sub_roi_references(vols, blocks, sub_rois, phase)
    cand_ref = _voxel_references(vols, blocks, cand_idx, phase)

    # center rows; zero-variance candidates are skipped
    sd = cand_ref.std(axis=1)
    ok = sd > 0
    n_skipped = int((~ok).sum())
    cc = cand_ref - cand_ref.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(cc, axis=1)
    norms[norms == 0] = 1.0
    sc = sub_ref - sub_ref.mean(axis=1, keepdims=True)
    sub_norms = np.linalg.norm(sc, axis=1)
    if np.any(sub_norms == 0):
        raise DataError("a sub-ROI reference series has zero variance")
    R = (cc / norms[:, None]) @ (sc / sub_norms[:, None]).T
    np.clip(R, -1.0, 1.0, out=R)

    labels_sorted = sorted(sub_rois)
    retained = []
    best_j = np.argmax(R, axis=1)
    best_r = R[np.arange(R.shape[0]), best_j]
    for row in range(cand_idx.shape[0]):
        if not ok[row]:
            continue
        r = float(best_r[row])
        if r > threshold:
            voxel = tuple(int(c) for c in cand_idx[row])
            retained.append({
                "voxel": voxel,
                "parent_region": int(parc.labels[voxel]),
                "sub_roi": labels_sorted[int(best_j[row])],
                "r": r,
            })
    return retained, n_skipped


def _blocks_in_pooled_order(blocks):
    return list(blocks)


def _voxel_references(vols, blocks, coords, phase):
    """(n_voxels, n_blocks*window) matrix of normalized window samples."""
    chunks = []
    xs, ys, zs = coords[:, 0], coords[:, 1], coords[:, 2]
    for b in _blocks_in_pooled_order(blocks):
        idx = list(b.stim_volumes if phase == "stim" else b.rest_volumes)
        win = vols[b.subject_id].data[xs, ys, zs][:, idx]
        chunks.append(_minmax_rows(win))
    return np.concatenate(chunks, axis=1)


def _sub_roi_references(vols, blocks, sub_rois, phase):
    labels_sorted = sorted(sub_rois)
    chunks = []
    for b in _blocks_in_pooled_order(blocks):
        idx = list(b.stim_volumes if phase == "stim" else b.rest_volumes)
        rows = []
        for lab in labels_sorted:
            vox = np.asarray(list(sub_rois[lab]))
            series = vols[b.subject_id].data[vox[:, 0], vox[:, 1],
                                             vox[:, 2]].mean(axis=0)
            rows.append(series[idx])
        chunks.append(_minmax_rows(np.asarray(rows)))
    return np.concatenate(chunks, axis=1)


def _minmax_rows(m):
    lo = m.min(axis=1, keepdims=True)
    hi = m.max(axis=1, keepdims=True)
    span = hi - lo
    out = np.zeros_like(m, dtype=np.float64)
    nz = (span > 0).ravel()
    out[nz] = (m[nz] - lo[nz]) / span[nz]
    return out


def build_atlas(sub_rois, expanded, parc: Parcellation, name: str = "atlas",
                params: dict = None) -> AtlasSpec:
    """Combine sub-ROI units with FC-expanded voxels grouped by region."""
    params = dict(params or {})
    sub_voxels = {tuple(v) for voxs in sub_rois.values() for v in voxs}
    units = [AtlasUnit(parent_label=int(lab),
                       voxels=tuple(sorted(sub_rois[lab])),
                       provenance="sub_roi")
             for lab in sorted(sub_rois)]
    by_region = {}
    for item in expanded:
        voxel = tuple(item["voxel"])
        if voxel in sub_voxels:
            raise OverlapError(f"expanded voxel {voxel} already in a sub-ROI")
        by_region.setdefault(int(item["parent_region"]), []).append(voxel)
    for lab in sorted(by_region):
        if lab in sub_rois:
            raise OverlapError(
                f"expansion attributed to characteristic region {lab}")
        units.append(AtlasUnit(parent_label=lab,
                               voxels=tuple(sorted(by_region[lab])),
                               provenance="fc_expanded"))
    return AtlasSpec(name=name, units=tuple(units),
                     parcellation_digest=parc.digest(),
                     construction_params=params)


def atlas_series(vol: Volume4D, atlas: AtlasSpec):
    """Per-unit mean series over the unit's voxels."""
    out = []
    for u in atlas.units:
        vox = np.asarray(u.voxels)
        for c, n in zip(vox.max(axis=0), vol.dims[:3]):
            if c >= n:
                raise DimensionMismatch("atlas voxel outside volume grid")
        values = vol.data[vox[:, 0], vox[:, 1], vox[:, 2]].mean(axis=0)
        out.append(Series(values=values, sampling_interval_s=vol.tr_seconds))
    return out


# ---------------------------------------------------------------------------
# serialization

def save_atlas(atlas: AtlasSpec, path) -> None:
    doc = {
        "name": atlas.name,
        "parcellation_digest": atlas.parcellation_digest,
        "construction_params": atlas.construction_params,
        "units": [{"parent_label": u.parent_label,
                   "provenance": u.provenance,
                   "voxels": [list(v) for v in u.voxels]}
                  for u in atlas.units],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1),
                          encoding="utf-8")


def load_atlas(path, parc: Parcellation = None) -> AtlasSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        atlas = AtlasSpec(
            name=doc["name"],
            units=tuple(AtlasUnit(parent_label=int(u["parent_label"]),
                                  voxels=tuple(tuple(v) for v in u["voxels"]),
                                  provenance=u["provenance"])
                        for u in doc["units"]),
            parcellation_digest=doc["parcellation_digest"],
            construction_params=doc.get("construction_params", {}),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise SchemaError(f"bad atlas file {path}: {e}") from e
    if parc is not None and atlas.parcellation_digest != parc.digest():
        raise DigestMismatch(
            "atlas was built against a different parcellation")
    return atlas
