"""4D volumes, parcellations and series extraction.

Two on-disk formats are supported for volumes:

* a read-only NIfTI-1 subset (single ``.nii``, uncompressed, little-endian,
  uint8/int16/float32, scaling applied when scl_slope is nonzero);
* "raw-json", the canonical round-trip format: a UTF-8 JSON header next to a
  little-endian float32 payload (x fastest-varying, t slowest).

All loaded data is promoted to float64 and must be finite.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeader,
    DataError,
    DimensionMismatch,
    EmptyRegion,
    NonIntegerLabels,
    OutOfBounds,
    UnknownLabel,
    UnsupportedDatatype,
)

NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}


@dataclass(frozen=True)
class Series:
    """An evenly sampled scalar time series."""

    values: np.ndarray
    sampling_interval_s: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise DataError("series must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(v)):
            raise DataError("series contains non-finite values")
        if not self.sampling_interval_s > 0:
            raise DataError("sampling interval must be positive")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class WorldCoord:
    x_mm: float
    y_mm: float
    z_mm: float

    def as_tuple(self):
        return (self.x_mm, self.y_mm, self.z_mm)


@dataclass(frozen=True)
class Volume4D:
    """X*Y*Z*T scalar grid with voxel geometry and a grid-to-world affine."""

    data: np.ndarray  # (nx, ny, nz, nt) float64
    voxel_size_mm: tuple
    tr_seconds: float
    affine: np.ndarray  # 4x4

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 4 or min(d.shape) < 1:
            raise DimensionMismatch(f"expected 4-D data, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise DataError("volume data contains NaN/Inf")
        vs = tuple(float(s) for s in self.voxel_size_mm)
        if len(vs) != 3 or any(s <= 0 for s in vs):
            raise DataError("voxel_size_mm must be three positive reals")
        if not self.tr_seconds > 0:
            raise DataError("tr_seconds must be positive")
        a = np.asarray(self.affine, dtype=np.float64)
        if a.shape != (4, 4) or abs(np.linalg.det(a[:3, :3])) < 1e-12:
            raise DataError("affine must be 4x4 with invertible upper-left 3x3")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "voxel_size_mm", vs)
        object.__setattr__(self, "tr_seconds", float(self.tr_seconds))
        object.__setattr__(self, "affine", a)

    @property
    def dims(self):
        return self.data.shape

    @property
    def voxel_volume_mm3(self):
        sx, sy, sz = self.voxel_size_mm
        return sx * sy * sz


@dataclass(frozen=True)
class Parcellation:
    """Integer labelling of voxels into named regions; 0 is background."""

    labels: np.ndarray  # (nx, ny, nz) int
    label_names: dict = field(default_factory=dict)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise DimensionMismatch(f"expected 3-D labels, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            flab = np.asarray(lab, dtype=np.float64)
            if not np.all(flab == np.round(flab)):
                raise NonIntegerLabels("parcellation contains non-integer values")
            lab = flab.astype(np.int64)
        if lab.min() < 0:
            raise NonIntegerLabels("parcellation labels must be non-negative")
        names = dict(self.label_names)
        for k in np.unique(lab):
            k = int(k)
            if k != 0 and k not in names:
                names[k] = f"region_{k}"
        object.__setattr__(self, "labels", lab.astype(np.int64))
        object.__setattr__(self, "label_names", names)

    @property
    def dims(self):
        return self.labels.shape

    def region_labels(self):
        u = np.unique(self.labels)
        return [int(k) for k in u if k != 0]

    def digest(self):
        h = hashlib.sha256()
        h.update(np.asarray(self.dims, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype=np.int64).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# raw-json container

def save_volume(vol: Volume4D, path) -> None:
    """Write a volume in the raw-json container (header + .f32 payload)."""
    path = Path(path)
    data_file = path.with_suffix(path.suffix + ".f32").name
    header = {
        "dims": list(vol.dims),
        "voxel_size_mm": list(vol.voxel_size_mm),
        "tr_seconds": vol.tr_seconds,
        "affine": [float(v) for v in vol.affine.ravel()],
        "data_file": data_file,
    }
    payload = vol.data.astype("<f4").ravel(order="F").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(header, f, sort_keys=True)
    (path.parent / data_file).write_bytes(payload)


def _load_raw_json(path) -> Volume4D:
    path = Path(path)
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
        dims = tuple(int(d) for d in header["dims"])
        affine = np.asarray(header["affine"], dtype=np.float64).reshape(4, 4)
        data_file = path.parent / header["data_file"]
        raw = np.frombuffer(data_file.read_bytes(), dtype="<f4")
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise CorruptHeader(f"bad raw-json header in {path}: {e}") from e
    if len(dims) != 4:
        raise CorruptHeader(f"raw-json dims must have 4 entries, got {dims}")
    n = int(np.prod(dims))
    if raw.size != n:
        raise DimensionMismatch(
            f"payload holds {raw.size} values, header declares {n}")
    data = raw.astype(np.float64).reshape(dims, order="F")
    return Volume4D(
        data=data,
        voxel_size_mm=tuple(header["voxel_size_mm"]),
        tr_seconds=float(header["tr_seconds"]),
        affine=affine,
    )


# ---------------------------------------------------------------------------
# NIfTI-1 subset

def _load_nifti1(path) -> Volume4D:
    blob = Path(path).read_bytes()
    if len(blob) < 348:
        raise CorruptHeader("file shorter than a NIfTI-1 header")
    sizeof_hdr = struct.unpack_from("<i", blob, 0)[0]
    if sizeof_hdr != 348:
        raise CorruptHeader(
            f"sizeof_hdr={sizeof_hdr}; only little-endian NIfTI-1 is supported")
    magic = blob[344:348]
    if magic != b"n+1\x00":
        raise CorruptHeader(f"bad magic {magic!r}; expected single-file 'n+1'")
    dim = struct.unpack_from("<8h", blob, 40)
    datatype = struct.unpack_from("<h", blob, 70)[0]
    pixdim = struct.unpack_from("<8f", blob, 76)
    vox_offset = struct.unpack_from("<f", blob, 108)[0]
    scl_slope, scl_inter = struct.unpack_from("<2f", blob, 112)
    sform_code = struct.unpack_from("<h", blob, 254)[0]
    srow = np.array(struct.unpack_from("<12f", blob, 280), dtype=np.float64)

    ndim = dim[0]
    if ndim not in (3, 4):
        raise CorruptHeader(f"unsupported number of dimensions: {ndim}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    nt = dim[4] if ndim == 4 and dim[4] > 0 else 1
    if min(nx, ny, nz) < 1:
        raise CorruptHeader(f"bad spatial dims {(nx, ny, nz)}")
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedDatatype(f"NIfTI datatype code {datatype}")
    dtype = np.dtype(NIFTI_DTYPES[datatype]).newbyteorder("<")

    offset = int(vox_offset)
    if offset < 352:
        raise CorruptHeader(f"vox_offset {offset} < 352")
    n = nx * ny * nz * nt
    body = blob[offset:offset + n * dtype.itemsize]
    if len(body) != n * dtype.itemsize:
        raise DimensionMismatch("data section truncated")
    data = np.frombuffer(body, dtype=dtype).astype(np.float64)
    if scl_slope != 0.0:
        data = data * scl_slope + scl_inter
    data = data.reshape((nx, ny, nz, nt), order="F")
    if not np.all(np.isfinite(data)):
        raise DataError("NIfTI data contains NaN/Inf")

    voxel_size = tuple(abs(p) if p != 0 else 1.0 for p in pixdim[1:4])
    tr = pixdim[4] if pixdim[4] > 0 else 1.0
    if sform_code > 0:
        affine = np.vstack([srow.reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])
    else:
        affine = np.diag([voxel_size[0], voxel_size[1], voxel_size[2], 1.0])
    return Volume4D(data=data, voxel_size_mm=voxel_size, tr_seconds=tr,
                    affine=affine)


def load_volume(path, format: str = "auto") -> Volume4D:
    """Load a 4D volume from ``nifti1`` or ``raw-json`` (``auto`` sniffs)."""
    path = Path(path)
    if format == "auto":
        format = "nifti1" if path.suffix == ".nii" else "raw-json"
    if format == "nifti1":
        return _load_nifti1(path)
    if format == "raw-json":
        return _load_raw_json(path)
    raise CorruptHeader(f"unknown volume format {format!r}")


# ---------------------------------------------------------------------------
# parcellations

def save_parcellation(parc: Parcellation, path, names_path=None) -> None:
    path = Path(path)
    data_file = path.with_suffix(path.suffix + ".i32").name
    header = {"dims": list(parc.dims), "data_file": data_file}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(header, f, sort_keys=True)
    payload = parc.labels.astype("<i4").ravel(order="F").tobytes()
    (path.parent / data_file).write_bytes(payload)
    if names_path is not None:
        lines = [f"{k},{parc.label_names[k]}" for k in sorted(parc.label_names)]
        Path(names_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_parcellation(path, names_path=None) -> Parcellation:
    """Load an integer label image plus an optional ``label,name`` sidecar."""
    path = Path(path)
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
        dims = tuple(int(d) for d in header["dims"])
        raw = np.frombuffer((path.parent / header["data_file"]).read_bytes(),
                            dtype="<i4")
    except (KeyError, ValueError, json.JSONDecodeError):
        # fall back: a raw-json volume with nt == 1 also works as a label image
        vol = _load_raw_json(path)
        if vol.dims[3] != 1:
            raise DimensionMismatch("parcellation image must be spatial-only")
        dims = vol.dims[:3]
        raw = vol.data[..., 0].ravel(order="F")
    if len(dims) == 4:
        if dims[3] != 1:
            raise DimensionMismatch("parcellation image must be spatial-only")
        dims = dims[:3]
    if raw.size != int(np.prod(dims)):
        raise DimensionMismatch("parcellation payload size mismatch")
    labels = np.asarray(raw).reshape(dims, order="F")
    names = {}
    if names_path is not None:
        for line in Path(names_path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            k, name = line.split(",", 1)
            names[int(k)] = name
    return Parcellation(labels=labels, label_names=names)


# ---------------------------------------------------------------------------
# series extraction and coordinates

def region_mean_series(vol: Volume4D, parc: Parcellation, label: int) -> Series:
    """Per-timepoint mean over all voxels carrying ``label``."""
    if parc.dims != vol.dims[:3]:
        raise DimensionMismatch(
            f"parcellation dims {parc.dims} != volume dims {vol.dims[:3]}")
    if label <= 0 or label not in parc.label_names:
        raise UnknownLabel(f"label {label} not present in parcellation")
    mask = parc.labels == label
    if not mask.any():
        raise EmptyRegion(f"label {label} covers no voxels")
    values = vol.data[mask].mean(axis=0)
    return Series(values=values, sampling_interval_s=vol.tr_seconds)


def voxel_series(vol: Volume4D, coord) -> Series:
    x, y, z = (int(c) for c in coord)
    nx, ny, nz, _ = vol.dims
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise OutOfBounds(f"voxel {(x, y, z)} outside grid {(nx, ny, nz)}")
    return Series(values=vol.data[x, y, z, :],
                  sampling_interval_s=vol.tr_seconds)


def grid_to_world(coord, affine) -> WorldCoord:
    """Map a grid index triple to world (MNI) mm via the homogeneous affine."""
    a = np.asarray(affine, dtype=np.float64)
    v = a @ np.array([coord[0], coord[1], coord[2], 1.0])
    return WorldCoord(float(v[0]), float(v[1]), float(v[2]))


def world_to_grid(wc: WorldCoord, affine):
    a = np.linalg.inv(np.asarray(affine, dtype=np.float64))
    v = a @ np.array([wc.x_mm, wc.y_mm, wc.z_mm, 1.0])
    return (float(v[0]), float(v[1]), float(v[2]))
