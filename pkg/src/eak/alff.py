"""Low-frequency amplitude maps, group t-tests, FDR, and cluster reports.

The periodogram convention is P_k = |X_k|^2 / n for the length-n DFT, so
sum_k P_k equals n times the variance of the (detrended, hence zero-mean)
input.  ALFF is the mean of sqrt(P_k) over bins inside the band.  P-values
come from a self-contained Student-t CDF built on the regularized
incomplete beta function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BandEmpty,
    BandOutOfRange,
    DataError,
    DimensionMismatch,
    GroupTooSmall,
)
from .volume import Parcellation, Series, Volume4D, grid_to_world

FWHM_TO_SIGMA = 1.0 / 2.3548


@dataclass(frozen=True)
class StatMap:
    values: np.ndarray          # (nx, ny, nz)
    kind: str                   # "alff" | "t" | "p"
    mask: np.ndarray            # (nx, ny, nz) bool

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if v.ndim != 3 or m.shape != v.shape:
            raise DimensionMismatch("values and mask must be matching 3-D")
        if not np.all(np.isfinite(v[m])):
            raise DataError("stat map has non-finite values inside the mask")
        if self.kind == "p" and (v[m].min(initial=0.0) < 0
                                 or v[m].max(initial=0.0) > 1):
            raise DataError("p-map values must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @property
    def dims(self):
        return self.values.shape


# ---------------------------------------------------------------------------
# spectral primitives

def detrend_linear(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    t = np.arange(n, dtype=np.float64)
    t = t - t.mean()
    denom = float(t @ t)
    slope = (x @ t) / denom
    return x - x.mean(axis=-1, keepdims=True) - np.multiply.outer(slope, t)


def periodogram(x, fs: float):
    """Frequencies and power bins P_k = |X_k|^2 / n for the full DFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    X = np.fft.fft(x, axis=-1)
    power = (X.real ** 2 + X.imag ** 2) / n
    freqs = np.fft.fftfreq(n, d=1.0 / fs)
    return freqs, power


def bandpass(s: Series, lo_hz: float, hi_hz: float) -> Series:
    """Brick-wall filter: zero all DFT bins with |f| outside [lo, hi]."""
    n = len(s)
    if n < 8:
        raise DataError("bandpass needs at least 8 samples")
    fs = 1.0 / s.sampling_interval_s
    nyquist = fs / 2.0
    if not (0 <= lo_hz < hi_hz <= nyquist + 1e-12):
        raise BandOutOfRange(
            f"band [{lo_hz}, {hi_hz}] outside [0, {nyquist}]")
    X = np.fft.fft(s.values)
    freqs = np.abs(np.fft.fftfreq(n, d=s.sampling_interval_s))
    keep = (freqs >= lo_hz - 1e-12) & (freqs <= hi_hz + 1e-12)
    if lo_hz > 0:
        keep &= freqs > 0
    X[~keep] = 0.0
    out = np.fft.ifft(X).real
    return Series(values=out, sampling_interval_s=s.sampling_interval_s)


def _band_bins(n, fs, band):
    freqs = np.fft.fftfreq(n, d=1.0 / fs)
    half = freqs[:n // 2 + 1]  # non-negative frequencies
    sel = (half >= band[0] - 1e-12) & (half <= band[1] + 1e-12) & (half > 0)
    return np.flatnonzero(sel)


def alff(s: Series, band=(0.01, 0.08)) -> float:
    """Mean square-rooted periodogram power over the low-frequency band."""
    if len(s) < 16:
        raise DataError("ALFF needs at least 16 samples")
    fs = 1.0 / s.sampling_interval_s
    bins = _band_bins(len(s), fs, band)
    if bins.size == 0:
        raise BandEmpty(
            f"no DFT bins fall inside {band} for n={len(s)}, fs={fs}")
    x = detrend_linear(s.values)
    _, power = periodogram(x, fs)
    return float(np.sqrt(power[bins]).mean())


def alff_map(vol: Volume4D, mask=None, band=(0.01, 0.08),
             threads: int = 1) -> StatMap:
    """Voxelwise ALFF over a mask (default: everywhere)."""
    nx, ny, nz, nt = vol.dims
    if mask is None:
        mask = np.ones((nx, ny, nz), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (nx, ny, nz):
        raise DimensionMismatch("mask dims do not match volume")
    if nt < 16:
        raise DataError("ALFF needs at least 16 timepoints")
    fs = 1.0 / vol.tr_seconds
    bins = _band_bins(nt, fs, band)
    if bins.size == 0:
        raise BandEmpty(f"no DFT bins inside {band} for nt={nt}")
    values = np.zeros((nx, ny, nz))
    series = vol.data[mask]  # (n_voxels, nt), row-major voxel order

    def _chunk_alff(rows):
        x = detrend_linear(rows)
        _, power = periodogram(x, fs)
        return np.sqrt(power[:, bins]).mean(axis=1)

    # fixed-size chunks keep batched FFT/BLAS calls identical no matter how
    # many workers run them, so the output bytes never depend on `threads`
    chunk_rows = 64
    if series.size:
        n_rows = series.shape[0]
        chunks = [series[i:i + chunk_rows]
                  for i in range(0, n_rows, chunk_rows)]
        if threads > 1 and len(chunks) > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(_chunk_alff, chunks))
        else:
            parts = [_chunk_alff(c) for c in chunks]
        values[mask] = np.concatenate(parts)
    return StatMap(values=values, kind="alff", mask=mask)


# ---------------------------------------------------------------------------
# Student-t distribution (self-contained)

def _betacf(a, b, x):
    # continued fraction for the incomplete beta (Lentz's method)
    TINY = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < TINY:
        d = TINY
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise DataError("degrees of freedom must be positive")
    if not np.isfinite(t):
        return 0.0
    x = df / (df + t * t)
    return betainc_reg(df / 2.0, 0.5, x)


def student_t_cdf(t: float, df: float) -> float:
    p = 0.5 * student_t_two_sided_p(t, df)
    return 1.0 - p if t >= 0 else p


# ---------------------------------------------------------------------------
# group comparison

def welch_t(a, b):
    """Welch t statistic and Welch-Satterthwaite df for two 1-D samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    se2 = va / na + vb / nb
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, float(na + nb - 2)
        return math.copysign(math.inf, diff), float(na + nb - 2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    return diff / math.sqrt(se2), df


def two_sample_t(group_a, group_b):
    """Voxelwise Welch t and two-sided p maps; positive t means a > b."""
    if len(group_a) < 2 or len(group_b) < 2:
        raise GroupTooSmall("each group needs at least 2 maps")
    mask = group_a[0].mask
    for m in list(group_a) + list(group_b):
        if m.dims != group_a[0].dims or not np.array_equal(m.mask, mask):
            raise DimensionMismatch("group maps must share dims and mask")
    A = np.stack([m.values[mask] for m in group_a])  # (na, n_vox)
    B = np.stack([m.values[mask] for m in group_b])
    na, nb = A.shape[0], B.shape[0]
    va = A.var(axis=0, ddof=1)
    vb = B.var(axis=0, ddof=1)
    diff = A.mean(axis=0) - B.mean(axis=0)
    se2 = va / na + vb / nb
    t = np.zeros_like(diff)
    p = np.ones_like(diff)
    degenerate = se2 == 0.0
    # zero pooled variance with equal means -> t=0, p=1; unequal -> p=0
    sep = degenerate & (diff != 0)
    t[sep] = np.sign(diff[sep]) * np.inf
    p[sep] = 0.0
    reg = ~degenerate
    t[reg] = diff[reg] / np.sqrt(se2[reg])
    df = np.full_like(diff, float(na + nb - 2))
    df[reg] = se2[reg] ** 2 / ((va[reg] / na) ** 2 / (na - 1)
                               + (vb[reg] / nb) ** 2 / (nb - 1))
    p[reg] = np.array([student_t_two_sided_p(tv, dv)
                       for tv, dv in zip(t[reg], df[reg])])
    t_map = np.zeros(mask.shape)
    p_map = np.ones(mask.shape)
    # clamp infinities so the map stays finite; p carries the evidence
    t_map[mask] = np.where(np.isfinite(t), t, np.sign(t) * 1e12)
    p_map[mask] = p
    return (StatMap(values=t_map, kind="t", mask=mask),
            StatMap(values=p_map, kind="p", mask=mask))


def fdr_bh(p_values, q: float):
    """Benjamini-Hochberg: returns (reject boolean array, p threshold)."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return np.zeros(0, dtype=bool), 0.0
    if p.min() < 0 or p.max() > 1 or not (0 < q < 1):
        raise DataError("p-values must be in [0,1] and q in (0,1)")
    m = p.size
    order = np.argsort(p, kind="stable")
    sorted_p = p[order]
    thresholds = (np.arange(1, m + 1) / m) * q
    passing = np.flatnonzero(sorted_p <= thresholds)
    if passing.size == 0:
        return np.zeros(m, dtype=bool), 0.0
    p_star = sorted_p[passing[-1]]
    return p <= p_star, float(p_star)


# ---------------------------------------------------------------------------
# clusters

_OFFSETS = {
    6: [(dx, dy, dz) for dx, dy, dz in
        [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1),
         (0, 0, 1)]],
    18: [(dx, dy, dz)
         for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
         if (dx, dy, dz) != (0, 0, 0) and abs(dx) + abs(dy) + abs(dz) <= 2],
    26: [(dx, dy, dz)
         for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
         if (dx, dy, dz) != (0, 0, 0)],
}


@dataclass(frozen=True)
class Cluster:
    voxels: tuple
    n_voxels: int
    size_mm3: float
    peak: tuple
    peak_world: tuple
    peak_intensity: float
    region_labels: tuple


@dataclass(frozen=True)
class ClusterReport:
    clusters: tuple
    connectivity: int
    q_threshold: float = float("nan")
    p_threshold: float = float("nan")


def extract_clusters(reject_mask, t_map: StatMap, parc: Parcellation,
                     affine, voxel_size_mm, connectivity: int = 26,
                     q_threshold=float("nan"),
                     p_threshold=float("nan")) -> ClusterReport:
    """Connected components of the rejection mask with per-cluster stats.

    Peak = voxel of maximal |t| (ties -> smallest row-major index); peak
    intensity keeps the sign of t.
    """
    mask = np.asarray(reject_mask, dtype=bool)
    if connectivity not in _OFFSETS:
        raise DataError("connectivity must be 6, 18 or 26")
    if parc is not None and parc.dims != mask.shape:
        raise DimensionMismatch("parcellation dims do not match mask")
    nx, ny, nz = mask.shape
    offsets = _OFFSETS[connectivity]
    visited = np.zeros_like(mask)
    voxel_vol = float(np.prod(voxel_size_mm))
    clusters = []
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not mask[x, y, z] or visited[x, y, z]:
                    continue
                stack = [(x, y, z)]
                visited[x, y, z] = True
                members = []
                while stack:
                    cx, cy, cz = stack.pop()
                    members.append((cx, cy, cz))
                    for dx, dy, dz in offsets:
                        px, py, pz = cx + dx, cy + dy, cz + dz
                        if (0 <= px < nx and 0 <= py < ny and 0 <= pz < nz
                                and mask[px, py, pz]
                                and not visited[px, py, pz]):
                            visited[px, py, pz] = True
                            stack.append((px, py, pz))
                members.sort()  # row-major order
                t_vals = np.array([t_map.values[v] for v in members])
                best = int(np.argmax(np.abs(t_vals)))  # first max wins ties
                peak = members[best]
                labels = tuple(sorted({int(parc.labels[v]) for v in members
                                       if parc is not None
                                       and parc.labels[v] != 0})) \
                    if parc is not None else ()
                clusters.append(Cluster(
                    voxels=tuple(members),
                    n_voxels=len(members),
                    size_mm3=len(members) * voxel_vol,
                    peak=peak,
                    peak_world=grid_to_world(peak, affine).as_tuple(),
                    peak_intensity=float(t_vals[best]),
                    region_labels=labels,
                ))
    return ClusterReport(clusters=tuple(clusters), connectivity=connectivity,
                         q_threshold=q_threshold, p_threshold=p_threshold)


# ---------------------------------------------------------------------------
# smoothing utility (not part of the statistical chain by default)

def gaussian_smooth(data3d, voxel_size_mm, fwhm_mm=(4.0, 4.0, 4.0)):
    """Separable Gaussian smoothing, sigma = FWHM/2.3548, truncated at 3 sigma."""
    out = np.asarray(data3d, dtype=np.float64).copy()
    for axis in range(3):
        sigma_vox = (fwhm_mm[axis] * FWHM_TO_SIGMA) / voxel_size_mm[axis]
        if sigma_vox <= 0:
            continue
        radius = max(1, int(math.ceil(3.0 * sigma_vox)))
        x = np.arange(-radius, radius + 1, dtype=np.float64)
        kernel = np.exp(-0.5 * (x / sigma_vox) ** 2)
        kernel /= kernel.sum()
        out = np.apply_along_axis(
            lambda v: np.convolve(np.pad(v, radius, mode="edge"), kernel,
                                  mode="valid"), axis, out)
    return out


# ---------------------------------------------------------------------------
# report serialization

def report_to_dicts(report: ClusterReport, parc: Parcellation = None):
    rows = []
    for i, c in enumerate(report.clusters, start=1):
        names = [parc.label_names.get(lab, str(lab))
                 for lab in c.region_labels] if parc is not None else \
            [str(lab) for lab in c.region_labels]
        rows.append({
            "cluster": i,
            "n_voxels": c.n_voxels,
            "size_mm3": c.size_mm3,
            "peak_mni": [round(v, 6) for v in c.peak_world],
            "peak_grid": list(c.peak),
            "regions": names,
            "peak_intensity": c.peak_intensity,
        })
    return rows


def save_report(report: ClusterReport, path, parc: Parcellation = None):
    doc = {
        "connectivity": report.connectivity,
        "clusters": report_to_dicts(report, parc),
    }
    if not math.isnan(report.q_threshold):
        doc["q_threshold"] = report.q_threshold
    if not math.isnan(report.p_threshold):
        doc["p_threshold"] = report.p_threshold
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1),
                          encoding="utf-8")


def export_report_csv(report: ClusterReport, path, parc: Parcellation = None):
    lines = ["cluster,n_voxels,size_mm3,peak_mni_x,peak_mni_y,peak_mni_z,"
             "regions,peak_intensity"]
    for row in report_to_dicts(report, parc):
        x, y, z = row["peak_mni"]
        regions = ";".join(row["regions"])
        lines.append(f"{row['cluster']},{row['n_voxels']},"
                     f"{row['size_mm3']!r},{x!r},{y!r},{z!r},"
                     f"\"{regions}\",{row['peak_intensity']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
