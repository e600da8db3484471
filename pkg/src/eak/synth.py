"""Synthetic datasets with planted ground truth.

All noise flows from counter-based Philox streams keyed on (seed, stream
index), so generation is bitwise reproducible regardless of evaluation
order or thread count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import BlockDesign
from .errors import ConfigError
from .volume import Parcellation, Volume4D


@dataclass(frozen=True)
class SynthConfig:
    dims: tuple = (20, 20, 12)
    tr_s: float = 2.0
    n_subjects: int = 21
    blocks_per_condition: int = 3
    n_regions: int = 246
    active_regions: dict = field(default_factory=dict)  # condition -> labels
    amplitude: float = 3.0
    alff_regions: tuple = ()     # labels with a planted group effect
    alff_effect: float = 1.0     # amplitude of the extra in-band sinusoid
    alff_freq_hz: float = 0.05
    group_sizes: tuple = (46, 20)
    nt_rest: int = 100
    noise_sd: float = 1.0
    baseline: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if min(self.dims) < 1 or len(self.dims) != 3:
            raise ConfigError("dims must be three positive integers")
        if self.n_regions > int(np.prod(self.dims)):
            raise ConfigError("more regions than voxels")
        if self.amplitude < 0 or self.alff_effect < 0 or self.noise_sd < 0:
            raise ConfigError("amplitudes and noise sd must be >= 0")
        if self.n_subjects < 1 or self.blocks_per_condition < 1:
            raise ConfigError("need at least one subject and block")
        for cond in self.active_regions:
            if cond not in ("positive", "negative"):
                raise ConfigError(f"unknown condition {cond!r}")

    @classmethod
    def from_json(cls, path):
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if "dims" in doc:
            doc["dims"] = tuple(doc["dims"])
        for key in ("alff_regions", "group_sizes"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def _rng(seed: int, stream: int):
    return np.random.Generator(
        np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def make_parcellation(dims, n_regions) -> Parcellation:
    """Contiguous row-major split of the grid into n_regions labels."""
    n_vox = int(np.prod(dims))
    flat = np.arange(n_vox, dtype=np.int64) * n_regions // n_vox + 1
    return Parcellation(labels=flat.reshape(dims))


def make_task_design(cfg: SynthConfig) -> BlockDesign:
    """Alternating positive/negative blocks after a lead-in rest."""
    seq = []
    onset = 20.0
    for i in range(2 * cfg.blocks_per_condition):
        cond = "positive" if i % 2 == 0 else "negative"
        seq.append((cond, onset))
        onset += 40.0
    return BlockDesign(condition_sequence=tuple(seq))


def _stim_indicator(design: BlockDesign, condition, nt, tr):
    """Boxcar over stimulus presentation seconds, lagged one TR."""
    ind = np.zeros(nt)
    for cond, onset in design.condition_sequence:
        if cond != condition:
            continue
        for k in range(nt):
            if onset <= (k - 1) * tr < onset + 20.0:
                ind[k] = 1.0
    return ind


def synth_task_dataset(cfg: SynthConfig):
    """Per-subject task volumes with planted condition-locked activations.

    Returns (volumes: dict subject_id -> Volume4D, parcellation, design,
    manifest).
    """
    parc = make_parcellation(cfg.dims, cfg.n_regions)
    design = make_task_design(cfg)
    duration = 20.0 + 40.0 * 2 * cfg.blocks_per_condition
    nt = int(round(duration / cfg.tr_s))
    affine = _default_affine(cfg.dims)

    indicators = {c: _stim_indicator(design, c, nt, cfg.tr_s)
                  for c in ("positive", "negative")}
    signal = np.zeros(cfg.dims + (nt,))
    active_voxels = {}
    for cond, labels in cfg.active_regions.items():
        for lab in labels:
            mask = parc.labels == int(lab)
            signal[mask] += cfg.amplitude * indicators[cond]
            active_voxels[int(lab)] = [
                [int(c) for c in v] for v in np.argwhere(mask)]

    volumes = {}
    for s in range(cfg.n_subjects):
        rng = _rng(cfg.seed, s)
        noise = rng.normal(0.0, cfg.noise_sd, size=cfg.dims + (nt,))
        data = cfg.baseline + signal + noise
        sid = f"sub-{s + 1:02d}"
        volumes[sid] = Volume4D(data=data, voxel_size_mm=(3.0, 3.0, 3.0),
                                tr_seconds=cfg.tr_s, affine=affine)
    manifest = {
        "kind": "task",
        "seed": cfg.seed,
        "active_regions": {c: [int(v) for v in labs]
                           for c, labs in cfg.active_regions.items()},
        "active_voxels": active_voxels,
        "amplitude": cfg.amplitude,
        "noise_sd": cfg.noise_sd,
        "n_subjects": cfg.n_subjects,
        "blocks_per_condition": cfg.blocks_per_condition,
    }
    return volumes, parc, design, manifest


def synth_rest_dataset(cfg: SynthConfig):
    """Two resting-state groups; group B carries extra in-band power.

    Returns (group_a: list of Volume4D, group_b: list, parcellation,
    manifest).  Group A models patients, group B controls, matching the
    t-test sign convention (positive t means A > B).
    """
    parc = make_parcellation(cfg.dims, cfg.n_regions)
    affine = _default_affine(cfg.dims)
    nt = cfg.nt_rest
    if nt < 16:
        raise ConfigError("nt_rest must be >= 16")
    t = np.arange(nt) * cfg.tr_s
    sine = np.sin(2.0 * np.pi * cfg.alff_freq_hz * t)
    effect = np.zeros(cfg.dims + (nt,))
    planted_voxels = {}
    for lab in cfg.alff_regions:
        mask = parc.labels == int(lab)
        effect[mask] += cfg.alff_effect * sine
        planted_voxels[int(lab)] = [
            [int(c) for c in v] for v in np.argwhere(mask)]

    na, nb = cfg.group_sizes
    group_a, group_b = [], []
    for s in range(na):
        rng = _rng(cfg.seed, 10_000 + s)
        data = cfg.baseline + rng.normal(0.0, cfg.noise_sd,
                                         size=cfg.dims + (nt,))
        group_a.append(Volume4D(data=data, voxel_size_mm=(3.0, 3.0, 3.0),
                                tr_seconds=cfg.tr_s, affine=affine))
    for s in range(nb):
        rng = _rng(cfg.seed, 20_000 + s)
        data = (cfg.baseline + effect
                + rng.normal(0.0, cfg.noise_sd, size=cfg.dims + (nt,)))
        group_b.append(Volume4D(data=data, voxel_size_mm=(3.0, 3.0, 3.0),
                                tr_seconds=cfg.tr_s, affine=affine))
    manifest = {
        "kind": "rest",
        "seed": cfg.seed,
        "planted_regions": {str(int(lab)): "b_greater_a"
                            for lab in cfg.alff_regions},
        "planted_voxels": planted_voxels,
        "alff_effect": cfg.alff_effect,
        "alff_freq_hz": cfg.alff_freq_hz,
        "group_sizes": [na, nb],
    }
    return group_a, group_b, parc, manifest


def _default_affine(dims):
    # 3 mm isotropic grid centered like a standard template
    return np.array([
        [3.0, 0.0, 0.0, -3.0 * (dims[0] // 2)],
        [0.0, 3.0, 0.0, -3.0 * (dims[1] // 2)],
        [0.0, 0.0, 3.0, -3.0 * (dims[2] // 2)],
        [0.0, 0.0, 0.0, 1.0],
    ])
