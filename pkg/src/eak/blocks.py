"""Block-design windowing: carve a task run into stimulus/rest volume sets.

Volume ``k`` belongs to a window ``[a, b)`` (seconds relative to block onset)
iff ``k * TR`` falls inside it.  With TR = 2 s and the default windows
(10, 20) and (30, 40), every block yields exactly five stimulus volumes and
five rest volumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, TrIncompatible, WindowOutOfRange
from .volume import Volume4D

_EPS = 1e-9

CONDITIONS = ("positive", "negative")


@dataclass(frozen=True)
class BlockDesign:
    """Timing of a block-design run: ordered (condition, onset) pairs."""

    condition_sequence: tuple  # of (condition, onset_s)
    block_length_s: float = 40.0
    stim_window_s: tuple = (10.0, 20.0)
    rest_window_s: tuple = (30.0, 40.0)
    lead_in_s: float = 20.0

    def __post_init__(self):
        seq = tuple((str(c), float(t)) for c, t in self.condition_sequence)
        for cond, onset in seq:
            if cond not in CONDITIONS:
                raise ConfigError(f"unknown condition {cond!r}")
            if onset < 0:
                raise ConfigError("onsets must be non-negative")
        onsets = [t for _, t in seq]
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ConfigError("onsets must be strictly increasing")
        for win in (self.stim_window_s, self.rest_window_s):
            a, b = win
            if not (0 <= a < b <= self.block_length_s):
                raise WindowOutOfRange(
                    f"window {win} must lie within [0, {self.block_length_s}]")
        sa, sb = self.stim_window_s
        ra, rb = self.rest_window_s
        if abs((sb - sa) - (rb - ra)) > _EPS:
            raise ConfigError("stimulus and rest windows must be equal length")
        if self.lead_in_s < 0:
            raise ConfigError("lead_in_s must be non-negative")
        object.__setattr__(self, "condition_sequence", seq)

    @classmethod
    def from_json(cls, path):
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            condition_sequence=tuple(
                (b["condition"], b["onset_s"]) for b in cfg["blocks"]),
            block_length_s=cfg.get("block_length_s", 40.0),
            stim_window_s=tuple(cfg.get("stim_window_s", (10.0, 20.0))),
            rest_window_s=tuple(cfg.get("rest_window_s", (30.0, 40.0))),
            lead_in_s=cfg.get("lead_in_s", 20.0),
        )

    def to_json(self, path, tr_s=None):
        cfg = {
            "blocks": [{"condition": c, "onset_s": t}
                       for c, t in self.condition_sequence],
            "block_length_s": self.block_length_s,
            "stim_window_s": list(self.stim_window_s),
            "rest_window_s": list(self.rest_window_s),
            "lead_in_s": self.lead_in_s,
        }
        if tr_s is not None:
            cfg["tr_s"] = tr_s
        Path(path).write_text(json.dumps(cfg, sort_keys=True, indent=1),
                              encoding="utf-8")


@dataclass(frozen=True)
class Block:
    subject_id: str
    condition: str
    stim_volumes: tuple
    rest_volumes: tuple

    def __post_init__(self):
        s, r = tuple(self.stim_volumes), tuple(self.rest_volumes)
        if len(s) != len(r) or set(s) & set(r):
            raise ConfigError("stim/rest index sets must be disjoint and "
                              "equal-length")
        object.__setattr__(self, "stim_volumes", s)
        object.__setattr__(self, "rest_volumes", r)


def _window_indices(onset_s, window, tr):
    a, b = onset_s + window[0], onset_s + window[1]
    lo = math.ceil(a / tr - _EPS)
    hi = math.ceil(b / tr - _EPS)  # exclusive
    return tuple(range(lo, hi))


def split_blocks(vol: Volume4D, design: BlockDesign, subject_id: str):
    """One Block per condition occurrence in the design."""
    tr = vol.tr_seconds
    nt = vol.dims[3]
    for win in (design.stim_window_s, design.rest_window_s):
        span = win[1] - win[0]
        if abs(span / tr - round(span / tr)) > _EPS:
            raise TrIncompatible(
                f"window length {span}s is not a multiple of TR={tr}s")
    blocks = []
    for cond, onset in design.condition_sequence:
        stim = _window_indices(onset, design.stim_window_s, tr)
        rest = _window_indices(onset, design.rest_window_s, tr)
        if not stim or not rest or max(max(stim), max(rest)) >= nt:
            raise WindowOutOfRange(
                f"block at onset {onset}s extends past the run (nt={nt})")
        blocks.append(Block(subject_id=subject_id, condition=cond,
                            stim_volumes=stim, rest_volumes=rest))
    return blocks


def pool_blocks(per_subject, condition: str):
    """Flatten per-subject block lists for one condition, order-preserving."""
    return [b for subject_blocks in per_subject for b in subject_blocks
            if b.condition == condition]


def save_blocks(blocks, path):
    rows = [{"subject_id": b.subject_id, "condition": b.condition,
             "stim_volumes": list(b.stim_volumes),
             "rest_volumes": list(b.rest_volumes)} for b in blocks]
    Path(path).write_text(json.dumps(rows, sort_keys=True, indent=1),
                          encoding="utf-8")


def load_blocks(path):
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return [Block(subject_id=r["subject_id"], condition=r["condition"],
                  stim_volumes=tuple(r["stim_volumes"]),
                  rest_volumes=tuple(r["rest_volumes"])) for r in rows]
