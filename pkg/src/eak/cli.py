"""Subcommand CLI.  Every stage reads and writes files only.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
Logs go to standard error; ``--threads`` (or EAK_THREADS) caps workers
without changing any output byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import atlas as atlas_mod
from . import blocks as blocks_mod
from . import classify as classify_mod
from . import features as features_mod
from . import rfe as rfe_mod
from . import synth as synth_mod
from . import volume as volume_mod
from .alff import (
    alff_map,
    export_report_csv,
    extract_clusters,
    fdr_bh,
    save_report,
    two_sample_t,
)
from .errors import ConfigError, DataError, EakError, NumericalError

log = logging.getLogger("eak")


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("EAK_THREADS")
    return max(1, int(env)) if env else 1


def _write_json(doc, path):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1),
                          encoding="utf-8")


def _load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# dataset manifests

def _load_task_dataset(path):
    doc = _load_json(path)
    base = Path(path).parent
    vols = {s["id"]: volume_mod.load_volume(base / s["volume"])
            for s in doc["subjects"]}
    parc = volume_mod.load_parcellation(
        base / doc["parcellation"],
        base / doc["parcellation_names"]
        if doc.get("parcellation_names") else None)
    design = blocks_mod.BlockDesign.from_json(base / doc["design"])
    return vols, parc, design, doc


def _load_rest_dataset(path):
    doc = _load_json(path)
    base = Path(path).parent
    group_a = [volume_mod.load_volume(base / f) for f in doc["group_a"]]
    group_b = [volume_mod.load_volume(base / f) for f in doc["group_b"]]
    parc = volume_mod.load_parcellation(base / doc["parcellation"])
    return group_a, group_b, parc, doc


def _save_statmap(sm, path, ref_vol):
    vol = volume_mod.Volume4D(
        data=sm.values[..., None], voxel_size_mm=ref_vol.voxel_size_mm,
        tr_seconds=ref_vol.tr_seconds, affine=ref_vol.affine)
    volume_mod.save_volume(vol, path)
    mask_parc = volume_mod.Parcellation(labels=sm.mask.astype(np.int64))
    volume_mod.save_parcellation(
        mask_parc, Path(path).with_suffix(".mask.json"))


# ---------------------------------------------------------------------------
# selection / expansion files

def _voxels_to_json(voxels):
    return [[int(c) for c in v] for v in voxels]


def _save_selection(characteristic, sub_rois, path):
    _write_json({
        "characteristic_rois": [int(r) for r in characteristic],
        "sub_rois": {str(int(lab)): _voxels_to_json(voxs)
                     for lab, voxs in sub_rois.items()},
    }, path)


def _load_selection(path):
    doc = _load_json(path)
    sub_rois = {int(lab): [tuple(v) for v in voxs]
                for lab, voxs in doc["sub_rois"].items()}
    return [int(r) for r in doc["characteristic_rois"]], sub_rois


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth_task(args):
    cfg_kwargs = _load_json(args.config) if args.config else {}
    cfg_kwargs["seed"] = args.seed
    if "dims" in cfg_kwargs:
        cfg_kwargs["dims"] = tuple(cfg_kwargs["dims"])
    if "active_regions" in cfg_kwargs:
        cfg_kwargs["active_regions"] = {
            c: list(v) for c, v in cfg_kwargs["active_regions"].items()}
    cfg = synth_mod.SynthConfig(**cfg_kwargs)
    vols, parc, design, manifest = synth_mod.synth_task_dataset(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subjects = []
    for sid in sorted(vols):
        fname = f"{sid}.vol.json"
        volume_mod.save_volume(vols[sid], out / fname)
        subjects.append({"id": sid, "volume": fname})
    volume_mod.save_parcellation(parc, out / "parcellation.json")
    design.to_json(out / "design.json", tr_s=cfg.tr_s)
    _write_json(manifest, out / "ground_truth.json")
    _write_json({"kind": "task", "subjects": subjects,
                 "parcellation": "parcellation.json",
                 "design": "design.json",
                 "ground_truth": "ground_truth.json"},
                out / "dataset.json")
    log.info("wrote task dataset with %d subjects to %s", len(subjects), out)


def cmd_synth_rest(args):
    cfg_kwargs = _load_json(args.config) if args.config else {}
    cfg_kwargs["seed"] = args.seed
    for key in ("dims", "alff_regions", "group_sizes"):
        if key in cfg_kwargs:
            cfg_kwargs[key] = tuple(cfg_kwargs[key])
    cfg = synth_mod.SynthConfig(**cfg_kwargs)
    group_a, group_b, parc, manifest = synth_mod.synth_rest_dataset(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a_files, b_files = [], []
    for i, v in enumerate(group_a):
        f = f"groupA_{i:03d}.vol.json"
        volume_mod.save_volume(v, out / f)
        a_files.append(f)
    for i, v in enumerate(group_b):
        f = f"groupB_{i:03d}.vol.json"
        volume_mod.save_volume(v, out / f)
        b_files.append(f)
    volume_mod.save_parcellation(parc, out / "parcellation.json")
    _write_json(manifest, out / "ground_truth.json")
    _write_json({"kind": "rest", "group_a": a_files, "group_b": b_files,
                 "parcellation": "parcellation.json",
                 "ground_truth": "ground_truth.json"},
                out / "dataset.json")
    log.info("wrote rest dataset (%d vs %d) to %s",
             len(a_files), len(b_files), out)


def cmd_split(args):
    vols, parc, design, _ = _load_task_dataset(args.dataset)
    per_subject = [blocks_mod.split_blocks(vols[sid], design, sid)
                   for sid in sorted(vols)]
    pooled = blocks_mod.pool_blocks(per_subject, args.condition)
    blocks_mod.save_blocks(pooled, args.out)
    log.info("pooled %d %s blocks", len(pooled), args.condition)


def cmd_features(args):
    vols, parc, design, _ = _load_task_dataset(args.dataset)
    pooled = blocks_mod.load_blocks(args.blocks)
    if args.granularity == "roi":
        units = parc.region_labels()

        def series_for(sid, label):
            return volume_mod.region_mean_series(vols[sid], parc,
                                                 label).values
    else:
        if args.roi_label is None:
            raise ConfigError("--roi-label is required at voxel granularity")
        coords = [tuple(int(c) for c in v)
                  for v in np.argwhere(parc.labels == args.roi_label)]
        if not coords:
            raise DataError(f"label {args.roi_label} covers no voxels")
        units = coords

        def series_for(sid, coord):
            return vols[sid].data[coord[0], coord[1], coord[2], :]

    m = features_mod.assemble_matrix(pooled, units, series_for,
                                     shared_minmax=args.shared_minmax)
    features_mod.save_matrix(m, args.out)
    if args.csv:
        features_mod.export_csv(m, args.csv)
    log.info("assembled %dx%d matrix", m.n_samples, m.n_features)


def _train_config(args):
    kwargs = {}
    if getattr(args, "C", None) is not None:
        kwargs["C"] = args.C
    return rfe_mod.TrainConfig(**kwargs)


def cmd_rfe(args):
    cfg = _train_config(args)
    schedule = "one" if args.schedule == "one" else float(args.schedule)
    if args.two_stage:
        vols, parc, design, _ = _load_task_dataset(args.dataset)
        pooled = blocks_mod.load_blocks(args.blocks)
        units = parc.region_labels()

        def roi_series(sid, label):
            return volume_mod.region_mean_series(vols[sid], parc,
                                                 label).values

        roi_matrix = features_mod.assemble_matrix(
            pooled, units, roi_series, shared_minmax=args.shared_minmax)

        def voxel_matrix_for(label):
            coords = [tuple(int(c) for c in v)
                      for v in np.argwhere(parc.labels == label)]

            def vox_series(sid, coord):
                return vols[sid].data[coord[0], coord[1], coord[2], :]

            return features_mod.assemble_matrix(
                pooled, coords, vox_series,
                shared_minmax=args.shared_minmax)

        kept, sub_rois, stage1, _ = rfe_mod.two_stage_select(
            roi_matrix, voxel_matrix_for, k=args.folds, cfg=cfg,
            roi_schedule=schedule, voxel_schedule=schedule, seed=args.seed)
        _save_selection(kept, sub_rois, args.out)
        if args.trace:
            rfe_mod.save_trace(stage1, args.trace)
        log.info("two-stage selection kept %d regions", len(kept))
    else:
        m = features_mod.load_matrix(args.matrix)
        trace = rfe_mod.svm_rfe(m, k=args.folds, cfg=cfg, schedule=schedule,
                                seed=args.seed)
        rfe_mod.save_trace(trace, args.out)
        if args.curve:
            rfe_mod.export_accuracy_curve(trace, args.curve)
        log.info("best subset: %d features at accuracy %.3f",
                 len(trace.best_subset), trace.best_accuracy)


def cmd_fc_expand(args):
    vols, parc, design, _ = _load_task_dataset(args.dataset)
    pooled = blocks_mod.load_blocks(args.blocks)
    _, sub_rois = _load_selection(args.selection)
    retained, skipped = atlas_mod.fc_expand(
        vols, pooled, sub_rois, parc, threshold=args.threshold,
        threads=_threads(args))
    _write_json({
        "threshold": args.threshold,
        "skipped_zero_variance": skipped,
        "retained": [{"voxel": _voxels_to_json([r["voxel"]])[0],
                      "parent_region": r["parent_region"],
                      "sub_roi": r["sub_roi"], "r": r["r"]}
                     for r in retained],
    }, args.out)
    log.info("retained %d voxels (skipped %d degenerate)",
             len(retained), skipped)


def cmd_atlas_build(args):
    vols, parc, design, _ = _load_task_dataset(args.dataset)
    _, sub_rois = _load_selection(args.selection)
    expanded = _load_json(args.expanded)["retained"] if args.expanded else []
    expanded = [{"voxel": tuple(r["voxel"]),
                 "parent_region": r["parent_region"]} for r in expanded]
    a = atlas_mod.build_atlas(sub_rois, expanded, parc, name=args.name,
                              params={"fc_threshold": args.threshold})
    atlas_mod.save_atlas(a, args.out)
    log.info("atlas %s: %d units, %d voxels, %d regions", a.name,
             len(a.units), a.n_voxels, len(a.region_labels))


def cmd_alff(args):
    vol = volume_mod.load_volume(args.volume)
    mask = None
    if args.mask:
        mask = volume_mod.load_parcellation(args.mask).labels > 0
    sm = alff_map(vol, mask=mask, band=tuple(args.band),
                           threads=_threads(args))
    _save_statmap(sm, args.out, vol)
    log.info("ALFF map over %d voxels", int(sm.mask.sum()))


def cmd_group_stats(args):
    group_a, group_b, parc, _ = _load_rest_dataset(args.rest_dataset)
    ref = group_a[0]
    if args.atlas:
        a = atlas_mod.load_atlas(args.atlas, parc)
        mask = np.zeros(parc.dims, dtype=bool)
        for u in a.units:
            for v in u.voxels:
                mask[v] = True
    else:
        mask = np.ones(parc.dims, dtype=bool)
    threads = _threads(args)
    maps_a = [alff_map(v, mask=mask, band=tuple(args.band),
                                threads=threads) for v in group_a]
    maps_b = [alff_map(v, mask=mask, band=tuple(args.band),
                                threads=threads) for v in group_b]
    t_map, p_map = two_sample_t(maps_a, maps_b)
    reject, p_star = fdr_bh(p_map.values[mask], args.q)
    reject_mask = np.zeros(parc.dims, dtype=bool)
    reject_mask[mask] = reject
    report = extract_clusters(
        reject_mask, t_map, parc, ref.affine, ref.voxel_size_mm,
        connectivity=args.connectivity, q_threshold=args.q,
        p_threshold=p_star)
    prefix = Path(args.out_prefix)
    _save_statmap(t_map, prefix.with_suffix(".t.json"), ref)
    _save_statmap(p_map, prefix.with_suffix(".p.json"), ref)
    save_report(report, prefix.with_suffix(".clusters.json"), parc)
    export_report_csv(report, prefix.with_suffix(".clusters.csv"),
                               parc)
    log.info("%d voxels rejected at q=%g; %d clusters",
             int(reject_mask.sum()), args.q, len(report.clusters))


def cmd_classify(args):
    group_a, group_b, parc, _ = _load_rest_dataset(args.rest_dataset)
    a = atlas_mod.load_atlas(args.atlas, parc)
    rows, labels, sample_ids = [], [], []
    for i, v in enumerate(group_a):
        rows.append(classify_mod.atlas_features(v, a, mode=args.mode))
        labels.append(1)
        sample_ids.append(("groupA", i, "rest"))
    for i, v in enumerate(group_b):
        rows.append(classify_mod.atlas_features(v, a, mode=args.mode))
        labels.append(-1)
        sample_ids.append(("groupB", i, "rest"))
    fids = tuple(range(len(rows[0])))
    m = features_mod.FeatureMatrix(values=np.array(rows),
                                   labels=np.array(labels),
                                   feature_ids=fids,
                                   sample_ids=tuple(sample_ids))
    res = classify_mod.grid_search_cv(m, k=args.folds, seed=args.seed)
    classify_mod.save_grid_result(res, args.out)
    if args.csv:
        classify_mod.export_grid_csv(res, args.csv)
    log.info("best (C=%g, gamma=%g): accuracy %.3f",
             res.best["C"], res.best["gamma"], res.best["accuracy"])


def cmd_report(args):
    doc = _load_json(args.input)
    if "clusters" in doc:
        lines = ["cluster,n_voxels,size_mm3,peak_mni_x,peak_mni_y,"
                 "peak_mni_z,regions,peak_intensity"]
        for row in doc["clusters"]:
            x, y, z = row["peak_mni"]
            regions = ";".join(row["regions"])
            lines.append(f"{row['cluster']},{row['n_voxels']},"
                         f"{row['size_mm3']!r},{x!r},{y!r},{z!r},"
                         f"\"{regions}\",{row['peak_intensity']!r}")
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif "entries" in doc:
        lines = ["C,gamma,mean_accuracy,accuracy,precision,recall,f_score"]
        for e in doc["entries"]:
            lines.append(f"{e['C']!r},{e['gamma']!r},{e['mean_accuracy']!r},"
                         f"{e['accuracy']!r},{e['precision']!r},"
                         f"{e['recall']!r},{e['f_score']!r}")
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise DataError("unrecognized report input (need clusters or "
                        "grid-search JSON)")
    log.info("wrote %s", args.out)


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="eak",
                                description="emotion-atlas pipeline stages")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: EAK_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-task", help="generate a synthetic task dataset")
    s.add_argument("--config", help="JSON SynthConfig overrides")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth_task)

    s = sub.add_parser("synth-rest", help="generate synthetic rest groups")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth_rest)

    s = sub.add_parser("split", help="pool per-block stimulus/rest windows")
    s.add_argument("--dataset", required=True)
    s.add_argument("--condition", choices=("positive", "negative"),
                   required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("features", help="assemble a feature matrix")
    s.add_argument("--dataset", required=True)
    s.add_argument("--blocks", required=True)
    s.add_argument("--granularity", choices=("roi", "voxel"), default="roi")
    s.add_argument("--roi-label", type=int)
    s.add_argument("--shared-minmax", action="store_true",
                   help="normalize stim and rest windows with one min/max")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("rfe", help="SVM-RFE feature selection")
    s.add_argument("--matrix")
    s.add_argument("--two-stage", action="store_true")
    s.add_argument("--dataset")
    s.add_argument("--blocks")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--schedule", default="one",
                   help='"one" or a fraction like 0.1')
    s.add_argument("--shared-minmax", action="store_true",
                   help="normalize stim and rest windows with one min/max")
    s.add_argument("--C", type=float)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.add_argument("--curve")
    s.set_defaults(func=cmd_rfe)

    s = sub.add_parser("fc-expand", help="correlation-thresholded expansion")
    s.add_argument("--dataset", required=True)
    s.add_argument("--blocks", required=True)
    s.add_argument("--selection", required=True)
    s.add_argument("--threshold", type=float, default=0.95)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fc_expand)

    s = sub.add_parser("atlas-build", help="assemble an atlas file")
    s.add_argument("--dataset", required=True)
    s.add_argument("--selection", required=True)
    s.add_argument("--expanded")
    s.add_argument("--threshold", type=float, default=0.95)
    s.add_argument("--name", default="atlas")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_atlas_build)

    s = sub.add_parser("alff", help="voxelwise low-frequency amplitude map")
    s.add_argument("--volume", required=True)
    s.add_argument("--mask")
    s.add_argument("--band", type=float, nargs=2, default=(0.01, 0.08))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_alff)

    s = sub.add_parser("group-stats", help="group t-test, FDR and clusters")
    s.add_argument("--rest-dataset", required=True)
    s.add_argument("--atlas")
    s.add_argument("--band", type=float, nargs=2, default=(0.01, 0.08))
    s.add_argument("--q", type=float, default=0.01)
    s.add_argument("--connectivity", type=int, choices=(6, 18, 26),
                   default=26)
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(func=cmd_group_stats)

    s = sub.add_parser("classify", help="cost-sensitive RBF grid search")
    s.add_argument("--rest-dataset", required=True)
    s.add_argument("--atlas", required=True)
    s.add_argument("--mode", choices=classify_mod.FEATURE_MODES,
                   default="alff_per_unit")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("report", help="re-export result files as CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except ConfigError as e:
        log.error("config error: %s", e)
        return 2
    except NumericalError as e:
        log.error("numerical failure: %s", e)
        return 4
    except (DataError, EakError, OSError) as e:
        log.error("data error: %s", e)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
