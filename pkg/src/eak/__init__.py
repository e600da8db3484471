"""Emotion-atlas construction and evaluation toolkit."""

from .alff import (
    ClusterReport,
    StatMap,
    alff,
    alff_map,
    bandpass,
    extract_clusters,
    fdr_bh,
    two_sample_t,
)
from .atlas import AtlasSpec, atlas_series, build_atlas, fc_expand, \
    load_atlas, save_atlas
from .blocks import Block, BlockDesign, pool_blocks, split_blocks
from .classify import atlas_features, grid_search_cv, metrics
from .features import FeatureMatrix, assemble_matrix, block_feature, \
    minmax_normalize
from .rfe import RfeTrace, rank_scores, svm_rfe, two_stage_select
from .svm import KernelSpec, SvmModel, TrainConfig, decision_value, \
    k_fold_cv, linear_weights, predict, train_svm
from .synth import SynthConfig, synth_rest_dataset, synth_task_dataset
from .volume import (
    Parcellation,
    Series,
    Volume4D,
    WorldCoord,
    grid_to_world,
    load_parcellation,
    load_volume,
    region_mean_series,
    save_volume,
    voxel_series,
)

__version__ = "0.1.0"
