import numpy as np
import pytest

from eak.blocks import Block
from eak.volume import Parcellation, Volume4D


def make_volume(data, tr=2.0, voxel_size=(3.0, 3.0, 3.0), affine=None):
    data = np.asarray(data, dtype=np.float64)
    if affine is None:
        affine = np.eye(4)
    return Volume4D(data=data, voxel_size_mm=voxel_size, tr_seconds=tr,
                    affine=affine)


@pytest.fixture
def tiny_volume():
    rng = np.random.default_rng(7)
    return make_volume(rng.normal(size=(4, 4, 3, 20)))


@pytest.fixture
def tiny_parcellation():
    labels = np.zeros((4, 4, 3), dtype=np.int64)
    labels[:2] = 1
    labels[2:] = 2
    return Parcellation(labels=labels, label_names={1: "A", 2: "B"})


def make_block(subject="s1", condition="positive", stim=(15, 16, 17, 18, 19),
               rest=(25, 26, 27, 28, 29)):
    return Block(subject_id=subject, condition=condition,
                 stim_volumes=tuple(stim), rest_volumes=tuple(rest))
