import numpy as np
import pytest

from splatlabel import synthetic as syn


@pytest.fixture(scope="session")
def small_orchard():
    return syn.make_orchard(n_trees=2, fruits_per_tree=2, seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def make_camera(center=(-2.0, 0.0, 0.0), target=(0.0, 0.0, 0.0), width=200, height=200,
                focal=900.0, camera_id="cam0"):
    return syn.look_at_camera(center, target, syn.default_intrinsics(width, height, focal),
                              camera_id)
