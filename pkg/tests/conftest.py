import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from chromafield.dataset import load_viewset
from chromafield.scenegen import AxisBox, Rig, Room, SceneSpec, Sphere, bake_dataset


def small_scene(view_count=8, size=64) -> SceneSpec:
    """A reduced desk-style scene for fast unit tests."""
    return SceneSpec(
        primitives=[
            Sphere((-0.45, -0.95, -0.2), 0.45, (0.75, 0.25, 0.2)),
            AxisBox((0.4, -1.2, 0.3), (0.55, 0.6, 0.55), (0.2, 0.4, 0.75)),
        ],
        room=Room((3.0, 3.0, 3.0), (0.62, 0.58, 0.5)),
        rig=Rig(view_count=view_count, test_view_count=2, width=size, height_px=size),
    )


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Baked small scene: (scene, dataset dir, train viewset, test viewset)."""
    scene = small_scene()
    root = tmp_path_factory.mktemp("small_scene")
    bake_dataset(scene, root)
    return scene, root, load_viewset(root), load_viewset(root, "transforms_test.json")


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
