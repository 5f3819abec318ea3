import numpy as np
import pytest

from rekit.scene import Scatterer, Scene, load_scene, CANONICAL_SCENE_PATH


@pytest.fixture(scope="session")
def canonical():
    return load_scene(CANONICAL_SCENE_PATH)


def make_scene(boxes=(), tx=(0.0, 0.0, 20.0), receivers=((40.0, 0.0, 1.5),), frequency=3.5e9):
    scatterers = tuple(Scatterer(i, lo, hi) for i, (lo, hi) in enumerate(boxes))
    return Scene(tx=np.array(tx, float), receivers=np.array(receivers, float), scatterers=scatterers, frequency=frequency)


def random_box(rng, lo=-20.0, hi=20.0, size=(1.0, 8.0)):
    c = rng.uniform(lo, hi, 3)
    e = rng.uniform(*size, 3)
    return c - e / 2, c + e / 2
