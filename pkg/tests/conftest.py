import numpy as np
import pytest

from keypose.meshes import cube, cylinder, helix, l_bracket, sphere
from keypose.sampling import build_object_model


@pytest.fixture(scope="session")
def cube_model():
    return build_object_model(cube(), k_keypoints=100, seed=0)


@pytest.fixture(scope="session")
def cylinder_model():
    return build_object_model(cylinder(), k_keypoints=100, seed=0)


@pytest.fixture(scope="session")
def sphere_model():
    return build_object_model(sphere(), k_keypoints=100, seed=0)


@pytest.fixture(scope="session")
def bracket_model():
    return build_object_model(l_bracket(), k_keypoints=100, seed=0)


@pytest.fixture(scope="session")
def helix_model():
    return build_object_model(helix(), k_keypoints=100, seed=0)


def random_cloud(rng: np.random.Generator, n: int, scale: float = 1.0):
    return rng.uniform(-scale, scale, size=(n, 3))


def random_unit_vectors(rng: np.random.Generator, n: int):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
