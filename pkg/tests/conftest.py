import numpy as np
import pytest

from posediff.diffusion import cosine_schedule
from posediff.geometry import SceneConfig, generate_scene
from posediff.lie import PoseSet, random_rotations


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def schedule():
    return cosine_schedule(200)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneConfig(n_scans=5, n_world_points=3000, seed=7))


@pytest.fixture(scope="session")
def clean_scene():
    return generate_scene(SceneConfig(n_scans=6, n_world_points=3000, point_noise=0.0, seed=11))


def random_poses(rng, n, trans=5.0):
    return PoseSet(random_rotations(rng, n), rng.uniform(-trans, trans, (n, 3)))


def random_twists(rng, n, max_angle=np.pi - 1e-3, max_trans=10.0):
    axis = rng.standard_normal((n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    omega = axis * (max_angle * rng.random((n, 1)))
    v = rng.standard_normal((n, 3))
    v *= (max_trans * rng.random((n, 1))) / np.linalg.norm(v, axis=1, keepdims=True)
    return np.hstack([omega, v])
