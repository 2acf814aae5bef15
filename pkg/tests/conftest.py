import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kbuf.scene import Camera, PointCloud, orbit_camera


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_camera(rng, width=64, height=64, radius=3.0):
    az = rng.uniform(0, 2 * np.pi)
    el = rng.uniform(-0.9, 0.9)
    return orbit_camera(az, radius=radius, elevation=el, width=width,
                        height=height, focal=1.2 * max(width, height))


def random_cloud(rng, n, radius=1.0, colors=True):
    p = rng.normal(size=(n, 3))
    p = p / np.linalg.norm(p, axis=1, keepdims=True) * rng.uniform(0.3, radius, size=(n, 1))
    c = rng.uniform(0, 1, size=(n, 3)) if colors else None
    return PointCloud(positions=p, colors=c)


def identity_camera(width=100, height=100, focal=100.0, cx=None, cy=None):
    return Camera(width=width, height=height, focal=focal,
                  cx=width / 2 if cx is None else cx,
                  cy=height / 2 if cy is None else cy,
                  rotation=np.eye(3), translation=np.zeros(3))
