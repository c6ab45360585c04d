"""Shared helpers for the test suite."""

import numpy as np
import pytest

from thermosplat.rasterize import View


def quat_multiply(q1, q2):
    """Hamilton product of (w, x, y, z) quaternions."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_rotate(q, v):
    """Rotate a 3-vector by a unit quaternion."""
    w, x, y, z = q
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    return r @ np.asarray(v)


def random_unit_quaternion(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


@pytest.fixture
def simple_view():
    """A 32x32 camera at the origin looking down +z."""
    return View(width=32, height=32, fx=40.0, fy=40.0, cx=16.0, cy=16.0,
                rotation=np.eye(3), translation=np.zeros(3), near=0.1, far=100.0)


def make_view(width=32, height=32, fx=40.0, z_axis=True):
    return View(width=width, height=height, fx=fx, fy=fx,
                cx=width / 2.0, cy=height / 2.0,
                rotation=np.eye(3), translation=np.zeros(3), near=0.1, far=100.0)
