"""Gaussian cloud data model: covariance construction and density evaluation.

The cloud is stored as one contiguous array per attribute (array-of-attributes
layout). Temperatures and opacities are kept as pre-sigmoid logits; scales are
kept as logs so that the constructed covariance is positive definite by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, as_tensor, reshape, stack, swapaxes
from . import autodiff as ad


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=float)
    return np.log(y / (1.0 - y))


def _maybe_data(out, *ins):
    """Return plain numpy unless any input rode the tape."""
    if any(isinstance(x, Tensor) for x in ins):
        return out
    return out.data


def quat_to_rotmat(rot):
    """Unit-quaternion (w, x, y, z) batch to rotation matrices.

    Quaternions are renormalized internally, so near-unit input is fine.
    Accepts (M, 4) arrays or Tensors; returns (M, 3, 3) of the same kind.
    """
    q = as_tensor(rot)
    norm = ad.sqrt(ad.tsum(q * q, axis=1, keepdims=True))
    q = q / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    cols = [
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y),
    ]
    flat = stack(cols, axis=-1)
    out = reshape(flat, (-1, 3, 3))
    return _maybe_data(out, rot)


def covariance_from_rs(rot, log_scale):
    """Covariance Sigma = R S S^T R^T from quaternions and log-scales.

    Works on (M, 4) / (M, 3) batches or a single (4,) / (3,) pair; symmetric
    positive semi-definite output with eigenvalues exp(2 * log_scale).
    """
    single = np.asarray(rot if not isinstance(rot, Tensor) else rot.data).ndim == 1
    q = as_tensor(rot)
    s = as_tensor(log_scale)
    if single:
        q = reshape(q, (1, 4))
        s = reshape(s, (1, 3))
    rotmat = as_tensor(quat_to_rotmat(q))
    scaled = rotmat * reshape(ad.exp(s), (-1, 1, 3))
    cov = scaled @ swapaxes(scaled, -1, -2)
    if single:
        cov = reshape(cov, (3, 3))
    return _maybe_data(cov, rot, log_scale)


def gaussian_density(mu, rot, log_scale, x):
    """Unnormalized 3D Gaussian density exp(-0.5 d^T Sigma^-1 d) at x.

    Equals 1 at x = mu and decays monotonically along any ray from mu.
    """
    cov = covariance_from_rs(np.asarray(rot, dtype=float), np.asarray(log_scale, dtype=float))
    d = np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)
    m = d @ np.linalg.solve(cov, d)
    return float(np.exp(-0.5 * m))


@dataclass
class Gaussian:
    """A single Gaussian, mainly for tests and point diagnostics."""

    mu: np.ndarray        # (3,)
    rot: np.ndarray       # (4,) unit quaternion (w, x, y, z)
    log_scale: np.ndarray  # (3,)
    o_c: float            # RGB opacity logit
    o_t: float            # thermal opacity logit
    sh: np.ndarray        # (3, (deg+1)^2)
    e_m: np.ndarray       # (D_e,)
    t_base: float         # thermal logit

    def density(self, x):
        return gaussian_density(self.mu, self.rot, self.log_scale, x)


@dataclass
class GaussianCloud:
    """Array-of-attributes container for M Gaussians."""

    mu: np.ndarray        # (M, 3)
    rot: np.ndarray       # (M, 4)
    log_scale: np.ndarray  # (M, 3)
    o_c: np.ndarray       # (M,)
    o_t: np.ndarray       # (M,)
    sh: np.ndarray        # (M, 3, (deg+1)^2)
    e_m: np.ndarray       # (M, D_e)
    t_base: np.ndarray    # (M,)
    sh_degree: int = 2
    embed_dim: int = 16

    ATTRIBUTES = ("mu", "rot", "log_scale", "o_c", "o_t", "sh", "e_m", "t_base")

    @property
    def count(self):
        return self.mu.shape[0]

    @property
    def sh_bands(self):
        return (self.sh_degree + 1) ** 2

    def copy(self):
        return replace(self, **{a: getattr(self, a).copy() for a in self.ATTRIBUTES})

    def astype(self, dtype):
        return replace(self, **{a: getattr(self, a).astype(dtype) for a in self.ATTRIBUTES})

    def __getitem__(self, mask):
        """Row-select every attribute (boolean mask or index array)."""
        return replace(self, **{a: getattr(self, a)[mask] for a in self.ATTRIBUTES})


def concatenate_clouds(a: GaussianCloud, b: GaussianCloud) -> GaussianCloud:
    if (a.sh_degree, a.embed_dim) != (b.sh_degree, b.embed_dim):
        raise ValueError("cloud metadata mismatch")
    return replace(
        a, **{attr: np.concatenate([getattr(a, attr), getattr(b, attr)]) for attr in a.ATTRIBUTES}
    )


def validate_cloud(cloud: GaussianCloud):
    """Structural and numeric diagnostics; an empty list means valid."""
    issues = []
    m = cloud.mu.shape[0]
    if m < 1:
        issues.append("cloud is empty (M == 0)")
    expected = {
        "mu": (m, 3),
        "rot": (m, 4),
        "log_scale": (m, 3),
        "o_c": (m,),
        "o_t": (m,),
        "sh": (m, 3, cloud.sh_bands),
        "e_m": (m, cloud.embed_dim),
        "t_base": (m,),
    }
    for name, shape in expected.items():
        arr = getattr(cloud, name)
        if arr.shape != shape:
            issues.append(f"{name}: shape {arr.shape} does not match expected {shape}")
            continue
        bad = ~np.isfinite(arr)
        if bad.any():
            idx = int(np.argwhere(bad)[0][0])
            issues.append(f"{name}: non-finite value at Gaussian {idx}")
    if cloud.rot.shape == (m, 4):
        norms = np.linalg.norm(cloud.rot, axis=1)
        finite = np.isfinite(norms)
        tiny = finite & (norms < 1e-8)
        if tiny.any():
            issues.append(f"rot: near-zero quaternion at Gaussian {int(np.flatnonzero(tiny)[0])}")
    return issues


def stable_unit_quaternions(rot):
    """Normalize until renormalization is a bit-exact no-op per row.

    The optimizer renormalizes quaternions after every step; starting from a
    fixed point keeps an untouched cloud byte-stable across steps. Division
    can 2-cycle at the last ulp, so rows that fail to settle get a tiny
    multiplicative nudge and another attempt.
    """
    q = np.atleast_2d(np.array(rot, dtype=float))
    for attempt in range(32):
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
        again = q / np.linalg.norm(q, axis=-1, keepdims=True)
        unstable = np.any(again != q, axis=-1)
        if not unstable.any():
            break
        # a scale nudge would be normalized away; perturb the direction
        q[unstable, attempt % q.shape[-1]] += 3e-8 * (attempt + 1)
    return q.reshape(np.shape(rot))


def min_log_scale(scene_extent):
    """Lower clamp for log-scales; keeps every covariance invertible."""
    return float(np.log(1e-6 * scene_extent))


def random_cloud(rng, count, extent=1.0, sh_degree=2, embed_dim=16,
                 center=(0.0, 0.0, 0.0), opacity=0.1, dtype=np.float64) -> GaussianCloud:
    """Random initialization inside a cube of half-size ``extent``.

    Per-point scales start at the mean distance to the three nearest
    neighbors, so the initial render covers the scene without giant splats.
    """
    mu = center + rng.uniform(-extent, extent, size=(count, 3))
    if count > 3:
        d2 = ((mu[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        nn = np.sqrt(np.sort(d2, axis=1)[:, :3]).mean(axis=1)
        spacing = np.maximum(nn, 1e-6 * extent)
    else:
        spacing = np.full(count, extent)
    log_scale = np.tile(np.log(spacing)[:, None], (1, 3))
    rot = np.zeros((count, 4))
    rot[:, 0] = 1.0
    bands = (sh_degree + 1) ** 2
    sh = np.zeros((count, 3, bands))
    sh[:, :, 0] = rng.normal(0.0, 0.1, size=(count, 3))
    cloud = GaussianCloud(
        mu=mu,
        rot=rot,
        log_scale=log_scale,
        o_c=np.full(count, inverse_sigmoid(opacity)),
        o_t=np.full(count, inverse_sigmoid(opacity)),
        sh=sh,
        e_m=rng.normal(0.0, 0.01, size=(count, embed_dim)),
        t_base=np.zeros(count),
        sh_degree=sh_degree,
        embed_dim=embed_dim,
    )
    return cloud.astype(dtype)
