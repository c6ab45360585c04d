"""Depth-aware thermal radiation supervision.

A radiation map is formed from the ground-truth temperature (fourth-power law)
divided by the squared rendered thermal depth (inverse-square law), then
min-max normalized per image. Structural agreement between this map and the
thermal render is scored by a structure-only SSIM, attenuated by a learned
per-pixel depth uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, filter2d, pad_replicate
from .errors import DataError
from .gaussians import _maybe_data
from .imaging import local_moments

STEFAN_BOLTZMANN = 5.670374419e-8  # W m^-2 K^-4
KELVIN_OFFSET = 273.15
SSIM_EPS = 1e-8


@dataclass
class RadiationConfig:
    tau: float = STEFAN_BOLTZMANN
    t_min: float = -20.0          # deg C at normalized 0
    t_max: float = 120.0          # deg C at normalized 1
    window: int = 11
    depth_floor: float = 1e-3     # world units; guards the 1/D^2 singularity

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise DataError("need t_min < t_max")
        if self.window < 3 or self.window % 2 == 0:
            raise DataError("window must be odd and >= 3")
        if not self.depth_floor > 0:
            raise DataError("depth_floor must be positive")


def _check_nan(arr, name):
    bad = np.isnan(np.asarray(arr))
    if bad.any():
        i, j = np.argwhere(bad)[0][:2]
        raise DataError(f"NaN in {name} at pixel ({int(i)}, {int(j)})")


def radiation_raw(t_gt_norm, depth, cfg: RadiationConfig):
    """Unnormalized radiation tau * T_kelvin^4 / max(depth, floor)^2."""
    _check_nan(t_gt_norm, "t_gt_norm")
    d = as_tensor(depth)
    _check_nan(d.data, "depth")
    t_kelvin = (cfg.t_min + np.asarray(t_gt_norm) * (cfg.t_max - cfg.t_min)
                + KELVIN_OFFSET).astype(d.dtype.type)
    d_safe = ad.clip(d, lo=cfg.depth_floor)
    out = (cfg.tau * t_kelvin**4) / (d_safe * d_safe)
    return _maybe_data(out, depth)


def radiation_map(t_gt_norm, depth, cfg: RadiationConfig):
    """Per-image min-max normalized radiation map in [0, 1].

    A constant raw map (no usable structure) normalizes to all zeros.
    Differentiable with respect to the rendered depth.
    """
    raw = as_tensor(radiation_raw(t_gt_norm, depth, cfg))
    lo = ad.amin(raw)
    hi = ad.amax(raw)
    span = hi.data - lo.data
    if span < 1e-12:
        out = as_tensor(np.zeros_like(raw.data))
    else:
        out = (raw - lo) / (hi - lo)
    return _maybe_data(out, depth)


def s_ssim(a, b, window=11):
    """Structure-only SSIM 2*cov / (var_a + var_b + eps).

    Returns (scalar mean, per-pixel map); windows are Gaussian (sigma 1.5)
    with replicate padding, so every pixel participates in the mean.
    """
    at, bt = as_tensor(a), as_tensor(b)
    if at.shape != bt.shape:
        raise DataError(f"shape mismatch {at.shape} vs {bt.shape}")
    _, _, var_a, var_b, cov = local_moments(at, bt, window)
    smap = (2.0 * cov) / (var_a + var_b + SSIM_EPS)
    scalar = ad.tmean(smap)
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        return scalar, smap
    return scalar.data.item(), smap.data


def depth_uncertainty(depth, params):
    """Per-pixel uncertainty sigmoid(psi * depth) with replicate padding."""
    d = as_tensor(depth)
    psi_w = as_tensor(params["psi_w"])
    response = filter2d(pad_replicate(d, psi_w.shape[0] // 2), psi_w) + params["psi_b"]
    out = ad.sigmoid(response)
    return _maybe_data(out, depth, params["psi_w"])


def boltz_loss(i_t, e_r, u, window=11):
    """Uncertainty-aware structural loss: mean of (1 - s)/exp(u) + u."""
    it, er, ut = as_tensor(i_t), as_tensor(e_r), as_tensor(u)
    if not (it.shape == er.shape == ut.shape):
        raise DataError(
            f"shape mismatch: render {it.shape}, radiation {er.shape}, uncertainty {ut.shape}")
    _, smap = s_ssim(it, er, window)
    smap = as_tensor(smap)
    per_pixel = (1.0 - smap) / ad.exp(ut) + ut
    out = ad.tmean(per_pixel)
    return _maybe_data(out, i_t, e_r, u)


def init_uncertainty_params(dtype=np.float64):
    """Zero filter and bias: uncertainty starts flat at 0.5 everywhere."""
    return {
        "psi_w": np.zeros((3, 3), dtype=dtype),
        "psi_b": np.asarray(0.0, dtype=dtype),
    }
