"""Photometric and smoothness losses, total-loss assembly, and eval metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import DataError
from .gaussians import _maybe_data
from .imaging import forward_differences, local_moments

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class LossWeights:
    lambda_dssim: float = 0.2
    lambda_smooth: float = 0.6
    lambda_boltz: float = 0.05    # scheduled; pass the current value

    def __post_init__(self):
        if min(self.lambda_dssim, self.lambda_smooth, self.lambda_boltz) < 0:
            raise DataError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l_c: float
    l_t: float
    l_smooth: float
    l_boltz: float
    l_total: float
    weights: LossWeights = field(default_factory=LossWeights)

    def to_dict(self):
        return {
            "l_c": self.l_c, "l_t": self.l_t, "l_smooth": self.l_smooth,
            "l_boltz": self.l_boltz, "l_total": self.l_total,
            "lambda_dssim": self.weights.lambda_dssim,
            "lambda_smooth": self.weights.lambda_smooth,
            "lambda_boltz": self.weights.lambda_boltz,
        }


def _per_channel(img):
    t = as_tensor(img)
    if t.ndim == 2:
        return [t]
    return [t[:, :, c] for c in range(t.shape[2])]


def ssim(a, b, window=11, sigma=1.5):
    """Standard SSIM with a Gaussian window at unit dynamic range.

    Multi-channel images are averaged over channels. Same-size windows use
    replicate padding, so all pixels count.
    """
    at, bt = as_tensor(a), as_tensor(b)
    if at.shape != bt.shape:
        raise DataError(f"shape mismatch {at.shape} vs {bt.shape}")
    vals = []
    for ca, cb in zip(_per_channel(at), _per_channel(bt)):
        mu_a, mu_b, var_a, var_b, cov = local_moments(ca, cb, window, sigma)
        num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
        vals.append(ad.tmean(num / den))
    out = vals[0] if len(vals) == 1 else ad.tmean(ad.stack(vals))
    return _maybe_data(out, a, b)


def modality_loss(render, gt, lambda_dssim=0.2):
    """(1 - lambda) L1 + lambda (1 - SSIM) / 2 against the ground truth."""
    rt, gtt = as_tensor(render), as_tensor(gt)
    if rt.shape != gtt.shape:
        raise DataError(f"shape mismatch {rt.shape} vs {gtt.shape}")
    l1 = ad.tmean(ad.absolute(rt - gtt))
    out = (1.0 - lambda_dssim) * l1
    if lambda_dssim > 0.0:
        out = out + lambda_dssim * (1.0 - as_tensor(ssim(rt, gtt))) * 0.5
    return _maybe_data(out, render, gt)


def smoothness_loss(image, depth, gt_image=None, edge_aware=False):
    """Mean absolute forward differences of a render and its depth map.

    With ``edge_aware`` on, both terms are weighted by exp(-|grad gt|) so
    penalties relax across true image edges (off by default).
    """
    img, dep = as_tensor(image), as_tensor(depth)
    if img.shape[:2] != dep.shape[:2]:
        raise DataError(f"shape mismatch {img.shape} vs {dep.shape}")
    gx, gy = forward_differences(img)
    dgx, dgy = forward_differences(dep)
    if edge_aware:
        if gt_image is None:
            raise DataError("edge-aware smoothness requires the ground-truth image")
        ggx, ggy = forward_differences(np.asarray(gt_image))
        if ggx.ndim == 3:
            ggx, ggy = ggx.data.mean(axis=2), ggy.data.mean(axis=2)
        else:
            ggx, ggy = ggx.data, ggy.data
        wx, wy = np.exp(-ggx), np.exp(-ggy)
        if gx.ndim == 3:
            gx, gy = gx * wx[:, :, None], gy * wy[:, :, None]
        else:
            gx, gy = gx * wx, gy * wy
        dgx, dgy = dgx * wx, dgy * wy
    out = ad.tmean(gx) + ad.tmean(gy) + ad.tmean(dgx) + ad.tmean(dgy)
    return _maybe_data(out, image, depth)


def total_loss(l_c, l_t, l_smooth, l_boltz, weights: LossWeights):
    """L_c + L_t + lambda_smooth * L_smooth + lambda_boltz * L_boltz."""
    parts = {"l_c": l_c, "l_t": l_t, "l_smooth": l_smooth, "l_boltz": l_boltz}
    for name, part in parts.items():
        value = part.data if isinstance(part, Tensor) else np.asarray(part)
        if not np.isfinite(value).all():
            raise DataError(f"non-finite loss term {name}")
    out = (as_tensor(l_c) + as_tensor(l_t)
           + weights.lambda_smooth * as_tensor(l_smooth)
           + weights.lambda_boltz * as_tensor(l_boltz))
    return _maybe_data(out, l_c, l_t, l_smooth, l_boltz)


def breakdown(l_c, l_t, l_smooth, l_boltz, weights: LossWeights) -> LossBreakdown:
    total = total_loss(l_c, l_t, l_smooth, l_boltz, weights)

    def val(x):
        return float(x.data) if isinstance(x, Tensor) else float(x)

    return LossBreakdown(val(l_c), val(l_t), val(l_smooth), val(l_boltz), val(total), weights)


def psnr(render, gt):
    """Peak signal-to-noise ratio at unit peak; +inf for identical images."""
    r, g = np.asarray(render, dtype=float), np.asarray(gt, dtype=float)
    if r.shape != g.shape:
        raise DataError(f"shape mismatch {r.shape} vs {g.shape}")
    mse = float(np.mean((r - g) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


def metrics(render, gt, t_range=None):
    """PSNR, SSIM and (for thermal, given (t_min, t_max)) MAE in deg C."""
    out = {
        "psnr": psnr(render, gt),
        "ssim": float(as_tensor(ssim(np.asarray(render, dtype=float),
                                     np.asarray(gt, dtype=float))).data),
    }
    if t_range is not None:
        t_min, t_max = t_range
        out["mae_c"] = float(np.mean(np.abs(np.asarray(render) - np.asarray(gt)))
                             * (t_max - t_min))
    return out
