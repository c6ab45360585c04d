"""End-to-end differentiable forward pass: cloud + parameters -> rendered maps.

One projection feeds two blending passes: RGB uses the color opacity channel
and per-Gaussian values c + (c_hat - 0.5); thermal uses its own opacity and
sigmoid(t_base) + (t_hat - 0.5). Both heads emit sigmoid outputs recentred by
0.5 so a zero-initialized head renders the pure SH / base-temperature scene.
Pixel values are clamped to [0, 1] at loss time only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import ParamSet, Tensor, as_tensor, reshape, take
from .appearance import (color_head, eval_sh, init_appearance_params,
                         orthogonal_extract, positional_encoding,
                         thermal_feature, thermal_head)
from .heat import NeighborGraph, build_knn, heat_refine, init_heat_params, neighbor_count
from .losses import LossWeights, breakdown, modality_loss, smoothness_loss, total_loss
from .radiation import (RadiationConfig, boltz_loss, depth_uncertainty,
                        init_uncertainty_params, radiation_map)
from .rasterize import (RenderOutput, View, prepare_blend, project_gaussians,
                        render_values)

CLOUD_PARAM_NAMES = ("mu", "rot", "log_scale", "o_c", "o_t", "sh", "e_m", "t_base")

PARAM_GROUPS = {
    "mu": "position", "rot": "rotation", "log_scale": "scale",
    "o_c": "opacity", "o_t": "opacity", "sh": "sh",
    "e_m": "embedding", "t_base": "t_base",
}


@dataclass
class ModelConfig:
    """Architecture knobs shared by training, rendering and evaluation."""

    sh_degree: int = 2
    embed_dim: int = 16
    l_v: int = 4            # view-direction encoding octaves (RGB branch)
    l_p: int = 6            # position encoding octaves (thermal branch)
    feature_dim: int = 32
    hidden: int = 32
    knn_n: int = 3          # K = n^2 - 1 neighbors
    enable_heat: bool = True

    @property
    def sh_bands(self):
        return (self.sh_degree + 1) ** 2

    @property
    def knn_k(self):
        return neighbor_count(self.knn_n)


def init_model_params(rng, cfg: ModelConfig, dtype=np.float64):
    """All learnable non-cloud parameters (appearance, heat, uncertainty)."""
    params = init_appearance_params(
        rng, cfg.sh_bands, cfg.embed_dim, cfg.l_v, cfg.l_p, cfg.feature_dim,
        cfg.hidden, dtype=dtype)
    params.update(init_heat_params(cfg.knn_k, cfg.feature_dim, dtype=dtype))
    params.update(init_uncertainty_params(dtype=dtype))
    return params


def cloud_param_arrays(cloud):
    return {name: getattr(cloud, name) for name in CLOUD_PARAM_NAMES}


def build_param_set(cloud, model_params) -> ParamSet:
    """ParamSet over cloud attributes plus model weights, grouped for the optimizer."""
    params = ParamSet()
    for name, arr in cloud_param_arrays(cloud).items():
        params.add(name, arr.copy(), PARAM_GROUPS[name])
    for name, arr in model_params.items():
        params.add(name, np.array(arr, copy=True), "mlp")
    return params


def _get(params, name):
    return as_tensor(params[name])


def thermal_values(params, cfg: ModelConfig, graph: NeighborGraph | None):
    """Per-Gaussian thermal value sigmoid(t_base) + (t_hat - 0.5) for all M.

    View-independent by construction: only Gaussian attributes enter. The heat
    transform is skipped when disabled or no graph is supplied.
    """
    e_m, sh = _get(params, "e_m"), _get(params, "sh")
    mu, o_t = _get(params, "mu"), _get(params, "o_t")
    e_t = as_tensor(orthogonal_extract(e_m, sh, params))
    pe_p = positional_encoding(mu, cfg.l_p)
    feat = as_tensor(thermal_feature(e_t, pe_p, params))
    if cfg.enable_heat and graph is not None:
        feat = as_tensor(heat_refine(feat, o_t, graph, params))
    t_hat = as_tensor(thermal_head(feat, params))
    return ad.sigmoid(_get(params, "t_base")) + (t_hat - 0.5)


def rgb_values(params, cfg: ModelConfig, survivor_idx, camera_center):
    """Per-Gaussian RGB value c + (c_hat - 0.5) for the view's survivors."""
    mu_s = take(_get(params, "mu"), survivor_idx)
    sh_s = take(_get(params, "sh"), survivor_idx)
    e_s = take(_get(params, "e_m"), survivor_idx)
    rel = mu_s - np.asarray(camera_center, dtype=mu_s.dtype)
    norm = ad.sqrt(ad.tsum(rel * rel, axis=1, keepdims=True))
    view_dir = rel / norm
    base = as_tensor(eval_sh(sh_s, view_dir, cfg.sh_degree))
    c_hat = as_tensor(color_head(e_s, positional_encoding(view_dir, cfg.l_v), params))
    return base + (c_hat - 0.5)


def render_view(params, view: View, cfg: ModelConfig,
                graph: NeighborGraph | None = None) -> RenderOutput:
    """Render RGB, thermal, depth and accumulation maps for one view.

    ``params`` is a ParamSet (training) or a plain mapping of arrays
    (forward-only). Returns Tensors; read ``.data`` for plain images. The aux
    dict carries the screen-space mean tensor and survivor indices for
    densification statistics.
    """
    if cfg.enable_heat and graph is None:
        graph = build_knn(np.asarray(_get(params, "mu").data), cfg.knn_k)
    proj = project_gaussians(_get(params, "mu"), _get(params, "rot"),
                             _get(params, "log_scale"), view)
    out = RenderOutput()
    out.aux = {"mean2d": proj.mean2d, "survivors": proj.indices}
    zero_img = ad.tensor(np.zeros((view.height, view.width)))
    if proj.count == 0:
        out.i_c = ad.tensor(np.zeros((view.height, view.width, 3)))
        out.i_t, out.d_c, out.d_t = zero_img, zero_img, zero_img
        out.acc_c, out.acc_t = zero_img, zero_img
        return out

    opacity_bound = np.maximum(expit(_get(params, "o_c").data[proj.indices]),
                               expit(_get(params, "o_t").data[proj.indices]))
    ctx = prepare_blend(proj.mean2d.data, proj.conic.data, proj.depth.data,
                        proj.radii, view.width, view.height, opacity_bound)

    v_rgb = rgb_values(params, cfg, proj.indices, view.camera_center)
    opac_c = ad.sigmoid(take(_get(params, "o_c"), proj.indices))
    out.i_c, out.d_c, out.acc_c = render_values(proj, opac_c, v_rgb, view, ctx)

    v_t_all = thermal_values(params, cfg, graph)
    v_t = reshape(take(v_t_all, proj.indices), (-1, 1))
    opac_t = ad.sigmoid(take(_get(params, "o_t"), proj.indices))
    out.i_t, out.d_t, out.acc_t = render_values(proj, opac_t, v_t, view, ctx)
    return out


@dataclass
class LossConfig:
    """Everything loss assembly needs beyond the render itself."""

    weights: LossWeights = field(default_factory=LossWeights)
    radiation: RadiationConfig = field(default_factory=RadiationConfig)
    ssim_window: int = 11
    enable_boltz: bool = True
    edge_aware_smooth: bool = False


def compute_losses(out: RenderOutput, view: View, params, loss_cfg: LossConfig):
    """Total training loss for one rendered view plus its breakdown.

    Rendered images are clamped to [0, 1] here (and only here); gradients from
    the radiation term flow into both the thermal render and its depth map.
    """
    i_c = ad.clip(as_tensor(out.i_c), 0.0, 1.0)
    i_t = ad.clip(as_tensor(out.i_t), 0.0, 1.0)
    gt_rgb = np.asarray(view.gt_rgb, dtype=i_c.dtype)
    gt_t = np.asarray(view.gt_thermal, dtype=i_t.dtype)

    w = loss_cfg.weights
    l_c = modality_loss(i_c, gt_rgb, w.lambda_dssim)
    l_t = modality_loss(i_t, gt_t, w.lambda_dssim)
    l_smooth = (as_tensor(smoothness_loss(i_c, out.d_c, gt_rgb, loss_cfg.edge_aware_smooth))
                + as_tensor(smoothness_loss(i_t, out.d_t, gt_t, loss_cfg.edge_aware_smooth)))
    if loss_cfg.enable_boltz and w.lambda_boltz > 0.0:
        e_r = radiation_map(gt_t, out.d_t, loss_cfg.radiation)
        u = depth_uncertainty(out.d_t, params)
        l_boltz = boltz_loss(i_t, e_r, u, loss_cfg.radiation.window)
    else:
        l_boltz = ad.tensor(0.0)
    total = total_loss(l_c, l_t, l_smooth, l_boltz, w)
    return total, breakdown(l_c, l_t, l_smooth, l_boltz, w)


def render_arrays(cloud, model_params, view: View, cfg: ModelConfig,
                  graph: NeighborGraph | None = None) -> RenderOutput:
    """Forward-only render from plain arrays; every output field is numpy."""
    params = dict(cloud_param_arrays(cloud))
    params.update(model_params)
    out = render_view(params, view, cfg, graph)
    for name in ("i_c", "i_t", "d_c", "d_t", "acc_c", "acc_t"):
        value = getattr(out, name)
        if isinstance(value, Tensor):
            setattr(out, name, value.data)
    return out
