"""Training orchestration: Adam updates, schedules, densification, checkpoints.

One optimizer step per iteration over a randomly chosen training view. The
whole loop is deterministic for a fixed seed: a single Generator drives
initialization, view selection and split sampling, and all numerics are
single-threaded numpy.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, asdict, field

import numpy as np

from .autodiff import ParamSet
from .errors import DataError
from .gaussians import GaussianCloud, min_log_scale, random_cloud
from .heat import build_knn
from .losses import LossWeights, metrics as image_metrics
from .pipeline import (CLOUD_PARAM_NAMES, LossConfig, ModelConfig,
                       build_param_set, compute_losses, init_model_params,
                       render_arrays, render_view)
from .radiation import RadiationConfig
from . import formats

MODEL_PARAM_GROUP = "mlp"


@dataclass
class TrainConfig:
    """All hyperparameters, schedules, densification thresholds and seeds."""

    iterations: int = 5000
    seed: int = 0
    dtype: str = "float32"
    # model architecture
    sh_degree: int = 2
    embed_dim: int = 16
    l_v: int = 4
    l_p: int = 6
    feature_dim: int = 32
    hidden: int = 32
    knn_n: int = 3
    enable_heat: bool = True
    enable_boltz: bool = True
    edge_aware_smooth: bool = False
    # loss weights and the boltz decay window
    lambda_dssim: float = 0.2
    lambda_smooth: float = 0.6
    boltz_start: float = 0.05
    boltz_end: float = 0.01
    boltz_decay_start: int = 500
    boltz_decay_end: int = 5000
    ssim_window: int = 11
    sssim_window: int = 11
    # optimizer (position lr scales with scene extent and decays exponentially)
    lr_position: float = 1.6e-4
    lr_position_final_scale: float = 0.01
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 0.05
    lr_sh: float = 2.5e-3
    lr_embedding: float = 1e-3
    lr_t_base: float = 0.05
    lr_mlp: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    # densification / pruning
    init_count: int = 200
    init_opacity: float = 0.1
    densify_interval: int = 100
    densify_start: int = 500
    densify_end: int = 5000
    densify_grad_threshold: float = 5e-7
    prune_opacity: float = 0.005
    percent_dense: float = 0.01
    split_factor: float = 1.6
    max_gaussians: int = 8000
    knn_interval: int = 100
    # bookkeeping
    eval_interval: int = 500
    scene_extent: float = 0.0   # 0 -> taken from dataset metadata

    def __post_init__(self):
        # 0 is allowed as an explicit no-op run (returns the initial cloud).
        if self.iterations < 0:
            raise DataError("iterations must be >= 0")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            sh_degree=self.sh_degree, embed_dim=self.embed_dim, l_v=self.l_v,
            l_p=self.l_p, feature_dim=self.feature_dim, hidden=self.hidden,
            knn_n=self.knn_n, enable_heat=self.enable_heat)

    def loss_config(self, step, extent) -> LossConfig:
        weights = LossWeights(
            lambda_dssim=self.lambda_dssim,
            lambda_smooth=self.lambda_smooth,
            lambda_boltz=lambda_boltz_at(step, self))
        radiation = RadiationConfig(window=self.sssim_window,
                                    depth_floor=1e-3 * max(extent, 1e-6))
        return LossConfig(weights=weights, radiation=radiation,
                          ssim_window=self.ssim_window, enable_boltz=self.enable_boltz,
                          edge_aware_smooth=self.edge_aware_smooth)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def lambda_boltz_at(step, cfg: TrainConfig):
    """Piecewise-linear decay over the densification window.

    The configured window is clamped to the run length, so short runs decay
    over whatever densification period actually happens.
    """
    start = min(cfg.boltz_decay_start, cfg.iterations)
    end = min(cfg.boltz_decay_end, cfg.iterations)
    if step <= start or end <= start:
        return cfg.boltz_start
    if step >= end:
        return cfg.boltz_end
    frac = (step - start) / (end - start)
    return cfg.boltz_start + frac * (cfg.boltz_end - cfg.boltz_start)


class Adam:
    """Adam with per-group learning rates over a ParamSet.

    Cloud parameters are row-resizable: densification keeps moments for
    surviving rows and zeroes them for new ones.
    """

    def __init__(self, cfg: TrainConfig, extent):
        self.beta1, self.beta2, self.eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        self.base_lr = {
            "position": cfg.lr_position * extent,
            "rotation": cfg.lr_rotation,
            "scale": cfg.lr_scale,
            "opacity": cfg.lr_opacity,
            "sh": cfg.lr_sh,
            "embedding": cfg.lr_embedding,
            "t_base": cfg.lr_t_base,
            MODEL_PARAM_GROUP: cfg.lr_mlp,
        }
        self.state: dict[str, dict] = {}

    def _state(self, name, data):
        st = self.state.get(name)
        if st is None or st["m"].shape != data.shape:
            st = {"m": np.zeros_like(data), "v": np.zeros_like(data), "t": 0}
            self.state[name] = st
        return st

    def step(self, params: ParamSet, grads, lr_scale=None):
        for name in params.names():
            g = grads[name]
            if not np.isfinite(g).all():
                raise DataError(f"non-finite gradient in {name}")
            t = params[name]
            st = self._state(name, t.data)
            st["t"] += 1
            st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * (g * g)
            m_hat = st["m"] / (1.0 - self.beta1 ** st["t"])
            v_hat = st["v"] / (1.0 - self.beta2 ** st["t"])
            group = params.group_of(name)
            lr = self.base_lr[group]
            if lr_scale and group in lr_scale:
                lr = lr * lr_scale[group]
            t.data = t.data - (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(t.data.dtype)

    def resize_cloud_rows(self, keep_idx, n_new):
        for name in CLOUD_PARAM_NAMES:
            st = self.state.get(name)
            if st is None:
                continue
            for key in ("m", "v"):
                kept = st[key][keep_idx]
                pad = np.zeros((n_new,) + kept.shape[1:], dtype=kept.dtype)
                st[key] = np.concatenate([kept, pad])


def _renormalize_rotations(params: ParamSet):
    rot = params["rot"].data
    params["rot"].data = rot / np.linalg.norm(rot, axis=1, keepdims=True)


def _clamp_scales(params: ParamSet, extent):
    ls = params["log_scale"].data
    params["log_scale"].data = np.maximum(ls, min_log_scale(extent))


def densify_and_prune(params: ParamSet, adam: Adam, grad_avg, cfg: TrainConfig,
                      extent, rng):
    """Clone small / split large high-gradient Gaussians, prune faint ones.

    Returns a change report. grad_avg is the mean screen-space positional
    gradient norm per Gaussian accumulated since the last call.
    """
    from scipy.special import expit

    m = params["mu"].data.shape[0]
    scales = np.exp(params["log_scale"].data).max(axis=1)
    high = grad_avg > cfg.densify_grad_threshold
    clone_mask = high & (scales <= cfg.percent_dense * extent)
    split_mask = high & (scales > cfg.percent_dense * extent)
    room = max(cfg.max_gaussians - m, 0)
    if int(clone_mask.sum()) + 2 * int(split_mask.sum()) > room:
        clone_mask[:] = False
        split_mask[:] = False

    opacity = np.maximum(expit(params["o_c"].data), expit(params["o_t"].data))
    prune_mask = opacity < cfg.prune_opacity

    keep_mask = ~(split_mask | prune_mask)
    keep_idx = np.flatnonzero(keep_mask)
    clone_idx = np.flatnonzero(clone_mask & ~prune_mask)
    split_idx = np.flatnonzero(split_mask & ~prune_mask)

    arrays = {name: params[name].data for name in CLOUD_PARAM_NAMES}
    new_rows = {name: [] for name in CLOUD_PARAM_NAMES}

    for name, arr in arrays.items():
        if clone_idx.size:
            new_rows[name].append(arr[clone_idx].copy())

    if split_idx.size:
        from .gaussians import quat_to_rotmat

        rotmats = quat_to_rotmat(arrays["rot"][split_idx])
        sigma = np.exp(arrays["log_scale"][split_idx])
        for _ in range(2):
            eps = rng.normal(size=(split_idx.size, 3)).astype(sigma.dtype)
            offset = np.einsum("mij,mj->mi", rotmats, eps * sigma)
            for name, arr in arrays.items():
                rows = arr[split_idx].copy()
                if name == "mu":
                    rows = rows + offset
                elif name == "log_scale":
                    rows = rows - np.log(cfg.split_factor)
                new_rows[name].append(rows)

    total_new = int(clone_idx.size + 2 * split_idx.size)
    for name in CLOUD_PARAM_NAMES:
        parts = [arrays[name][keep_idx]] + new_rows[name]
        params.replace(name, np.concatenate(parts) if len(parts) > 1 else parts[0].copy())

    count_after = params["mu"].data.shape[0]
    if count_after == 0:
        raise DataError("densify/prune removed every Gaussian")
    adam.resize_cloud_rows(keep_idx, total_new)
    return {
        "cloned": int(clone_idx.size),
        "split": int(split_idx.size),
        "pruned": int(prune_mask.sum()),
        "count_before": int(m),
        "count_after": int(count_after),
    }


@dataclass
class TrainResult:
    cloud: GaussianCloud
    model_params: dict
    loss_log: list = field(default_factory=list)
    metrics_log: list = field(default_factory=list)
    stopped_early: bool = False


def params_to_cloud(params: ParamSet, sh_degree, embed_dim) -> GaussianCloud:
    arrays = {name: params[name].data.copy() for name in CLOUD_PARAM_NAMES}
    return GaussianCloud(**arrays, sh_degree=sh_degree, embed_dim=embed_dim)


def extract_model_params(params: ParamSet) -> dict:
    return {name: params[name].data.copy() for name in params.names()
            if name not in CLOUD_PARAM_NAMES}


def evaluate(cloud: GaussianCloud, model_params, views, cfg: TrainConfig, meta=None):
    """Average PSNR/SSIM per modality and thermal MAE in deg C over views."""
    mcfg = cfg.model_config()
    t_min = meta["t_min"] if meta else -20.0
    t_max = meta["t_max"] if meta else 120.0
    graph = build_knn(cloud.mu, mcfg.knn_k) if mcfg.enable_heat else None
    sums = {"psnr_rgb": 0.0, "ssim_rgb": 0.0, "psnr_t": 0.0, "ssim_t": 0.0, "mae_c": 0.0}
    for view in views:
        out = render_arrays(cloud, model_params, view, mcfg, graph)
        i_c = np.clip(out.i_c, 0.0, 1.0)
        i_t = np.clip(out.i_t, 0.0, 1.0)
        m_rgb = image_metrics(i_c, view.gt_rgb)
        m_t = image_metrics(i_t, view.gt_thermal, t_range=(t_min, t_max))
        sums["psnr_rgb"] += m_rgb["psnr"]
        sums["ssim_rgb"] += m_rgb["ssim"]
        sums["psnr_t"] += m_t["psnr"]
        sums["ssim_t"] += m_t["ssim"]
        sums["mae_c"] += m_t["mae_c"]
    n = max(len(views), 1)
    result = {k: v / n for k, v in sums.items()}
    result["num_gaussians"] = cloud.count
    return result


def train(views, cfg: TrainConfig, meta=None, init_cloud=None, init_model=None,
          out_dir=None, log_every=0) -> TrainResult:
    """Optimize a cloud against RGB-T views; deterministic per seed.

    Emits a loss breakdown per step (loss_log / losses.jsonl) and metrics at
    eval intervals. On a non-finite loss or gradient the last evaluated
    snapshot is restored and training stops early.
    """
    if not views:
        raise DataError("need at least one training view")
    for i, view in enumerate(views):
        if view.gt_rgb is None or view.gt_thermal is None:
            raise DataError(f"view {i} lacks ground truth")

    extent = cfg.scene_extent
    if extent <= 0:
        extent = float(meta["scene_extent"]) if meta and "scene_extent" in meta else 1.0
    dtype = cfg.np_dtype
    rng = np.random.default_rng(cfg.seed)
    mcfg = cfg.model_config()

    if init_cloud is None:
        cloud = random_cloud(rng, cfg.init_count, extent=extent, sh_degree=cfg.sh_degree,
                             embed_dim=cfg.embed_dim, opacity=cfg.init_opacity, dtype=dtype)
    else:
        cloud = init_cloud.astype(dtype)
    if init_model is None:
        model = init_model_params(rng, mcfg, dtype=dtype)
    else:
        model = {k: np.asarray(v, dtype=dtype) for k, v in init_model.items()}

    params = build_param_set(cloud, model)
    adam = Adam(cfg, extent)
    graph = build_knn(params["mu"].data, mcfg.knn_k) if cfg.enable_heat else None

    grad_accum = np.zeros(params["mu"].data.shape[0])
    grad_count = np.zeros(params["mu"].data.shape[0])
    loss_log, metrics_log = [], []
    snapshot = None
    stopped_early = False

    losses_fh = metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        losses_fh = open(os.path.join(out_dir, "losses.jsonl"), "w")
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w")

    def snapshot_params():
        return {name: params[name].data.copy() for name in params.names()}

    def restore(snap):
        for name, arr in snap.items():
            params.replace(name, arr.copy())

    def run_eval(step):
        cl = params_to_cloud(params, cfg.sh_degree, cfg.embed_dim)
        mp = extract_model_params(params)
        result = evaluate(cl, mp, views, cfg, meta)
        result["step"] = step
        metrics_log.append(result)
        if metrics_fh:
            entry = dict(result)
            entry["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
            entry = {k: ("inf" if isinstance(v, float) and np.isinf(v) else v)
                     for k, v in entry.items()}
            metrics_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            metrics_fh.flush()
        return result

    snapshot = snapshot_params()
    try:
        for step in range(cfg.iterations):
            view = views[int(rng.integers(len(views)))]
            loss_cfg = cfg.loss_config(step, extent)
            out = render_view(params, view, mcfg, graph)
            try:
                total, bd = compute_losses(out, view, params, loss_cfg)
            except DataError:
                restore(snapshot)
                stopped_early = True
                break
            params.zero_grad()
            total.backward()

            entry = bd.to_dict()
            entry["step"] = step
            loss_log.append(entry)
            if losses_fh:
                losses_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            if log_every and step % log_every == 0:
                print(f"step {step:5d} total {bd.l_total:.5f} "
                      f"(c {bd.l_c:.4f} t {bd.l_t:.4f} "
                      f"smooth {bd.l_smooth:.4f} boltz {bd.l_boltz:.4f})")

            mean2d = out.aux["mean2d"]
            if mean2d.grad is not None and out.aux["survivors"].size:
                norms = np.linalg.norm(mean2d.grad, axis=1)
                grad_accum[out.aux["survivors"]] += norms
                grad_count[out.aux["survivors"]] += 1.0

            decay = cfg.lr_position_final_scale ** (step / max(cfg.iterations - 1, 1))
            try:
                adam.step(params, params.gradients(), lr_scale={"position": decay})
            except DataError:
                restore(snapshot)
                stopped_early = True
                break
            _renormalize_rotations(params)
            _clamp_scales(params, extent)

            it = step + 1
            densify_now = (cfg.densify_start <= it <= min(cfg.densify_end, cfg.iterations)
                           and it % cfg.densify_interval == 0)
            if densify_now:
                avg = np.where(grad_count > 0, grad_accum / np.maximum(grad_count, 1.0), 0.0)
                densify_and_prune(params, adam, avg, cfg, extent, rng)
                m_now = params["mu"].data.shape[0]
                grad_accum = np.zeros(m_now)
                grad_count = np.zeros(m_now)
                if cfg.enable_heat:
                    graph = build_knn(params["mu"].data, mcfg.knn_k, built_at_step=it)
            elif cfg.enable_heat and it % cfg.knn_interval == 0:
                graph = build_knn(params["mu"].data, mcfg.knn_k, built_at_step=it)

            if it % cfg.eval_interval == 0 or it == cfg.iterations:
                run_eval(it)
                snapshot = snapshot_params()
    finally:
        if losses_fh:
            losses_fh.close()
        if metrics_fh:
            metrics_fh.close()

    if not metrics_log and not stopped_early:
        run_eval(cfg.iterations)
    cloud_out = params_to_cloud(params, cfg.sh_degree, cfg.embed_dim)
    model_out = extract_model_params(params)
    result = TrainResult(cloud_out, model_out, loss_log, metrics_log, stopped_early)
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "checkpoint"), cloud_out, model_out, cfg)
    return result


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(ckpt_dir, cloud: GaussianCloud, model_params, cfg: TrainConfig):
    """cloud.ply + model/<name>.npy + config.toml in one directory."""
    os.makedirs(os.path.join(ckpt_dir, "model"), exist_ok=True)
    formats.write_ply(os.path.join(ckpt_dir, "cloud.ply"), cloud)
    for name, arr in model_params.items():
        np.save(os.path.join(ckpt_dir, "model", f"{name}.npy"), np.asarray(arr))
    formats.save_toml(os.path.join(ckpt_dir, "config.toml"), cfg.to_dict())


def load_checkpoint(ckpt_dir):
    """Returns (cloud, model_params, cfg); accepts the run dir or its checkpoint/."""
    if not os.path.exists(os.path.join(ckpt_dir, "cloud.ply")):
        nested = os.path.join(ckpt_dir, "checkpoint")
        if os.path.exists(os.path.join(nested, "cloud.ply")):
            ckpt_dir = nested
        else:
            raise DataError(f"no cloud.ply under {ckpt_dir}")
    cloud = formats.read_ply(os.path.join(ckpt_dir, "cloud.ply"))
    model_dir = os.path.join(ckpt_dir, "model")
    model = {}
    if os.path.isdir(model_dir):
        for fname in sorted(os.listdir(model_dir)):
            if fname.endswith(".npy"):
                model[fname[:-4]] = np.load(os.path.join(model_dir, fname))
    cfg = TrainConfig.from_dict(formats.load_toml(os.path.join(ckpt_dir, "config.toml")))
    return cloud, model, cfg
