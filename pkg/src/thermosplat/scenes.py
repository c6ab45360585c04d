"""Synthetic RGB-T ground truth and dataset IO.

Oracle scenes are Gaussian clouds with analytically assigned colors and
temperatures ("hot sphere in a cool box"), rendered to ground truth by the
same forward model under identity-residual parameters. Datasets live on disk
as 8-bit RGB PNGs, float thermal PFMs in deg C, and a transforms.json manifest
with per-frame camera-to-world matrices.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .appearance import rgb_to_sh_dc
from .errors import DataError
from .gaussians import GaussianCloud, inverse_sigmoid, random_cloud, stable_unit_quaternions
from .heat import build_knn
from .pipeline import (LossConfig, ModelConfig, build_param_set, compute_losses,
                       init_model_params, render_arrays, render_view)
from .radiation import RadiationConfig
from .rasterize import View
from . import formats


def temp_to_unit(t_celsius, t_min, t_max):
    return (np.asarray(t_celsius, dtype=float) - t_min) / (t_max - t_min)


def unit_to_temp(t_norm, t_min, t_max):
    return np.asarray(t_norm, dtype=float) * (t_max - t_min) + t_min


@dataclass
class CameraRig:
    n_views: int = 20
    radius: float = 1.3
    elevation_deg: float = 20.0
    fov_deg: float = 55.0
    width: int = 64
    height: int = 64
    near: float = 0.05
    far: float = 50.0


@dataclass
class SceneSpec:
    """Hot-sphere-in-cool-box oracle scene description."""

    seed: int = 0
    count: int = 200
    extent: float = 2.0             # box half-size, world units
    sphere_radius: float = 0.5
    sphere_fraction: float = 0.35   # share of Gaussians on the hot sphere
    t_hot: float = 90.0             # deg C
    t_cold: float = 10.0
    wall_temp_gradient: float = 0.1  # vertical wall variation, fraction of (t_hot - t_cold)
    t_min: float = -20.0
    t_max: float = 120.0
    opacity: float = 0.9
    sh_degree: int = 2
    embed_dim: int = 16
    cameras: CameraRig = field(default_factory=CameraRig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        cams = d.pop("cameras", {})
        spec = cls(**d)
        spec.cameras = CameraRig(**cams)
        return spec


def look_at_view(eye, target, rig: CameraRig, up=(0.0, 0.0, 1.0)) -> View:
    """Camera at ``eye`` looking at ``target``; +z forward, +y down in camera."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])       # world -> camera rows
    fx = 0.5 * rig.width / np.tan(0.5 * np.radians(rig.fov_deg))
    return View(width=rig.width, height=rig.height, fx=fx, fy=fx,
                cx=rig.width / 2.0, cy=rig.height / 2.0,
                rotation=rot, translation=-rot @ eye, near=rig.near, far=rig.far)


def camera_ring(rig: CameraRig, center=(0.0, 0.0, 0.0)):
    center = np.asarray(center, dtype=float)
    views = []
    elev = np.radians(rig.elevation_deg)
    for i in range(rig.n_views):
        azim = 2.0 * np.pi * i / rig.n_views
        eye = center + rig.radius * np.array(
            [np.cos(elev) * np.cos(azim), np.cos(elev) * np.sin(azim), np.sin(elev)])
        views.append(look_at_view(eye, center, rig))
    return views


def _fibonacci_sphere(n, radius):
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    return radius * np.stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=1)


def _box_walls(n, extent, rng):
    """Jittered grids on the six faces of the cube of half-size ``extent``."""
    if n == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=int), 2.0 * extent
    per_face = [n // 6 + (1 if i < n % 6 else 0) for i in range(6)]
    side0 = max(int(np.ceil(np.sqrt(max(per_face)))), 1)
    pts, normal_axis = [], []
    for face in range(6):
        count = per_face[face]
        if count == 0:
            continue
        axis, sign = face % 3, 1.0 if face < 3 else -1.0
        side = max(int(np.ceil(np.sqrt(count))), 1)
        u = np.linspace(-extent, extent, side, endpoint=False) + extent / side
        uu, vv = np.meshgrid(u, u)
        grid = np.stack([uu.ravel(), vv.ravel()], axis=1)[:count]
        jitter = rng.uniform(-0.3, 0.3, size=grid.shape) * (2.0 * extent / side)
        grid = grid + jitter
        p = np.zeros((count, 3))
        p[:, axis] = sign * extent
        others = [a for a in range(3) if a != axis]
        p[:, others[0]] = grid[:, 0]
        p[:, others[1]] = grid[:, 1]
        pts.append(p)
        normal_axis.extend([axis] * count)
    return np.concatenate(pts), np.asarray(normal_axis), 2.0 * extent / side0


def _color_field(positions, extent):
    """Smooth RGB gradient over the box; gives photometric texture."""
    return np.clip(0.5 + 0.3 * positions / extent, 0.05, 0.95)


def generate_scene(spec: SceneSpec):
    """Build the ground-truth cloud, render its views, return (cloud, views, meta).

    Ground truth is rendered by the same forward model with identity residual
    heads (zero-initialized outputs), so GT images equal the pure SH color and
    base-temperature splats. Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    n_sphere = int(round(spec.count * spec.sphere_fraction))
    n_wall = spec.count - n_sphere

    wall_pts, wall_normal, wall_spacing = _box_walls(n_wall, spec.extent, rng)
    sphere_pts = _fibonacci_sphere(n_sphere, spec.sphere_radius)
    mu = np.concatenate([wall_pts, sphere_pts])

    wall_scale = np.full((n_wall, 3), np.log(0.7 * wall_spacing))
    for i, axis in enumerate(wall_normal):
        wall_scale[i, axis] = np.log(0.15 * wall_spacing)
    sphere_spacing = np.sqrt(4.0 * np.pi * spec.sphere_radius**2 / max(n_sphere, 1))
    sphere_scale = np.full((n_sphere, 3), np.log(0.7 * sphere_spacing))
    log_scale = np.concatenate([wall_scale, sphere_scale])

    dt = spec.t_hot - spec.t_cold
    wall_temp = spec.t_cold + spec.wall_temp_gradient * dt * (wall_pts[:, 2] / spec.extent)
    temp_c = np.concatenate([wall_temp, np.full(n_sphere, spec.t_hot)])
    t_norm = np.clip(temp_to_unit(temp_c, spec.t_min, spec.t_max), 1e-4, 1.0 - 1e-4)

    colors = _color_field(mu, spec.extent)
    bands = (spec.sh_degree + 1) ** 2
    sh = np.zeros((spec.count, 3, bands))
    sh[:, :, 0] = rgb_to_sh_dc(colors)

    rot = stable_unit_quaternions(np.tile([1.0, 0.0, 0.0, 0.0], (spec.count, 1)))
    o_logit = inverse_sigmoid(spec.opacity)
    cloud = GaussianCloud(
        mu=mu, rot=rot, log_scale=log_scale,
        o_c=np.full(spec.count, o_logit), o_t=np.full(spec.count, o_logit),
        sh=sh, e_m=np.zeros((spec.count, spec.embed_dim)), t_base=inverse_sigmoid(t_norm),
        sh_degree=spec.sh_degree, embed_dim=spec.embed_dim,
    )

    views = camera_ring(spec.cameras)
    cfg = ModelConfig(sh_degree=spec.sh_degree, embed_dim=spec.embed_dim, enable_heat=False)
    model = init_model_params(np.random.default_rng(spec.seed + 1), cfg)
    for i, view in enumerate(views):
        out = render_arrays(cloud, model, view, cfg)
        if float(out.acc_c.max()) <= 0.0:
            raise DataError(f"camera {i} sees no Gaussians")
        view.gt_rgb = np.clip(out.i_c, 0.0, 1.0)
        view.gt_thermal = np.clip(out.i_t, 0.0, 1.0)

    meta = {
        "t_min": spec.t_min, "t_max": spec.t_max,
        "scene_extent": spec.extent,
        "near": spec.cameras.near, "far": spec.cameras.far,
        "width": spec.cameras.width, "height": spec.cameras.height,
    }
    return cloud, views, meta


# -- on-disk dataset ----------------------------------------------------------


def save_dataset(out_dir, views, meta):
    """Write rgb/NNN.png, thermal/NNN.pfm (deg C) and transforms.json."""
    os.makedirs(os.path.join(out_dir, "rgb"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "thermal"), exist_ok=True)
    frames = []
    for i, view in enumerate(views):
        rgb_rel = f"rgb/{i:03d}.png"
        th_rel = f"thermal/{i:03d}.pfm"
        formats.save_png(os.path.join(out_dir, rgb_rel), view.gt_rgb)
        t_c = unit_to_temp(view.gt_thermal, meta["t_min"], meta["t_max"])
        formats.write_pfm(os.path.join(out_dir, th_rel), t_c.astype(np.float32))
        frames.append({
            "rgb": rgb_rel,
            "thermal": th_rel,
            "camera_to_world": view.camera_to_world().tolist(),
            "fx": view.fx, "fy": view.fy, "cx": view.cx, "cy": view.cy,
        })
    manifest = dict(meta)
    manifest["frames"] = frames
    path = os.path.join(out_dir, "transforms.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(data_dir):
    """Read a dataset directory back into (views, meta).

    Thermal PFMs hold deg C and are normalized by the manifest's bounds;
    values outside the declared range, missing files or missing poses raise
    descriptive errors.
    """
    manifest_path = os.path.join(data_dir, "transforms.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no transforms.json in {data_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for key in ("t_min", "t_max", "frames", "width", "height"):
        if key not in manifest:
            raise DataError(f"transforms.json missing key {key!r}")
    t_min, t_max = manifest["t_min"], manifest["t_max"]
    tol = 1e-3 * (t_max - t_min)
    views = []
    for i, frame in enumerate(manifest["frames"]):
        name = frame.get("rgb", f"frame {i}")
        if "camera_to_world" not in frame:
            raise DataError(f"frame {name}: missing camera_to_world pose")
        for key in ("rgb", "thermal"):
            if key not in frame:
                raise DataError(f"frame {i}: missing {key} path")
            if not os.path.exists(os.path.join(data_dir, frame[key])):
                raise DataError(f"frame {name}: missing file {frame[key]}")
        rgb = formats.load_png(os.path.join(data_dir, frame["rgb"]))
        t_c = formats.read_pfm(os.path.join(data_dir, frame["thermal"]))
        if np.isnan(t_c).any():
            raise DataError(f"frame {name}: NaN temperature")
        if t_c.min() < t_min - tol or t_c.max() > t_max + tol:
            raise DataError(
                f"frame {name}: temperature {float(t_c.min()):.2f}..{float(t_c.max()):.2f} "
                f"outside declared range [{t_min}, {t_max}]")
        view = View.from_camera_to_world(
            np.asarray(frame["camera_to_world"], dtype=float),
            width=manifest["width"], height=manifest["height"],
            fx=frame["fx"], fy=frame["fy"], cx=frame["cx"], cy=frame["cy"],
            near=manifest.get("near", 0.01), far=manifest.get("far", 100.0),
        )
        view.gt_rgb = rgb
        view.gt_thermal = np.clip(temp_to_unit(t_c, t_min, t_max), 0.0, 1.0)
        views.append(view)
    meta = {k: manifest[k] for k in manifest if k != "frames"}
    return views, meta


def convert_nerf_style_dataset(src_dir, dst_dir, t_min=-20.0, t_max=120.0):
    """Best-effort converter from a NeRF-style layout (UNVERIFIED).

    Expects transforms.json with camera_angle_x or fl_x/fl_y and per-frame
    file_path entries, plus parallel thermal PFMs named like the RGB files.
    Written against the documented layout of public RGB-T captures but not
    validated against real ones; inspect the output before trusting it.
    """
    with open(os.path.join(src_dir, "transforms.json")) as fh:
        src = json.load(fh)
    frames = []
    for frame in src.get("frames", []):
        rel = frame["file_path"]
        base = os.path.splitext(os.path.basename(rel))[0]
        frames.append({
            "rgb": rel if rel.endswith(".png") else rel + ".png",
            "thermal": f"thermal/{base}.pfm",
            "camera_to_world": frame["transform_matrix"],
            "fx": src.get("fl_x"), "fy": src.get("fl_y"),
            "cx": src.get("cx"), "cy": src.get("cy"),
        })
    manifest = {
        "t_min": t_min, "t_max": t_max,
        "width": src.get("w"), "height": src.get("h"),
        "scene_extent": src.get("scene_extent", 1.0),
        "frames": frames,
    }
    os.makedirs(dst_dir, exist_ok=True)
    with open(os.path.join(dst_dir, "transforms.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


# -- gradcheck fixture ----------------------------------------------------------


def tiny_gradcheck_case(seed=0, n_gaussians=5, size=16, n_views=2):
    """A fully randomized differentiable pipeline instance in float64.

    Every parameter family gets nonzero random values (including the normally
    zero-initialized heads) so no gradient path is trivially dark. Returns
    (params, loss_fn, views, cfg) where loss_fn sums the full training loss
    over the views against fixed random ground truth.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig()
    cloud = random_cloud(rng, n_gaussians, extent=0.8, sh_degree=cfg.sh_degree,
                         embed_dim=cfg.embed_dim, opacity=0.6)
    cloud.sh += rng.normal(0.0, 0.2, size=cloud.sh.shape)
    cloud.e_m = rng.normal(0.0, 0.5, size=cloud.e_m.shape)
    cloud.t_base = rng.normal(0.0, 0.5, size=cloud.t_base.shape)
    cloud.o_t = rng.normal(0.5, 0.5, size=cloud.o_t.shape)
    cloud.rot = stable_unit_quaternions(rng.normal(size=(n_gaussians, 4)))

    model = init_model_params(rng, cfg)
    for name, arr in model.items():
        model[name] = rng.normal(0.0, 0.3, size=np.shape(arr))
    model["w_a"] = np.asarray(0.9)
    model["w_s"] = np.asarray(0.3)

    params = build_param_set(cloud, model)
    graph = build_knn(cloud.mu, cfg.knn_k)

    rig = CameraRig(n_views=n_views, radius=3.0, elevation_deg=15.0,
                    width=size, height=size, far=20.0)
    views = camera_ring(rig)
    for view in views:
        view.gt_rgb = rng.uniform(0.1, 0.9, size=(size, size, 3))
        view.gt_thermal = rng.uniform(0.2, 0.8, size=(size, size))

    loss_cfg = LossConfig(radiation=RadiationConfig(depth_floor=1e-3 * 0.8))

    def loss_fn():
        total = None
        for view in views:
            out = render_view(params, view, cfg, graph)
            loss, _ = compute_losses(out, view, params, loss_cfg)
            total = loss if total is None else total + loss
        return total

    return params, loss_fn, views, cfg
