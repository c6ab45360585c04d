"""Screen-space projection and front-to-back alpha blending.

The forward pass is fully vectorized: every surviving Gaussian contributes a
flat list of (gaussian, pixel) pairs; per-pixel transmittance comes from a
segmented cumulative sum in log space after a (pixel, depth-rank) sort. The
backward pass replays the cached contribution list, so gradients are exact for
the thresholded forward function (alpha cutoff, alpha clamp, transmittance
early-exit) and bit-reproducible: accumulation happens via bincount in a fixed
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor, _result, as_tensor, reshape, stack, swapaxes, take
from .gaussians import covariance_from_rs

ALPHA_CLAMP = 0.999
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_MIN = 1e-4
COV2D_DILATION = 0.3


@dataclass
class View:
    """Pinhole camera with world-to-camera pose and optional ground truth."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray          # (3, 3) world -> camera
    translation: np.ndarray       # (3,)
    near: float = 0.01
    far: float = 100.0
    gt_rgb: np.ndarray | None = None      # (H, W, 3) in [0, 1]
    gt_thermal: np.ndarray | None = None  # (H, W) normalized temperature

    def __post_init__(self):
        # numpy scalars are not value-weak under promotion; make them python
        # floats so camera constants never upcast float32 renders.
        self.fx, self.fy = float(self.fx), float(self.fy)
        self.cx, self.cy = float(self.cx), float(self.cy)
        self.near, self.far = float(self.near), float(self.far)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)

    @property
    def camera_center(self):
        return -self.rotation.T @ self.translation

    def camera_to_world(self):
        c2w = np.eye(4)
        c2w[:3, :3] = self.rotation.T
        c2w[:3, 3] = self.camera_center
        return c2w

    @classmethod
    def from_camera_to_world(cls, c2w, **kwargs):
        c2w = np.asarray(c2w, dtype=float)
        rot = c2w[:3, :3].T
        return cls(rotation=rot, translation=-rot @ c2w[:3, 3], **kwargs)


@dataclass
class ProjectedGaussians:
    """Screen-space quantities for the Gaussians that survived culling."""

    indices: np.ndarray     # (Ms,) rows into the source cloud
    mean2d: Tensor          # (Ms, 2) pixels
    cov2d: Tensor           # (Ms, 2, 2) pixels^2, dilated
    conic: Tensor           # (Ms, 3) upper-triangular inverse covariance
    depth: Tensor           # (Ms,) camera-space z
    radii: np.ndarray       # (Ms,) rasterization footprint radius (3.5 sigma), px

    @property
    def count(self):
        return len(self.indices)


@dataclass
class RenderOutput:
    """Rendered maps for one view; all arrays or Tensors of matching H x W."""

    i_c: object = None     # (H, W, 3)
    i_t: object = None     # (H, W)
    d_c: object = None     # (H, W)
    d_t: object = None     # (H, W)
    acc_c: object = None   # (H, W)
    acc_t: object = None   # (H, W)
    aux: dict = field(default_factory=dict)


def project_gaussians(mu, rot, log_scale, view: View) -> ProjectedGaussians:
    """EWA-style projection with near/far and screen-footprint culling.

    Culling is a normal outcome: the returned structure may be empty. The
    0.3 px isotropic dilation keeps the 2D covariance invertible.
    """
    mu_t = as_tensor(mu)
    m = mu_t.shape[0]
    w_rot = view.rotation.astype(mu_t.dtype)   # keep the render dtype pure
    cam = mu_t @ w_rot.T + view.translation.astype(mu_t.dtype)
    depth_all = cam[:, 2]
    in_range = (depth_all.data > view.near) & (depth_all.data < view.far)
    idx = np.flatnonzero(in_range)
    if idx.size == 0:
        return _empty_projection(mu_t.dtype)

    cam_s = take(cam, idx)
    z = cam_s[:, 2]
    px = view.fx * cam_s[:, 0] / z + view.cx
    py = view.fy * cam_s[:, 1] / z + view.cy
    mean2d = stack([px, py], axis=1)

    cov3d = as_tensor(covariance_from_rs(as_tensor(rot), as_tensor(log_scale)))
    cov_cam = w_rot @ take(cov3d, idx) @ w_rot.T

    # The Jacobian's lateral inputs are clamped to 1.3x the frustum so that
    # barely-in-front, far-off-axis Gaussians cannot blow up their projected
    # footprint into image-wide haze.
    zero = ad.tensor(np.zeros(idx.size, dtype=mu_t.dtype.type))
    inv_z = 1.0 / z
    lim_x = 1.3 * (view.width / (2.0 * view.fx))
    lim_y = 1.3 * (view.height / (2.0 * view.fy))
    tx = ad.clip(cam_s[:, 0] * inv_z, -lim_x, lim_x)
    ty = ad.clip(cam_s[:, 1] * inv_z, -lim_y, lim_y)
    jrow0 = stack([view.fx * inv_z, zero, -view.fx * tx * inv_z], axis=1)
    jrow1 = stack([zero, view.fy * inv_z, -view.fy * ty * inv_z], axis=1)
    jac = stack([jrow0, jrow1], axis=1)                     # (Ms, 2, 3)
    cov2d = jac @ cov_cam @ swapaxes(jac, -1, -2)
    cov2d = cov2d + COV2D_DILATION * np.eye(2, dtype=mu_t.dtype.type)

    # Footprints from the larger eigenvalue (plain values: control flow).
    # Culling uses 3 sigma; rasterization extends to 3.5 sigma, past the
    # alpha >= 1/255 iso-contour (3.33 sigma at unit opacity), so bounding-box
    # truncation never drops a contribution the cutoff would have kept.
    a = cov2d.data[:, 0, 0]
    b = cov2d.data[:, 0, 1]
    c = cov2d.data[:, 1, 1]
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    sigma_max = np.sqrt(np.maximum(mid + disc, 1e-12))
    cull_radii = 3.0 * sigma_max
    radii = 3.5 * sigma_max

    mx, my = mean2d.data[:, 0], mean2d.data[:, 1]
    on_screen = ((mx + cull_radii > 0.0) & (mx - cull_radii < view.width)
                 & (my + cull_radii > 0.0) & (my - cull_radii < view.height))
    keep = np.flatnonzero(on_screen)
    if keep.size == 0:
        return _empty_projection(mu_t.dtype)

    cov2d_k = take(cov2d, keep)
    a_t, b_t, c_t = cov2d_k[:, 0, 0], cov2d_k[:, 0, 1], cov2d_k[:, 1, 1]
    det = a_t * c_t - b_t * b_t
    conic = stack([c_t / det, -b_t / det, a_t / det], axis=1)

    return ProjectedGaussians(
        indices=idx[keep],
        mean2d=take(mean2d, keep),
        cov2d=cov2d_k,
        conic=conic,
        depth=take(z, keep),
        radii=radii[keep],
    )


def _empty_projection(dtype):
    none = ad.tensor(np.zeros((0,), dtype=dtype.type))
    return ProjectedGaussians(
        indices=np.zeros(0, dtype=int),
        mean2d=ad.tensor(np.zeros((0, 2), dtype=dtype.type)),
        cov2d=ad.tensor(np.zeros((0, 2, 2), dtype=dtype.type)),
        conic=ad.tensor(np.zeros((0, 3), dtype=dtype.type)),
        depth=none,
        radii=np.zeros(0),
    )


def compute_alpha(mean2d, cov2d, opacity_logit, pixel):
    """Blending weight of one projected Gaussian at one pixel position.

    alpha = sigmoid(o) * exp(-0.5 d^T cov2d^-1 d), clamped to ALPHA_CLAMP.
    The blender additionally skips contributions below ALPHA_MIN; this helper
    reports the unskipped value.
    """
    d = np.asarray(pixel, dtype=float) - np.asarray(mean2d, dtype=float)
    q = d @ np.linalg.solve(np.asarray(cov2d, dtype=float), d)
    alpha = float(expit(opacity_logit) * np.exp(-0.5 * max(q, 0.0)))
    return min(alpha, ALPHA_CLAMP)


@dataclass
class BlendContext:
    """Per-view contribution structure shared by the RGB and thermal passes.

    Geometry (footprints, kernel densities, the depth sort and per-pixel
    segmentation) depends only on the projection, so it is built once and
    reused; each pass applies its own opacity channel on top. Contributions
    are prefiltered on the kernel density bound needed to clear the per-pass
    alpha cutoff, which is exact for opacities below ``opacity_bound``.
    """

    width: int
    height: int
    g_ids: np.ndarray       # (n,) survivor row per contribution, pixel-sorted
    pix: np.ndarray         # (n,) flat pixel index, sorted ascending
    dx: np.ndarray          # (n,) pixel-center offsets from mean2d
    dy: np.ndarray
    gauss: np.ndarray       # (n,) exp(-0.5 quad)
    conic_g: np.ndarray     # (n, 3) conic rows gathered per contribution
    starts: np.ndarray      # per-pixel segment starts into the sorted arrays
    seg_id: np.ndarray      # (n,) segment index per contribution

    @property
    def n(self):
        return self.g_ids.size


def prepare_blend(mean2d, conic, depth, radii, width, height,
                  opacity_bound=None) -> BlendContext | None:
    """Build the shared contribution list; None when nothing lands on screen.

    ``opacity_bound`` (per Gaussian, defaults to 1) tightens the kernel
    prefilter to quad <= 2 ln(255 * bound): any contribution beyond it falls
    under the alpha cutoff in every pass, so dropping it here is exact.
    Front-to-back order is by camera depth with ties broken by ascending
    survivor index, making renders reproducible bit for bit.
    """
    mean2d = np.asarray(mean2d)
    conic = np.asarray(conic)
    ms = mean2d.shape[0]
    if ms == 0:
        return None
    dtype = mean2d.dtype

    order = np.lexsort((np.arange(ms), np.asarray(depth)))
    rank = np.empty(ms, dtype=np.int64)
    rank[order] = np.arange(ms)

    mx, my = mean2d[:, 0], mean2d[:, 1]
    x0 = np.clip(np.floor(mx - radii), 0, width).astype(np.int32)
    x1 = np.clip(np.ceil(mx + radii) + 1, 0, width).astype(np.int32)
    y0 = np.clip(np.floor(my - radii), 0, height).astype(np.int32)
    y1 = np.clip(np.ceil(my + radii) + 1, 0, height).astype(np.int32)
    nx = np.maximum(x1 - x0, 0)
    ny = np.maximum(y1 - y0, 0)
    cnt = (nx * ny).astype(np.int64)
    total = int(cnt.sum())
    if total == 0:
        return None

    g_ids = np.repeat(np.arange(ms, dtype=np.int32), cnt)
    offsets = np.concatenate(([0], np.cumsum(cnt)[:-1]))
    k = (np.arange(total, dtype=np.int64) - offsets[g_ids]).astype(np.int32)
    px = x0[g_ids] + k % np.maximum(nx[g_ids], 1)
    py = y0[g_ids] + k // np.maximum(nx[g_ids], 1)

    dx = (px.astype(dtype) + dtype.type(0.5)) - mx[g_ids]
    dy = (py.astype(dtype) + dtype.type(0.5)) - my[g_ids]
    conic_g = conic[g_ids]
    quad = (conic_g[:, 0] * dx * dx + 2.0 * conic_g[:, 1] * dx * dy
            + conic_g[:, 2] * dy * dy)
    if opacity_bound is None:
        bound = -2.0 * np.log(ALPHA_MIN)
    else:
        bound = 2.0 * np.log(np.maximum(np.asarray(opacity_bound)[g_ids], 1e-12) / ALPHA_MIN)
    keep = (quad >= 0.0) & (quad <= bound)
    if not keep.any():
        return None
    g_ids, px, py = g_ids[keep], px[keep], py[keep]
    dx, dy, quad, conic_g = dx[keep], dy[keep], quad[keep], conic_g[keep]
    gauss = np.exp(-0.5 * quad)

    pix = py.astype(np.int64) * width + px
    # (pix, rank) pairs are unique, so a plain sort of the fused key is a
    # front-to-back order within each pixel.
    sort = np.argsort(pix * ms + rank[g_ids])
    g_ids, pix = g_ids[sort], pix[sort]
    dx, dy, gauss, conic_g = dx[sort], dy[sort], gauss[sort], conic_g[sort]

    n = g_ids.size
    boundaries = np.flatnonzero(np.diff(pix)) + 1
    starts = np.concatenate(([0], boundaries))
    lengths = np.diff(np.append(starts, n))
    seg_id = np.repeat(np.arange(starts.size, dtype=np.int32), lengths)
    return BlendContext(width, height, g_ids, pix, dx, dy, gauss, conic_g,
                        starts, seg_id)


def alpha_blend(mean2d, conic, opacity, values, ctx: BlendContext | None,
                n_rows=None, width=None, height=None):
    """Front-to-back composite of one opacity/value channel set.

    ``mean2d``/``conic`` must be the tensors whose values built ``ctx``;
    ``opacity`` is the post-sigmoid multiplier and ``values`` (Ms, C) the
    per-Gaussian payload. Returns an (H, W, C) Tensor, differentiable in all
    four inputs; the sort order and footprints are constants. Per-contribution
    weights below ALPHA_MIN and transmittance below TRANSMITTANCE_MIN are
    dropped exactly as the forward defines, so gradients match the thresholded
    function.
    """
    mean2d, conic = as_tensor(mean2d), as_tensor(conic)
    opacity, values = as_tensor(opacity), as_tensor(values)
    ms = n_rows if n_rows is not None else mean2d.shape[0]
    n_ch = values.shape[1]
    parents = (mean2d, conic, opacity, values)
    if ctx is None:
        shape = (height, width, n_ch)
        return _result(np.zeros(shape, dtype=values.dtype), parents, lambda g: None)

    g_ids, pix, starts, seg_id = ctx.g_ids, ctx.pix, ctx.starts, ctx.seg_id
    dx, dy, gauss = ctx.dx, ctx.dy, ctx.gauss
    out_shape = (ctx.height, ctx.width, n_ch)
    dtype = values.dtype

    alpha_raw = opacity.data[g_ids] * gauss
    alpha = np.minimum(alpha_raw, ALPHA_CLAMP)
    live = alpha >= ALPHA_MIN
    # Segmented exclusive cumulative product of (1 - alpha) in log space;
    # float64 keeps the global cumsum drift-free regardless of render dtype.
    log_t = np.zeros_like(alpha)
    np.log1p(-alpha, where=live, out=log_t)
    cs = np.cumsum(log_t, dtype=np.float64)
    base = np.where(starts > 0, cs[starts - 1], 0.0)
    trans = np.exp(cs - log_t - base[seg_id])
    visible = trans >= TRANSMITTANCE_MIN
    weight = (alpha * trans * (visible & live)).astype(dtype)

    vals = values.data
    wv = weight[:, None] * vals[g_ids]
    seg_sums = np.add.reduceat(wv, starts, axis=0)
    flat = np.zeros((ctx.height * ctx.width, n_ch), dtype=dtype)
    flat[pix[starts]] = seg_sums
    out = flat.reshape(out_shape)

    def backward(g):
        gflat = g.reshape(ctx.height * ctx.width, n_ch)
        upstream = gflat[pix]                                  # (n, C)
        p = (upstream * vals[g_ids]).sum(axis=1)

        r = weight * p
        tot = np.bincount(seg_id, weights=r, minlength=starts.size)
        incl = np.cumsum(r, dtype=np.float64)
        base_r = np.where(starts > 0, incl[starts - 1], 0.0)
        suffix = (tot[seg_id] - (incl - base_r[seg_id])).astype(dtype)
        active = visible & live & (alpha_raw < ALPHA_CLAMP)
        d_alpha = active * (trans.astype(dtype) * p - suffix / (1.0 - alpha))
        if values.requires_grad:
            gv = np.zeros_like(vals)
            for ch in range(n_ch):
                gv[:, ch] = np.bincount(g_ids, weights=weight * upstream[:, ch],
                                        minlength=ms)
            values._accumulate(gv)

        d_gauss = d_alpha * opacity.data[g_ids]
        d_quad = -0.5 * gauss * d_gauss
        ca_k, cb_k, cc_k = ctx.conic_g[:, 0], ctx.conic_g[:, 1], ctx.conic_g[:, 2]
        if opacity.requires_grad:
            opacity._accumulate(
                np.bincount(g_ids, weights=d_alpha * gauss, minlength=ms).astype(dtype))
        if conic.requires_grad:
            gc = np.stack([
                np.bincount(g_ids, weights=d_quad * dx * dx, minlength=ms),
                np.bincount(g_ids, weights=2.0 * d_quad * dx * dy, minlength=ms),
                np.bincount(g_ids, weights=d_quad * dy * dy, minlength=ms),
            ], axis=1)
            conic._accumulate(gc.astype(dtype))
        if mean2d.requires_grad:
            d_dx = d_quad * (2.0 * ca_k * dx + 2.0 * cb_k * dy)
            d_dy = d_quad * (2.0 * cb_k * dx + 2.0 * cc_k * dy)
            gm = np.stack([
                np.bincount(g_ids, weights=-d_dx, minlength=ms),
                np.bincount(g_ids, weights=-d_dy, minlength=ms),
            ], axis=1)
            mean2d._accumulate(gm.astype(dtype))

    return _result(out, parents, backward)


def render_values(proj: ProjectedGaussians, opacity, payload, view: View,
                  ctx: BlendContext | None = None):
    """Blend a per-Gaussian payload plus depth and accumulation channels.

    ``payload`` is (Ms, C); returns Tensors (image (H, W, C) or (H, W) when
    C == 1, depth (H, W), acc (H, W)). Pass a prepared ``ctx`` to share the
    contribution structure between passes over the same projection.
    """
    payload = as_tensor(payload)
    if ctx is None and proj.count:
        ctx = prepare_blend(proj.mean2d.data, proj.conic.data, proj.depth.data,
                            proj.radii, view.width, view.height)
    ones = ad.tensor(np.ones((proj.count, 1), dtype=payload.dtype.type))
    channels = concatenate_cols([payload, reshape(proj.depth, (-1, 1)), ones])
    img = alpha_blend(proj.mean2d, proj.conic, opacity, channels, ctx,
                      n_rows=proj.count, width=view.width, height=view.height)
    n_ch = payload.shape[1]
    image = img[:, :, 0:n_ch] if n_ch > 1 else img[:, :, 0]
    return image, img[:, :, n_ch], img[:, :, n_ch + 1]


def concatenate_cols(parts):
    return ad.concatenate([as_tensor(p) for p in parts], axis=1)
