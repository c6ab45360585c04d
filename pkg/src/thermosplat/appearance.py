"""Per-Gaussian appearance: SH color, encodings, and the two MLP heads.

The RGB branch is view-dependent (SH radiance plus an MLP fed the encoded view
direction); the thermal branch is view-independent by construction (its MLP
sees only the encoded Gaussian center). The shared appearance embedding is
split between the branches by projecting out the SH-aligned component.

All functions accept plain arrays or autodiff Tensors; gradients flow when any
input rides the tape.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import as_tensor, concatenate, reshape
from .errors import ConfigError
from .gaussians import _maybe_data

# Real spherical harmonics constants, bands 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


def rgb_to_sh_dc(rgb):
    """Invert the DC band so a degree-0 Gaussian renders the given color."""
    return (np.asarray(rgb, dtype=float) - 0.5) / SH_C0


def eval_sh(sh, view_dir, degree):
    """Evaluate SH radiance toward ``view_dir`` plus the conventional 0.5 offset.

    sh is (M, 3, (degree+1)^2), view_dir (M, 3) unit vectors. The result is
    clamped to [0, 1]; degree 0 input is direction independent.
    """
    if degree not in (0, 1, 2, 3):
        raise ConfigError(f"unsupported SH degree {degree}")
    sht = as_tensor(sh)
    bands = (degree + 1) ** 2
    if sht.shape[-1] != bands:
        raise ConfigError(f"expected {bands} SH bands for degree {degree}, got {sht.shape[-1]}")
    out = SH_C0 * sht[:, :, 0]
    if degree > 0:
        d = as_tensor(view_dir)
        x, y, z = d[:, 0:1], d[:, 1:2], d[:, 2:3]
        out = out - SH_C1 * y * sht[:, :, 1] + SH_C1 * z * sht[:, :, 2] - SH_C1 * x * sht[:, :, 3]
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out = (out
               + SH_C2[0] * xy * sht[:, :, 4]
               + SH_C2[1] * yz * sht[:, :, 5]
               + SH_C2[2] * (2.0 * zz - xx - yy) * sht[:, :, 6]
               + SH_C2[3] * xz * sht[:, :, 7]
               + SH_C2[4] * (xx - yy) * sht[:, :, 8])
    if degree > 2:
        out = (out
               + SH_C3[0] * y * (3.0 * xx - yy) * sht[:, :, 9]
               + SH_C3[1] * xy * z * sht[:, :, 10]
               + SH_C3[2] * y * (4.0 * zz - xx - yy) * sht[:, :, 11]
               + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sht[:, :, 12]
               + SH_C3[4] * x * (4.0 * zz - xx - yy) * sht[:, :, 13]
               + SH_C3[5] * z * (xx - yy) * sht[:, :, 14]
               + SH_C3[6] * x * (xx - 3.0 * yy) * sht[:, :, 15])
    out = ad.clip(out + 0.5, 0.0, 1.0)
    return _maybe_data(out, sh, view_dir)


def positional_encoding(x, length):
    """NeRF-style encoding: per octave n, sin(2^n pi x) then cos(2^n pi x).

    (M, 3) input gives (M, 6 * length); every entry lies in [-1, 1].
    """
    if length < 1:
        raise ConfigError("encoding length must be >= 1")
    xt = as_tensor(x)
    parts = []
    for n in range(length):
        scaled = (2.0**n * np.pi) * xt
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    out = concatenate(parts, axis=-1)
    return _maybe_data(out, x)


def flatten_sh(sh):
    """Fixed channel-major, band-minor flattening consumed by phi_sh."""
    sht = as_tensor(sh)
    m, c, b = sht.shape
    return reshape(sht, (m, c * b))


def project_out(e_m, sh_prime, eps=1e-12):
    """Remove the sh_prime-parallel component of e_m.

    Rows where |sh_prime|^2 < eps skip the projection and pass e_m through
    unchanged (documented fallback for a collapsed SH projection).
    """
    e = as_tensor(e_m)
    s = as_tensor(sh_prime)
    nsq = ad.tsum(s * s, axis=1, keepdims=True)
    degenerate = nsq.data < eps
    safe = ad.where(degenerate, np.ones_like(nsq.data), nsq)
    coeff = ad.tsum(e * s, axis=1, keepdims=True) / safe
    e_orth = e - coeff * s
    out = ad.where(degenerate, e, e_orth)
    return _maybe_data(out, e_m, sh_prime)


def orthogonal_extract(e_m, sh, params):
    """Thermal embedding: phi_e applied to e_m minus its SH-aligned part."""
    shp = sh_projection(sh, params)
    e_orth = as_tensor(project_out(e_m, shp))
    out = e_orth @ params["phi_e_w"] + params["phi_e_b"]
    return _maybe_data(out, e_m, sh, params["phi_e_w"])


def sh_projection(sh, params):
    """phi_sh: flattened SH coefficients mapped into embedding space."""
    out = flatten_sh(sh) @ params["phi_sh_w"] + params["phi_sh_b"]
    return _maybe_data(out, sh, params["phi_sh_w"])


def _mlp2(x, params, prefix):
    h = ad.relu(x @ params[f"{prefix}_w1"] + params[f"{prefix}_b1"])
    h = ad.relu(h @ params[f"{prefix}_w2"] + params[f"{prefix}_b2"])
    return h @ params[f"{prefix}_w3"] + params[f"{prefix}_b3"]


def color_head(e_m, pe_v, params):
    """Multi-modal color estimate in (0, 1)^3 from embedding + view encoding."""
    e = as_tensor(e_m)
    p = as_tensor(pe_v)
    expected = params["color_w1"].shape[0]
    if e.shape[1] + p.shape[1] != expected:
        raise ConfigError(
            f"color head expects input dim {expected}, got {e.shape[1]} + {p.shape[1]}")
    out = ad.sigmoid(_mlp2(concatenate([e, p], axis=1), params, "color"))
    return _maybe_data(out, e_m, pe_v, params["color_w1"])


def thermal_feature(e_t, pe_p, params):
    """View-invariant thermal feature from embedding + position encoding."""
    e = as_tensor(e_t)
    p = as_tensor(pe_p)
    expected = params["thermal_w1"].shape[0]
    if e.shape[1] + p.shape[1] != expected:
        raise ConfigError(
            f"thermal feature expects input dim {expected}, got {e.shape[1]} + {p.shape[1]}")
    out = _mlp2(concatenate([e, p], axis=1), params, "thermal")
    return _maybe_data(out, e_t, pe_p, params["thermal_w1"])


def thermal_head(f_refined, params):
    """Thermal value estimate in (0, 1) from the refined feature."""
    f = as_tensor(f_refined)
    logits = f @ params["head_w"] + params["head_b"]
    out = ad.sigmoid(reshape(logits, (-1,)))
    return _maybe_data(out, f_refined, params["head_w"])


def init_appearance_params(rng, sh_bands, embed_dim=16, l_v=4, l_p=6,
                           feature_dim=32, hidden=32, dtype=np.float64):
    """Initial weights for the appearance maps and both MLP heads.

    Output layers of both heads start at zero so the sigmoid sits at 0.5 and
    the residual added on top of SH color / base temperature starts at zero;
    everything upstream gets small random weights to break symmetry.
    """
    def dense(n_in, n_out, scale=None):
        s = (1.0 / np.sqrt(n_in)) if scale is None else scale
        return rng.normal(0.0, s, size=(n_in, n_out)).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    in_color = embed_dim + 6 * l_v
    in_thermal = embed_dim + 6 * l_p
    return {
        "phi_sh_w": dense(3 * sh_bands, embed_dim),
        "phi_sh_b": zeros(embed_dim),
        "phi_e_w": dense(embed_dim, embed_dim),
        "phi_e_b": zeros(embed_dim),
        "color_w1": dense(in_color, hidden),
        "color_b1": zeros(hidden),
        "color_w2": dense(hidden, hidden),
        "color_b2": zeros(hidden),
        "color_w3": zeros(hidden, 3),
        "color_b3": zeros(3),
        "thermal_w1": dense(in_thermal, hidden),
        "thermal_b1": zeros(hidden),
        "thermal_w2": dense(hidden, hidden),
        "thermal_b2": zeros(hidden),
        "thermal_w3": dense(hidden, feature_dim),
        "thermal_b3": zeros(feature_dim),
        "head_w": zeros(feature_dim, 1),
        "head_b": zeros(1),
    }
