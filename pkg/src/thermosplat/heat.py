"""Heat-conduction refinement of thermal features over a K-NN Gaussian graph.

Per anchor, differences to its K nearest neighbors (ascending distance) are
stacked and mapped through a learned gradient layer; the flux layer scales by
the negative thermal opacity, absorbing the physical conductivity into the
learned weights. The refined feature mixes the flux-corrected anchor with the
plain neighbor mean through two learnable scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import as_tensor, reshape, take
from .gaussians import _maybe_data

SENTINEL = -1


def neighbor_count(n):
    """Sampling rule K = n^2 - 1 for the neighbor-count parameter n."""
    return n * n - 1


@dataclass
class NeighborGraph:
    """K nearest neighbors per Gaussian, ordered by (distance, index).

    Rows are padded with SENTINEL when fewer than K neighbors exist.
    """

    k: int
    neighbor_ids: np.ndarray   # (M, K) int64
    built_at_step: int = 0

    @property
    def count(self):
        return self.neighbor_ids.shape[0]

    def valid_mask(self):
        return self.neighbor_ids != SENTINEL


def build_knn(positions, k, built_at_step=0, chunk=512) -> NeighborGraph:
    """Euclidean K-NN over Gaussian centers with index tie-breaking.

    Brute-force, chunked over query rows: exact and deterministic even for
    gridded point sets with many equidistant neighbors, which tree-based
    queries do not guarantee. Positions with M < 2 get all-sentinel rows.
    """
    pts = np.asarray(positions, dtype=float)
    m = pts.shape[0]
    ids = np.full((m, k), SENTINEL, dtype=np.int64)
    if m < 2 or k < 1:
        return NeighborGraph(k=k, neighbor_ids=ids, built_at_step=built_at_step)
    take_n = min(k, m - 1)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        d2 = ((pts[lo:hi, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        # lexsort: primary key distance, secondary key column index.
        order = np.lexsort((np.broadcast_to(np.arange(m), d2.shape), d2), axis=1)
        ids[lo:hi, :take_n] = order[:, :take_n]
    return NeighborGraph(k=k, neighbor_ids=ids, built_at_step=built_at_step)


def _gather_neighbors(features, graph: NeighborGraph):
    """(M, K, D) neighbor features with padded rows zero-masked."""
    f = as_tensor(features)
    m, d = f.shape
    safe_ids = np.where(graph.neighbor_ids < 0, 0, graph.neighbor_ids)
    mask = graph.valid_mask()[:, :, None].astype(f.dtype.type)
    gathered = reshape(take(f, safe_ids.reshape(-1)), (m, graph.k, d))
    return gathered * mask, mask


def feature_gradient(features, graph: NeighborGraph, params):
    """Learned spatial-gradient summary from stacked neighbor differences.

    Differences (F_u - F_i) are stacked in ascending-distance order and mapped
    through the gradient layer; anchors without neighbors get an exactly zero
    output regardless of the layer bias.
    """
    f = as_tensor(features)
    m, d = f.shape
    gathered, mask = _gather_neighbors(f, graph)
    diffs = gathered - reshape(f, (m, 1, d)) * mask
    stacked = reshape(diffs, (m, graph.k * d))
    out = stacked @ params["f_grad_w"] + params["f_grad_b"]
    has_neighbors = graph.valid_mask().any(axis=1)[:, None].astype(f.dtype.type)
    out = out * has_neighbors
    return _maybe_data(out, features, params["f_grad_w"])


def heat_flux(grad_feat, o_t_logits, params):
    """Flux layer applied to the opacity-scaled negative gradient feature."""
    g = as_tensor(grad_feat)
    o = as_tensor(o_t_logits)
    scaled = -reshape(ad.sigmoid(o), (-1, 1)) * g
    out = scaled @ params["f_q_w"] + params["f_q_b"]
    return _maybe_data(out, grad_feat, o_t_logits, params["f_q_w"])


def refine_features(features, flux, graph: NeighborGraph, params):
    """Anchor/surroundings mix: w_a (F + q) + w_s mean of neighbor features.

    Anchors with an empty neighbor set use a zero mean term. With zero flux
    and (w_a, w_s) = (1, 0) this is the identity, bit for bit.
    """
    f = as_tensor(features)
    q = as_tensor(flux)
    gathered, mask = _gather_neighbors(f, graph)
    counts = np.maximum(mask.sum(axis=1), 1.0)
    mean = ad.tsum(gathered, axis=1) / counts
    out = params["w_a"] * (f + q) + params["w_s"] * mean
    return _maybe_data(out, features, flux, params["w_a"], params["w_s"])


def heat_refine(features, o_t_logits, graph: NeighborGraph, params):
    """Full transform: gradient, flux, then the anchor/surroundings mix."""
    grad_feat = as_tensor(feature_gradient(features, graph, params))
    flux = heat_flux(grad_feat, o_t_logits, params)
    out = as_tensor(refine_features(features, flux, graph, params))
    return _maybe_data(out, features, o_t_logits, params["w_a"])


def init_heat_params(k, feature_dim, dtype=np.float64):
    """Identity initialization: zero gradient/flux layers, w_a=1, w_s=0.

    The transform starts as a no-op so the heat pathway cannot destabilize
    early training.
    """
    return {
        "f_grad_w": np.zeros((k * feature_dim, feature_dim), dtype=dtype),
        "f_grad_b": np.zeros(feature_dim, dtype=dtype),
        "f_q_w": np.zeros((feature_dim, feature_dim), dtype=dtype),
        "f_q_b": np.zeros(feature_dim, dtype=dtype),
        "w_a": np.asarray(1.0, dtype=dtype),
        "w_s": np.asarray(0.0, dtype=dtype),
    }
