"""Graph reasoning over proposal seeds (GRM).

Pipeline per call, all on float64 arrays:

1. conditional inverse-distance aggregation: each proposal pulls
   features from its k nearest backbone points, weighted by
   exp(-dist/sigma) and gated by a boundary mask (dist <= 2*sigma);
   proposals whose every neighbor is masked keep their prior feature;
2. k-NN graphs over the proposals at several scales, each with an
   adaptive Gaussian bandwidth sigma_s (mean distance to the k-th
   neighbor);
3. per scale: EdgeConv-style edge features, cosine-similarity
   attention over the neighborhood, Gaussian distance damping, and a
   per-scale linear transform, summed into one aggregate per proposal;
4. concatenate the per-scale aggregates, map through a fusion MLP, and
   add residually scaled by a learnable scalar gamma (initialized to 0,
   so the module starts as the exact identity on features).

Neighbor lists are ordered by (distance, index); for generic point sets
the distance order is intrinsic to the geometry, which makes the
forward pass bit-exact under permutation of the proposals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .ops import (
    MlpSpec,
    cosine_sim_backward,
    cosine_sim_forward,
    linear_backward,
    linear_forward,
    mlp_backward,
    mlp_forward,
    register_linear,
    register_mlp,
    softmax,
    softmax_backward,
)
from .params import ParamStore


@dataclass(frozen=True)
class GrmConfig:
    channels: int = 64
    scales: tuple[int, ...] = (5, 10, 20)
    idw_k: int = 16

    def edge_mlp(self) -> MlpSpec:
        c = self.channels
        return MlpSpec(widths=(c, c), relu=(True, False))

    def fusion_mlp(self) -> MlpSpec:
        c = self.channels
        return MlpSpec(widths=(c, c), relu=(True, False))


@dataclass
class KnnGraph:
    """Per-scale neighbor structure over proposals."""

    neighbors: dict[int, np.ndarray] = field(default_factory=dict)  # [M,k]
    dists: dict[int, np.ndarray] = field(default_factory=dict)      # [M,k]
    sigma: dict[int, float] = field(default_factory=dict)


def knn_graph(coords: np.ndarray, scales) -> KnnGraph:
    """Exact k-NN per scale, no self loops, ties to the lower index.

    k saturates at M-1; sigma_s is the mean distance to the k-th
    (furthest kept) neighbor.
    """
    coords = np.asarray(coords, dtype=np.float64)
    m = coords.shape[0]
    if m < 2:
        raise InputError("k-NN graph needs at least 2 proposals")
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    g = KnnGraph()
    for s in scales:
        k = min(int(s), m - 1)
        nbr = order[:, :k]
        g.neighbors[s] = nbr
        g.dists[s] = np.take_along_axis(dist, nbr, axis=1)
        # sort before reducing so the sum order (hence the float result)
        # is a function of the point set, not the row order
        g.sigma[s] = float(np.sort(g.dists[s][:, -1]).sum() / m)
    return g


def idw_neighbors(prop_coords: np.ndarray, point_coords: np.ndarray, k: int):
    """k nearest backbone points per proposal -> (idx [M,k], dist [M,k],
    sigma = mean distance to the k-th neighbor)."""
    prop_coords = np.asarray(prop_coords, dtype=np.float64)
    point_coords = np.asarray(point_coords, dtype=np.float64)
    k = min(k, point_coords.shape[0])
    diff = prop_coords[:, None, :] - point_coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    kth = np.take_along_axis(dist, order, axis=1)
    sigma = float(np.sort(kth[:, -1]).sum() / kth.shape[0])
    return order, kth, sigma


def boundary_mask(dist: np.ndarray, sigma: float) -> np.ndarray:
    """Binary gate: neighbor participates iff dist <= 2*sigma."""
    return dist <= 2.0 * sigma


def idw_aggregate(idx: np.ndarray, dist: np.ndarray, mask: np.ndarray,
                  sigma: float, point_feats: np.ndarray,
                  prior_feats: np.ndarray):
    """Conditional IDW pull of point features onto proposals.

    z_i = sum_j zeta*w*f_j / sum_j zeta*w with w = exp(-dist/sigma);
    rows with all-zero gates keep prior_feats. Weights are a function
    of coordinates only and carry no gradient.
    """
    if sigma <= 0:
        raise InputError("IDW sigma must be positive")
    w = np.exp(-dist / sigma) * mask
    denom = w.sum(axis=1)
    live = denom > 0.0
    coeff = np.where(live[:, None], w / np.where(live, denom, 1.0)[:, None], 0.0)
    z = np.einsum("mk,mkc->mc", coeff, point_feats[idx])
    z = np.where(live[:, None], z, prior_feats)
    cache = (idx, coeff, live, point_feats.shape)
    return z, cache


def idw_backward(cache, dz: np.ndarray):
    """Returns (d_point_feats, d_prior_feats)."""
    idx, coeff, live, pshape = cache
    d_used = np.where(live[:, None], dz, 0.0)
    d_point = np.zeros(pshape)
    contrib = coeff[:, :, None] * d_used[:, None, :]
    np.add.at(d_point, idx.reshape(-1), contrib.reshape(-1, pshape[1]))
    d_prior = np.where(live[:, None], 0.0, dz)
    return d_point, d_prior


def register_grm(store: ParamStore, prefix: str, cfg: GrmConfig,
                 rng: np.random.Generator) -> None:
    c = cfg.channels
    register_mlp(store, prefix + ".phi", 2 * c + 3, cfg.edge_mlp(), rng)
    for s in cfg.scales:
        register_linear(store, f"{prefix}.q{s}", c, c, rng)
        register_linear(store, f"{prefix}.k{s}", c, c, rng)
        register_linear(store, f"{prefix}.psi{s}", c, c, rng)
    register_mlp(store, prefix + ".fuse", len(cfg.scales) * c,
                 cfg.fusion_mlp(), rng)
    store.add(prefix + ".gamma", np.zeros(1))


def grm_forward(store: ParamStore, prefix: str, feats: np.ndarray,
                coords: np.ndarray, cfg: GrmConfig,
                point_feats: np.ndarray | None = None,
                point_coords: np.ndarray | None = None):
    """Proposal features [M,C] -> (updated features [M,C], cache).

    When point context is omitted the IDW step degenerates to the
    proposals' own features (z = feats). M = 1 has no graph: the input
    is passed through unchanged and the cache is flagged degenerate.
    """
    feats = np.asarray(feats, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    m, c = feats.shape
    if m == 1:
        return feats.copy(), {"degenerate": True, "m": 1}

    if point_feats is not None:
        p_idx, p_dist, p_sigma = idw_neighbors(coords, point_coords, cfg.idw_k)
        mask = boundary_mask(p_dist, p_sigma)
        z, idw_cache = idw_aggregate(p_idx, p_dist, mask, p_sigma,
                                     np.asarray(point_feats, dtype=np.float64),
                                     feats)
    else:
        z, idw_cache = feats, None

    graph = knn_graph(coords, cfg.scales)
    per_scale = []
    tilde = []
    for s in cfg.scales:
        nbr = graph.neighbors[s]
        d = graph.dists[s]
        sig = graph.sigma[s]
        k = nbr.shape[1]
        src = np.repeat(np.arange(m), k)
        dst = nbr.reshape(-1)

        edge_in = np.concatenate(
            [z[src], z[dst] - z[src], coords[src] - coords[dst]], axis=1)
        e, e_cache = mlp_forward(store, prefix + ".phi", edge_in,
                                 cfg.edge_mlp())
        psi, psi_cache = linear_forward(store, f"{prefix}.psi{s}", e)

        q, q_cache = linear_forward(store, f"{prefix}.q{s}", z)
        kf, k_cache = linear_forward(store, f"{prefix}.k{s}", z)
        cos, cos_cache = cosine_sim_forward(q[src], kf[dst])
        logits = cos.reshape(m, k)
        alpha = softmax(logits, axis=1)
        gauss = np.exp(-(d * d) / (2.0 * sig * sig))
        aw = (alpha * gauss).reshape(-1, 1)
        f_tilde = np.zeros((m, c))
        np.add.at(f_tilde, src, aw * psi)
        tilde.append(f_tilde)
        per_scale.append((s, nbr, src, dst, e_cache, psi_cache, psi,
                          q_cache, k_cache, cos_cache, alpha, gauss, k))

    concat = np.concatenate(tilde, axis=1)
    fused, fuse_cache = mlp_forward(store, prefix + ".fuse", concat,
                                    cfg.fusion_mlp())
    gamma = store.value(prefix + ".gamma")[0]
    out = feats + gamma * fused

    cache = {
        "degenerate": False, "prefix": prefix, "cfg": cfg, "m": m, "c": c,
        "idw": idw_cache, "z": z, "per_scale": per_scale,
        "fuse_cache": fuse_cache, "fused": fused, "gamma": gamma,
    }
    return out, cache


def grm_backward(store: ParamStore, cache, dout: np.ndarray):
    """Backward. Returns (d_feats, d_point_feats or None)."""
    if cache["degenerate"]:
        return dout.copy(), None
    prefix = cache["prefix"]
    cfg = cache["cfg"]
    m, c = cache["m"], cache["c"]
    z = cache["z"]

    d_feats = dout.copy()
    store.accumulate(prefix + ".gamma",
                     np.array([(dout * cache["fused"]).sum()]))
    d_fused = cache["gamma"] * dout
    d_concat = mlp_backward(store, cache["fuse_cache"], d_fused)

    d_z = np.zeros_like(z)
    for i, entry in enumerate(cache["per_scale"]):
        (s, nbr, src, dst, e_cache, psi_cache, psi,
         q_cache, k_cache, cos_cache, alpha, gauss, k) = entry
        d_tilde = d_concat[:, i * c:(i + 1) * c]

        aw = (alpha * gauss).reshape(-1, 1)
        d_psi = aw * d_tilde[src]
        d_alpha = gauss * (psi * d_tilde[src]).sum(axis=1).reshape(m, k)
        d_logits = softmax_backward(alpha, d_alpha, axis=1)

        d_q_edge, d_k_edge = cosine_sim_backward(cos_cache,
                                                 d_logits.reshape(-1))
        d_q = np.zeros((m, c))
        d_kf = np.zeros((m, c))
        np.add.at(d_q, src, d_q_edge)
        np.add.at(d_kf, dst, d_k_edge)
        d_z += linear_backward(store, q_cache, d_q)
        d_z += linear_backward(store, k_cache, d_kf)

        d_e = linear_backward(store, psi_cache, d_psi)
        d_edge_in = mlp_backward(store, e_cache, d_e)
        d_zi = d_edge_in[:, :c] - d_edge_in[:, c:2 * c]
        d_zj = d_edge_in[:, c:2 * c]
        np.add.at(d_z, src, d_zi)
        np.add.at(d_z, dst, d_zj)

    if cache["idw"] is not None:
        d_point, d_prior = idw_backward(cache["idw"], d_z)
        d_feats += d_prior
        return d_feats, d_point
    d_feats += d_z
    return d_feats, None
