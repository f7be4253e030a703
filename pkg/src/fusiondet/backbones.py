"""Desk-scale feature extractors.

Point side: a per-point MLP over (position, color), farthest-point
sampling for proposal seeds, and a radius max-pool for seed features.
Image side: a z-buffer point-splat rasterizer standing in for a real
camera, and a pool-then-MLP feature pyramid (4 levels, halving from
half resolution down).

Both encoders are deliberately small surrogates for heavyweight
backbones: they preserve the interfaces the fusion stack consumes
(per-point context features, multi-scale image maps) while staying
fully gradient-checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import InputError
from .geometry import CameraModel
from .ops import hidden_mlp, mlp_backward, mlp_forward, register_mlp
from .params import ParamStore

PYRAMID_LEVELS = 4


@dataclass(frozen=True)
class PointEncoderConfig:
    n_queries: int = 64
    radius: float = 0.3
    max_group: int = 32
    channels: int = 64


@dataclass(frozen=True)
class ImagePyramidConfig:
    channels: int = 32
    in_channels: int = 4  # rgb + depth raster


@dataclass
class PointEncoding:
    """Proposal seeds plus the per-point context features they came from."""

    coords: np.ndarray          # [M,3] seed positions
    features: np.ndarray        # [M,C] seed features (radius max-pool)
    point_features: np.ndarray  # [N,C] per-point features (fusion context)
    indices: np.ndarray         # [M] seed indices into the input cloud


def farthest_point_indices(positions: np.ndarray, m: int) -> np.ndarray:
    """Deterministic farthest-point sampling.

    Starts at the lexicographically smallest position (so the result is
    a function of the point set, not its ordering) and breaks distance
    ties toward the lower index.
    """
    n = positions.shape[0]
    if m > n:
        raise InputError(f"cannot sample {m} seeds from {n} points")
    start = int(np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0]))[0])
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(positions - positions[start], axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(dist))  # argmax takes the lowest index on ties
        chosen[i] = nxt
        d_new = np.linalg.norm(positions - positions[nxt], axis=1)
        dist = np.minimum(dist, d_new)
    return chosen


def radius_groups(positions: np.ndarray, seeds: np.ndarray, radius: float,
                  cap: int) -> list[np.ndarray]:
    """Indices within `radius` of each seed, nearest-first, at most `cap`.

    A seed with no in-radius point falls back to its single nearest
    point (which is itself when the seed belongs to the cloud).
    """
    groups = []
    for s in seeds:
        d = np.linalg.norm(positions - positions[s], axis=1)
        inside = np.flatnonzero(d <= radius)
        if inside.size == 0:
            inside = np.array([int(np.argmin(d))])
        order = np.lexsort((inside, d[inside]))  # distance, then index
        groups.append(inside[order[:cap]])
    return groups


def register_point_encoder(store: ParamStore, prefix: str,
                           cfg: PointEncoderConfig,
                           rng: np.random.Generator) -> None:
    register_mlp(store, prefix + ".pp", 6,
                 hidden_mlp(cfg.channels, cfg.channels), rng)


def encode_points_forward(store: ParamStore, prefix: str,
                          positions: np.ndarray, colors: np.ndarray,
                          cfg: PointEncoderConfig):
    """PointCloud -> (PointEncoding, cache)."""
    positions = np.asarray(positions, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    n = positions.shape[0]
    if n < cfg.n_queries:
        raise InputError(
            f"point cloud has {n} points but {cfg.n_queries} seeds requested")
    spec = hidden_mlp(cfg.channels, cfg.channels)
    x = np.hstack([positions, colors])
    feats, mlp_cache = mlp_forward(store, prefix + ".pp", x, spec)

    seeds = farthest_point_indices(positions, cfg.n_queries)
    groups = radius_groups(positions, seeds, cfg.radius, cfg.max_group)
    seed_feats = np.empty((cfg.n_queries, cfg.channels))
    argmaxes = []
    for i, g in enumerate(groups):
        block = feats[g]
        am = np.argmax(block, axis=0)
        seed_feats[i] = block[am, np.arange(cfg.channels)]
        argmaxes.append(g[am])
    enc = PointEncoding(coords=positions[seeds].copy(), features=seed_feats,
                        point_features=feats, indices=seeds)
    cache = (mlp_cache, argmaxes, n, cfg)
    return enc, cache


def encode_points_backward(store: ParamStore, cache,
                           d_seed_feats: np.ndarray,
                           d_point_feats: np.ndarray | None = None) -> np.ndarray:
    """Backward into colors (positions are sampling structure, not
    differentiated). Accepts gradients for both outputs: the pooled seed
    features and the shared per-point context features."""
    mlp_cache, argmaxes, n, cfg = cache
    d_feats = np.zeros((n, cfg.channels))
    if d_point_feats is not None:
        d_feats += d_point_feats
    cols = np.arange(cfg.channels)
    for i, am in enumerate(argmaxes):
        np.add.at(d_feats, (am, cols), d_seed_feats[i])
    dx = mlp_backward(store, mlp_cache, d_feats)
    return dx[:, 3:]  # color slice


def maxpool_margin(store: ParamStore, prefix: str, positions, colors,
                   cfg: PointEncoderConfig) -> float:
    """Smallest winner-vs-runner-up gap across all (seed, channel) max
    pools. Used by the gradient-check builders to reject configurations
    where a finite-difference step could flip an argmax."""
    positions = np.asarray(positions, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    spec = hidden_mlp(cfg.channels, cfg.channels)
    feats, _ = mlp_forward(store, prefix + ".pp",
                           np.hstack([positions, colors]), spec)
    seeds = farthest_point_indices(positions, cfg.n_queries)
    margin = np.inf
    for g in radius_groups(positions, seeds, cfg.radius, cfg.max_group):
        if g.size < 2:
            continue
        block = np.sort(feats[g], axis=0)
        margin = min(margin, float((block[-1] - block[-2]).min()))
    return margin


# ---------------------------------------------------------------------------
# image pyramid
# ---------------------------------------------------------------------------

def register_image_pyramid(store: ParamStore, prefix: str,
                           cfg: ImagePyramidConfig,
                           rng: np.random.Generator) -> None:
    for lvl in range(PYRAMID_LEVELS):
        register_mlp(store, f"{prefix}.l{lvl}", cfg.in_channels,
                     hidden_mlp(cfg.channels, cfg.channels), rng)


def _avg_pool(img: np.ndarray, f: int) -> np.ndarray:
    h, w, c = img.shape
    return img.reshape(h // f, f, w // f, f, c).mean(axis=(1, 3))


def encode_image_pyramid_forward(store: ParamStore, prefix: str,
                                 raster: np.ndarray, cfg: ImagePyramidConfig):
    """[H0,W0,in_channels] raster -> (list of 4 feature maps, cache).

    Level l is average-pooled by 2^(l+1) (half resolution down to 1/16)
    then mapped per pixel to cfg.channels features.
    """
    raster = np.asarray(raster, dtype=np.float64)
    h0, w0, c_in = raster.shape
    if h0 % 32 or w0 % 32:
        raise InputError(f"raster dims must be divisible by 32, got {h0}x{w0}")
    if c_in != cfg.in_channels:
        raise InputError(f"raster has {c_in} channels, expected {cfg.in_channels}")
    spec = hidden_mlp(cfg.channels, cfg.channels)
    levels = []
    lvl_caches = []
    for lvl in range(PYRAMID_LEVELS):
        f = 2 ** (lvl + 1)
        pooled = _avg_pool(raster, f)
        hl, wl = pooled.shape[:2]
        flat, mc = mlp_forward(store, f"{prefix}.l{lvl}",
                               pooled.reshape(hl * wl, c_in), spec)
        levels.append(flat.reshape(hl, wl, cfg.channels))
        lvl_caches.append((mc, hl, wl, f))
    cache = (lvl_caches, raster.shape, cfg)
    return levels, cache


def encode_image_pyramid_backward(store: ParamStore, cache, level: int,
                                  d_level: np.ndarray) -> np.ndarray:
    """Backward of one pyramid level into the input raster."""
    lvl_caches, rshape, cfg = cache
    mc, hl, wl, f = lvl_caches[level]
    d_flat = mlp_backward(store, mc, d_level.reshape(hl * wl, cfg.channels))
    d_pooled = d_flat.reshape(hl, wl, rshape[2])
    # average pool spreads gradient uniformly over each f x f window
    d_raster = np.repeat(np.repeat(d_pooled, f, axis=0), f, axis=1) / (f * f)
    return d_raster


# ---------------------------------------------------------------------------
# rasterizer
# ---------------------------------------------------------------------------

def rasterize_scene(positions: np.ndarray, colors: np.ndarray,
                    cam: CameraModel) -> np.ndarray:
    """Z-buffer point splat to an [H0,W0,4] (r,g,b,depth) raster.

    Each point writes its color and camera depth to the nearest pixel
    of its projection if it is the nearest point seen there; pixels hit
    by no point stay zero.
    """
    positions = np.asarray(positions, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    raster = np.zeros((cam.height, cam.width, 4))
    px, z, in_front = cam.project_pixels(positions)
    ix = np.rint(px[:, 0]).astype(np.int64)
    iy = np.rint(px[:, 1]).astype(np.int64)
    ok = in_front & (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return raster
    # write far-to-near so the nearest point lands last; stable sort keeps
    # equal-depth points in index order (highest index wins)
    order = idx[np.argsort(-z[idx], kind="stable")]
    raster[iy[order], ix[order], :3] = colors[order]
    raster[iy[order], ix[order], 3] = z[order]
    return raster
