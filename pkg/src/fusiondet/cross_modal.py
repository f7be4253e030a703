"""Gated cross-modal fusion layer.

One layer refines M query features against two modalities:

  * a point branch — multi-head attention from queries to the per-point
    context features;
  * an image branch — multi-scale deformable attention: each (head,
    level, point) slot predicts an offset from the query's projected
    reference point, bilinearly samples the image pyramid there, and
    combines the sampled values with softmax weights shared across
    levels and points per head;
  * a per-head gate — softmax over two logits per head, so
    lambda_point + lambda_image = 1 holds exactly; the gated
    combination enters a shared residual;
  * a feed-forward block with its own residual.

Layer norms are applied to the *inputs* of the attention/gate block and
of the FFN (pre-norm).  A layer whose value projections and final FFN
layer are zero is therefore exactly the identity map on the queries.
The offset, weight, and gate output layers are zero-initialized, so an
untrained layer samples exactly at the reference points with uniform
weights and balanced gates.

Queries whose reference point is invalid (behind the camera or off the
image) receive exactly zero image contribution; their gate then blends
the point branch with a zero vector.

Reference points are treated as constants: query coordinates are
re-projected outside the layer and their gradient path is not tracked
through the sampling locations (only through the offset network).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .ops import (
    ConfigError,
    MlpSpec,
    bilinear_sample_backward,
    bilinear_sample_forward,
    layer_norm_backward,
    layer_norm_forward,
    linear_backward,
    linear_forward,
    mlp_backward,
    mlp_forward,
    register_layer_norm,
    register_linear,
    register_mlp,
    softmax,
    softmax_backward,
)
from .params import ParamStore


@dataclass(frozen=True)
class FusionConfig:
    channels: int = 64
    heads: int = 4
    points: int = 4   # sampling points per (head, level)
    levels: int = 4
    img_channels: int = 32
    ffn_hidden: int = 128

    def __post_init__(self):
        if self.channels % self.heads:
            raise ConfigError("head count must divide feature width")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def gate_mlp(self) -> MlpSpec:
        return MlpSpec(widths=(self.channels, 2 * self.heads),
                       relu=(True, False), layer_norm=(True, False))

    def ffn_mlp(self) -> MlpSpec:
        return MlpSpec(widths=(self.ffn_hidden, self.channels),
                       relu=(True, False), layer_norm=(False, False))


def register_fusion_layer(store: ParamStore, prefix: str, cfg: FusionConfig,
                          rng: np.random.Generator) -> None:
    c = cfg.channels
    register_layer_norm(store, prefix + ".ln1", c)
    register_layer_norm(store, prefix + ".ln2", c)
    # point branch
    for name in ("pq", "pk", "pv", "po"):
        register_linear(store, f"{prefix}.{name}", c, c, rng)
    # image branch; offsets and weights start at zero so sampling begins
    # exactly at the reference points with uniform weights
    n_samp = cfg.heads * cfg.levels * cfg.points
    register_linear(store, prefix + ".ioff", c, 2 * n_samp, rng, zero=True)
    register_linear(store, prefix + ".iw", c, n_samp, rng, zero=True)
    register_linear(store, prefix + ".iv", cfg.img_channels, c, rng)
    register_linear(store, prefix + ".io", c, c, rng)
    # gate: zero final layer -> balanced modalities at start
    register_mlp(store, prefix + ".gate", 3 * c, cfg.gate_mlp(), rng,
                 zero_last=True)
    register_mlp(store, prefix + ".ffn", c, cfg.ffn_mlp(), rng)


# ---------------------------------------------------------------------------
# point branch: multi-head cross attention
# ---------------------------------------------------------------------------

def cross_attention_forward(store: ParamStore, prefix: str, y: np.ndarray,
                            keys: np.ndarray, cfg: FusionConfig):
    """Attend from queries ``y`` [M,C] to ``keys`` [N,C].  The residual is
    added by the caller."""
    m, n = y.shape[0], keys.shape[0]
    h, dh = cfg.heads, cfg.head_dim
    q, q_cache = linear_forward(store, prefix + ".pq", y)
    k, k_cache = linear_forward(store, prefix + ".pk", keys)
    v, v_cache = linear_forward(store, prefix + ".pv", keys)
    qh = q.reshape(m, h, dh).transpose(1, 0, 2)   # [h,m,dh]
    kh = k.reshape(n, h, dh).transpose(1, 0, 2)   # [h,n,dh]
    vh = v.reshape(n, h, dh).transpose(1, 0, 2)
    scale = 1.0 / np.sqrt(dh)
    # batched matmuls over the head axis (BLAS) rather than einsum
    logits = (qh @ kh.transpose(0, 2, 1)) * scale
    attn = softmax(logits, axis=-1)
    ctx = attn @ vh
    concat = ctx.transpose(1, 0, 2).reshape(m, h * dh)
    out, o_cache = linear_forward(store, prefix + ".po", concat)
    cache = (q_cache, k_cache, v_cache, o_cache, qh, kh, vh, attn, scale,
             m, n, h, dh)
    return out, cache


def cross_attention_backward(store: ParamStore, cache, dout: np.ndarray):
    (q_cache, k_cache, v_cache, o_cache, qh, kh, vh, attn, scale,
     m, n, h, dh) = cache
    d_concat = linear_backward(store, o_cache, dout)
    d_ctx = d_concat.reshape(m, h, dh).transpose(1, 0, 2)
    d_attn = d_ctx @ vh.transpose(0, 2, 1)
    d_vh = attn.transpose(0, 2, 1) @ d_ctx
    d_logits = softmax_backward(attn, d_attn, axis=-1) * scale
    d_qh = d_logits @ kh
    d_kh = d_logits.transpose(0, 2, 1) @ qh
    d_y = linear_backward(store, q_cache,
                          d_qh.transpose(1, 0, 2).reshape(m, h * dh))
    d_keys = linear_backward(store, k_cache,
                             d_kh.transpose(1, 0, 2).reshape(n, h * dh))
    d_keys += linear_backward(store, v_cache,
                              d_vh.transpose(1, 0, 2).reshape(n, h * dh))
    return d_y, d_keys


# ---------------------------------------------------------------------------
# image branch: multi-scale deformable attention
# ---------------------------------------------------------------------------

def _head_slices(vals: np.ndarray, h: int) -> np.ndarray:
    """vals [m,h,P,h,dh] indexed (query, sampling head, point, value head,
    channel) -> [m,h,P,dh] where each head keeps its own value slice."""
    idx = np.arange(h)
    return vals[:, idx, :, idx, :].transpose(1, 0, 2, 3)


def ms_deform_attention_forward(store: ParamStore, prefix: str, y: np.ndarray,
                                pyramid: list[np.ndarray], ref_uv: np.ndarray,
                                valid: np.ndarray, cfg: FusionConfig):
    """Sample the image pyramid around each query's reference point.

    Raw offsets are in units of one pixel at the sampled level (the
    predicted offset is divided by the level resolution before being
    added to the normalized reference point).  Returns [M,C]; rows of
    invalid queries are exactly zero.  The residual is added by the
    caller.
    """
    m = y.shape[0]
    h, dh, lv, p = cfg.heads, cfg.head_dim, cfg.levels, cfg.points
    if len(pyramid) != lv:
        raise InputError(f"expected {lv} pyramid levels, got {len(pyramid)}")
    for fmap in pyramid:
        if fmap.ndim != 3 or fmap.shape[2] != cfg.img_channels:
            raise InputError("pyramid level shape mismatch: "
                             f"{fmap.shape} vs {cfg.img_channels} channels")
    off, off_cache = linear_forward(store, prefix + ".ioff", y)
    wlog, w_cache = linear_forward(store, prefix + ".iw", y)
    offsets = off.reshape(m, h, lv, p, 2)
    weights = softmax(wlog.reshape(m, h, lv * p), axis=-1) \
        .reshape(m, h, lv, p)

    ctx = np.zeros((m, h, dh))
    lvl_caches = []
    for l, fmap in enumerate(pyramid):
        hl, wl = fmap.shape[:2]
        res = np.array([float(wl), float(hl)])
        locs = ref_uv[:, None, None, :] + offsets[:, :, l, :, :] / res
        samp, b_cache = bilinear_sample_forward(fmap, locs.reshape(-1, 2))
        proj, v_cache = linear_forward(store, prefix + ".iv", samp)
        v_h = _head_slices(proj.reshape(m, h, p, h, dh), h)  # [m,h,P,dh]
        ctx += (weights[:, :, l, :, None] * v_h).sum(axis=2)
        lvl_caches.append((b_cache, v_cache, v_h, res))
    out, o_cache = linear_forward(store, prefix + ".io",
                                  ctx.reshape(m, h * dh))
    out = np.where(valid[:, None], out, 0.0)
    cache = (off_cache, w_cache, o_cache, lvl_caches, weights, valid,
             m, h, dh, lv, p)
    return out, cache


def ms_deform_attention_backward(store: ParamStore, cache, dout: np.ndarray):
    """Returns (d_y, d_pyramid).  Reference points are constants."""
    (off_cache, w_cache, o_cache, lvl_caches, weights, valid,
     m, h, dh, lv, p) = cache
    d_ctx = linear_backward(store, o_cache,
                            np.where(valid[:, None], dout, 0.0))
    d_ctx = d_ctx.reshape(m, h, dh)
    d_weights = np.zeros((m, h, lv, p))
    d_offsets = np.zeros((m, h, lv, p, 2))
    d_pyramid = []
    idx = np.arange(h)
    for l, (b_cache, v_cache, v_h, res) in enumerate(lvl_caches):
        d_v_h = weights[:, :, l, :, None] * d_ctx[:, :, None, :]
        d_weights[:, :, l, :] = (v_h * d_ctx[:, :, None, :]).sum(axis=-1)
        d_vals = np.zeros((m, h, p, h, dh))
        d_vals[:, idx, :, idx, :] = d_v_h.transpose(1, 0, 2, 3)
        d_samp = linear_backward(store, v_cache,
                                 d_vals.reshape(m * h * p, h * dh))
        d_map, d_flat = bilinear_sample_backward(b_cache, d_samp)
        d_pyramid.append(d_map)
        d_offsets[:, :, l, :, :] = d_flat.reshape(m, h, p, 2) / res
    d_wlog = softmax_backward(weights.reshape(m, h, lv * p),
                              d_weights.reshape(m, h, lv * p), axis=-1)
    d_y = linear_backward(store, w_cache, d_wlog.reshape(m, h * lv * p))
    d_y += linear_backward(store, off_cache,
                           d_offsets.reshape(m, 2 * h * lv * p))
    return d_y, d_pyramid


# ---------------------------------------------------------------------------
# gate: per-head 2-way softmax over [point, image] logits
# ---------------------------------------------------------------------------

def cross_modal_gate_forward(store: ParamStore, prefix: str, t: np.ndarray,
                             y_p: np.ndarray, y_i: np.ndarray,
                             cfg: FusionConfig):
    """Blend branch outputs per head; lambda_p + lambda_i = 1 exactly.
    Returns (fused [M,C], lambdas [M,H,2], cache)."""
    m, c = t.shape
    h, dh = cfg.heads, cfg.head_dim
    gin = np.concatenate([t, y_p, y_i], axis=1)
    glog, g_cache = mlp_forward(store, prefix + ".gate", gin, cfg.gate_mlp())
    lam = softmax(glog.reshape(m, h, 2), axis=-1)
    yp_h = y_p.reshape(m, h, dh)
    yi_h = y_i.reshape(m, h, dh)
    fused = (lam[:, :, 0:1] * yp_h + lam[:, :, 1:2] * yi_h).reshape(m, c)
    cache = (g_cache, lam, yp_h, yi_h, m, c, h, dh)
    return fused, lam, cache


def cross_modal_gate_backward(store: ParamStore, cache, d_fused: np.ndarray,
                              cfg: FusionConfig):
    """Returns (d_t, d_y_p, d_y_i)."""
    g_cache, lam, yp_h, yi_h, m, c, h, dh = cache
    d_f = d_fused.reshape(m, h, dh)
    d_yp = (lam[:, :, 0:1] * d_f).reshape(m, c)
    d_yi = (lam[:, :, 1:2] * d_f).reshape(m, c)
    d_lam = np.stack([(yp_h * d_f).sum(axis=-1),
                      (yi_h * d_f).sum(axis=-1)], axis=-1)
    d_glog = softmax_backward(lam, d_lam, axis=-1).reshape(m, 2 * h)
    d_gin = mlp_backward(store, g_cache, d_glog)
    d_t = d_gin[:, :c]
    d_yp += d_gin[:, c:2 * c]
    d_yi += d_gin[:, 2 * c:]
    return d_t, d_yp, d_yi


# ---------------------------------------------------------------------------
# full layer
# ---------------------------------------------------------------------------

def fusion_layer_forward(store: ParamStore, prefix: str, queries: np.ndarray,
                         point_feats: np.ndarray, pyramid: list[np.ndarray],
                         ref_uv: np.ndarray, valid: np.ndarray,
                         cfg: FusionConfig, *, balanced_gate: bool = False):
    """One pre-norm fusion layer.  Returns (out [M,C], cache).

    ``balanced_gate=True`` replaces the learned gate with a constant
    50/50 blend (inference-only ablation; the cache cannot be run
    backward).
    """
    if queries.ndim != 2 or queries.shape[1] != cfg.channels:
        raise InputError(f"queries must be [M,{cfg.channels}], "
                         f"got {queries.shape}")
    if point_feats.ndim != 2 or point_feats.shape[1] != cfg.channels:
        raise InputError(f"point features must be [N,{cfg.channels}], "
                         f"got {point_feats.shape}")
    m = queries.shape[0]
    if ref_uv.shape != (m, 2) or valid.shape != (m,):
        raise InputError("reference points must be [M,2] with a [M] mask")

    t, ln1_cache = layer_norm_forward(store, prefix + ".ln1", queries)
    y_p, p_cache = cross_attention_forward(store, prefix, t, point_feats, cfg)
    y_i, i_cache = ms_deform_attention_forward(store, prefix, t, pyramid,
                                               ref_uv, valid, cfg)
    if balanced_gate:
        fused, g_cache = 0.5 * (y_p + y_i), None
    else:
        fused, _, g_cache = cross_modal_gate_forward(store, prefix, t, y_p,
                                                     y_i, cfg)
    y1 = queries + fused
    t2, ln2_cache = layer_norm_forward(store, prefix + ".ln2", y1)
    f, f_cache = mlp_forward(store, prefix + ".ffn", t2, cfg.ffn_mlp())
    out = y1 + f
    cache = (ln1_cache, p_cache, i_cache, g_cache, ln2_cache, f_cache, cfg)
    return out, cache


def fusion_layer_backward(store: ParamStore, cache, dout: np.ndarray):
    """Returns (d_queries, d_point_feats, d_pyramid)."""
    ln1_cache, p_cache, i_cache, g_cache, ln2_cache, f_cache, cfg = cache
    if g_cache is None:
        raise ConfigError("a balanced-gate (ablation) cache cannot be "
                          "run backward")
    d_t2 = mlp_backward(store, f_cache, dout)
    d_y1 = dout + layer_norm_backward(store, ln2_cache, d_t2)
    d_queries = d_y1.copy()
    d_t, d_yp, d_yi = cross_modal_gate_backward(store, g_cache, d_y1, cfg)
    d_t_p, d_point_feats = cross_attention_backward(store, p_cache, d_yp)
    d_t_i, d_pyramid = ms_deform_attention_backward(store, i_cache, d_yi)
    d_t += d_t_p + d_t_i
    d_queries += layer_norm_backward(store, ln1_cache, d_t)
    return d_queries, d_point_feats, d_pyramid


def sample_margin(store: ParamStore, prefix: str, queries: np.ndarray,
                  pyramid: list[np.ndarray], ref_uv: np.ndarray,
                  valid: np.ndarray, cfg: FusionConfig) -> float:
    """Smallest distance of any sampling tap from a bilinear kink.

    Bilinear interpolation is non-smooth where a tap crosses an integer
    pixel line, and discontinuous where it crosses the image border.
    Gradient checks reject configurations whose margin is small, since
    finite differences straddling a kink disagree with one-sided
    analytic derivatives.  Distances are measured in pixels (to the
    nearest integer line) and in normalized units (to the borders);
    returns +inf when no query is valid.
    """
    m = queries.shape[0]
    h, lv, p = cfg.heads, cfg.levels, cfg.points
    t, _ = layer_norm_forward(store, prefix + ".ln1", queries)
    off, _ = linear_forward(store, prefix + ".ioff", t)
    offsets = off.reshape(m, h, lv, p, 2)
    margin = np.inf
    for l, fmap in enumerate(pyramid):
        hl, wl = fmap.shape[:2]
        res = np.array([float(wl), float(hl)])
        locs = ref_uv[:, None, None, :] + offsets[:, :, l, :, :] / res
        locs = locs[valid]
        if locs.size == 0:
            continue
        px = locs * (res - 1.0)
        margin = min(margin, float(np.abs(px - np.rint(px)).min()))
        margin = min(margin, float(np.abs(locs).min()),
                     float(np.abs(1.0 - locs).min()))
    return margin
