"""Cascaded proposal refinement: stage heads, target assignment, the
training objective, and the full detection model.

Three refinement stages share one pattern: contextualize the query
features (graph reasoning before and after stage 1, cross-modal fusion
in every stage), predict per-query class logits / face distances / yaw
/ centerness, then move each proposal to its predicted box center for
the next stage.  Positive targets are assigned per stage from the
proposals entering that stage, with a shrinking spatial margin and a
shrinking per-box top-k, so early stages see abundant samples and late
stages only high-quality ones.

Gradient semantics: target assignment is a detached, deterministic
function of the stage's input proposals, and proposal coordinates are
likewise treated as constants wherever they feed geometry (reference
points, graph construction, loss anchors).  The only cross-stage
gradient path is through the query features, which is tracked exactly.

Losses per stage: focal classification over all queries, a rotated-
overlap surrogate for regression and binary cross-entropy against the
centerness target over positives, each normalized by the positive
count (min 1), weighted 1.0 / 2.0 / 1.0 and averaged across stages.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import backbones, cross_modal, geometry, graph_reasoning
from .errors import InputError
from .ops import (
    ConfigError,
    MlpSpec,
    inverse_softplus,
    log_sigmoid,
    mlp_backward,
    mlp_forward,
    register_mlp,
    sigmoid,
    softplus,
)
from .params import ParamStore

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
W_CLS, W_REG, W_CTR = 1.0, 2.0, 1.0


# ---------------------------------------------------------------------------
# stage heads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeadConfig:
    channels: int = 64
    classes: int = 5

    def cls_mlp(self) -> MlpSpec:
        return MlpSpec(widths=(self.channels, self.classes),
                       relu=(True, False), layer_norm=(True, False))

    def reg_mlp(self) -> MlpSpec:
        # 6 face distances (through softplus downstream) + yaw (sin, cos)
        return MlpSpec(widths=(self.channels, 8),
                       relu=(True, False), layer_norm=(True, False))

    def ctr_mlp(self) -> MlpSpec:
        return MlpSpec(widths=(self.channels, 1),
                       relu=(True, False), layer_norm=(True, False))


def register_stage_heads(store: ParamStore, prefix: str, cfg: HeadConfig,
                         rng: np.random.Generator) -> None:
    register_mlp(store, prefix + ".cls", cfg.channels, cfg.cls_mlp(), rng)
    register_mlp(store, prefix + ".reg", cfg.channels, cfg.reg_mlp(), rng)
    register_mlp(store, prefix + ".ctr", cfg.channels, cfg.ctr_mlp(), rng)


def stage_heads_forward(store: ParamStore, prefix: str, feats: np.ndarray,
                        cfg: HeadConfig):
    """[M,C] -> predictions dict:
    cls [M,K] logits, reg [M,6] raw face distances (pre-softplus),
    yaw [M,2] raw (sin, cos), ctr [M] logits."""
    cls, cls_cache = mlp_forward(store, prefix + ".cls", feats, cfg.cls_mlp())
    reg8, reg_cache = mlp_forward(store, prefix + ".reg", feats,
                                  cfg.reg_mlp())
    ctr, ctr_cache = mlp_forward(store, prefix + ".ctr", feats, cfg.ctr_mlp())
    preds = {"cls": cls, "reg": reg8[:, :6], "yaw": reg8[:, 6:],
             "ctr": ctr[:, 0]}
    cache = (cls_cache, reg_cache, ctr_cache)
    return preds, cache


def stage_heads_backward(store: ParamStore, cache, dpreds: dict) -> np.ndarray:
    cls_cache, reg_cache, ctr_cache = cache
    dfeats = mlp_backward(store, cls_cache, dpreds["cls"])
    dreg8 = np.hstack([dpreds["reg"], dpreds["yaw"]])
    dfeats += mlp_backward(store, reg_cache, dreg8)
    dfeats += mlp_backward(store, ctr_cache, dpreds["ctr"][:, None])
    return dfeats


# ---------------------------------------------------------------------------
# cascade target assignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageTargets:
    """Per-query assignment for one stage; -1 marks a negative."""
    gt_index: np.ndarray    # [M] int
    labels: np.ndarray      # [M] int class ids
    centerness: np.ndarray  # [M] float in [0,1]

    @property
    def positive(self) -> np.ndarray:
        return self.gt_index >= 0


def assign_targets(positions: np.ndarray, gts: np.ndarray,
                   gt_labels: np.ndarray, num_classes: int, *,
                   margin: float, top_k: int) -> StageTargets:
    """Assign queries to ground-truth boxes for one stage.

    A query is a candidate for a box if it lies inside the box expanded
    by `margin` on every face.  Per box the `top_k` candidates ranked by
    (centerness target desc, center distance asc, query index asc) are
    kept; a query kept by several boxes goes to the one where its
    centerness is highest (ties: smaller center distance, then lower
    box index).  Centerness is measured against the un-expanded box, so
    margin-band queries carry a zero centerness target.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    m = positions.shape[0]
    gt_index = np.full(m, -1, dtype=np.int64)
    labels = np.full(m, -1, dtype=np.int64)
    ctr = np.zeros(m)
    gts = np.asarray(gts, dtype=np.float64)
    if gts.size == 0:
        return StageTargets(gt_index, labels, ctr)
    gts = np.atleast_2d(gts)
    if gts.shape[1] != 7:
        raise InputError(f"ground-truth boxes must be [G,7], got {gts.shape}")
    gt_labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    if gt_labels.shape[0] != gts.shape[0]:
        raise InputError("one label per ground-truth box required")
    if ((gt_labels < 0) | (gt_labels >= num_classes)).any():
        raise InputError(f"labels must lie in [0,{num_classes})")
    if top_k < 1:
        raise InputError("top_k must be positive")

    best_key = [None] * m
    for g in range(gts.shape[0]):
        box = gts[g]
        expanded = box.copy()
        expanded[3:6] += 2.0 * margin
        cand = np.flatnonzero(geometry.contains_points(expanded, positions))
        if cand.size == 0:
            continue
        deltas = geometry.encode_deltas(np.tile(box, (cand.size, 1)),
                                        positions[cand])
        cvals = geometry.centerness_target(deltas)
        dist = np.linalg.norm(positions[cand] - box[:3], axis=1)
        order = np.lexsort((cand, dist, -cvals))
        for o in order[:top_k]:
            q = int(cand[o])
            key = (cvals[o], -dist[o], -g)
            if best_key[q] is None or key > best_key[q]:
                best_key[q] = key
                gt_index[q] = g
                labels[q] = gt_labels[g]
                ctr[q] = cvals[o]
    return StageTargets(gt_index, labels, ctr)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_reg: float
    l_ctr: float
    total: float
    positives: int

    def as_dict(self) -> dict:
        return {"l_cls": self.l_cls, "l_reg": self.l_reg,
                "l_ctr": self.l_ctr, "total": self.total,
                "positives": self.positives}


def _focal_terms(z: np.ndarray, onehot: np.ndarray):
    """Element-wise focal loss and its logit gradient."""
    p = sigmoid(z)
    ln_p = log_sigmoid(z)       # log p, stable
    ln_q = log_sigmoid(-z)      # log (1-p)
    q = 1.0 - p
    fl_pos = -FOCAL_ALPHA * q ** FOCAL_GAMMA * ln_p
    fl_neg = -(1.0 - FOCAL_ALPHA) * p ** FOCAL_GAMMA * ln_q
    dfl_pos = FOCAL_ALPHA * q ** FOCAL_GAMMA * (FOCAL_GAMMA * p * ln_p - q)
    dfl_neg = (1.0 - FOCAL_ALPHA) * p ** FOCAL_GAMMA \
        * (p - FOCAL_GAMMA * q * ln_q)
    t = onehot == 1.0
    return np.where(t, fl_pos, fl_neg), np.where(t, dfl_pos, dfl_neg)


def stage_loss_forward(preds: dict, positions: np.ndarray,
                       targets: StageTargets, gts: np.ndarray):
    """One stage's weighted loss.  Returns (loss, LossBreakdown, cache)."""
    z = np.asarray(preds["cls"], dtype=np.float64)
    m, k = z.shape
    pos = targets.positive
    n_pos_raw = int(pos.sum())
    n_pos = max(1, n_pos_raw)

    onehot = np.zeros((m, k))
    if n_pos_raw:
        onehot[np.flatnonzero(pos), targets.labels[pos]] = 1.0
    fl, dfl = _focal_terms(z, onehot)
    l_cls = float(fl.sum()) / n_pos

    rcache = None
    zc = cstar = None
    l_reg = l_ctr = 0.0
    if n_pos_raw:
        gts = np.atleast_2d(np.asarray(gts, dtype=np.float64))
        l_reg, _, rcache = geometry.iou_surrogate_loss_forward(
            np.atleast_2d(positions)[pos], preds["reg"][pos],
            preds["yaw"][pos], gts[targets.gt_index[pos]])
        zc = preds["ctr"][pos]
        cstar = targets.centerness[pos]
        l_ctr = float((softplus(zc) - zc * cstar).sum()) / n_pos

    loss = W_CLS * l_cls + W_REG * l_reg + W_CTR * l_ctr
    parts = LossBreakdown(l_cls, float(l_reg), l_ctr, loss, n_pos_raw)
    lcache = (dfl, n_pos, pos, rcache, zc, cstar, m, k)
    return loss, parts, lcache


def stage_loss_backward(lcache) -> dict:
    """Gradient of the stage loss w.r.t. the prediction dict."""
    dfl, n_pos, pos, rcache, zc, cstar, m, k = lcache
    dpreds = {
        "cls": dfl * (W_CLS / n_pos),
        "reg": np.zeros((m, 6)),
        "yaw": np.zeros((m, 2)),
        "ctr": np.zeros(m),
    }
    if rcache is not None:
        d_raw, d_yaw_raw = geometry.iou_surrogate_loss_backward(rcache)
        dpreds["reg"][pos] = W_REG * d_raw
        dpreds["yaw"][pos] = W_REG * d_yaw_raw
        dpreds["ctr"][pos] = W_CTR * (sigmoid(zc) - cstar) / n_pos
    return dpreds


def combine_breakdowns(parts: list[LossBreakdown]) -> LossBreakdown:
    """Average stage losses; total recomputed from the averaged parts so
    the weighted identity holds exactly."""
    n = len(parts)
    l_cls = sum(p.l_cls for p in parts) / n
    l_reg = sum(p.l_reg for p in parts) / n
    l_ctr = sum(p.l_ctr for p in parts) / n
    total = W_CLS * l_cls + W_REG * l_reg + W_CTR * l_ctr
    return LossBreakdown(l_cls, l_reg, l_ctr, total,
                         sum(p.positives for p in parts))


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

VALID_ABLATIONS = ("no-grm", "no-gating", "point-only",
                   "single-scale-5", "single-scale-10", "single-scale-20")


def normalize_ablation(flag: str) -> str:
    f = flag.strip().lower()
    if f.startswith("single-scale-k="):
        f = "single-scale-" + f[len("single-scale-k="):]
    if f not in VALID_ABLATIONS:
        raise InputError(
            f"unknown ablation {flag!r}; valid: no-grm, no-gating, "
            "point-only, single-scale-k=5|10|20")
    return f


@dataclass(frozen=True)
class ModelConfig:
    classes: int = 5
    queries: int = 64        # proposals M
    channels: int = 64       # query/point feature width C
    img_channels: int = 32   # pyramid feature width
    heads: int = 4
    fusion_layers: int = 2   # per stage
    stages: int = 3
    scales: tuple[int, ...] = (5, 10, 20)
    idw_k: int = 16
    sample_points: int = 4   # deformable sampling points per (head, level)
    radius: float = 0.3
    max_group: int = 32
    margins: tuple[float, ...] = (0.2, 0.1, 0.0)
    top_k: tuple[int, ...] = (8, 6, 4)
    ffn_hidden: int = 128

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigError("at least one stage required")
        if len(self.margins) < self.stages or len(self.top_k) < self.stages:
            raise ConfigError("need a margin and top_k per stage")

    def encoder_cfg(self) -> backbones.PointEncoderConfig:
        return backbones.PointEncoderConfig(
            n_queries=self.queries, radius=self.radius,
            max_group=self.max_group, channels=self.channels)

    def pyramid_cfg(self) -> backbones.ImagePyramidConfig:
        return backbones.ImagePyramidConfig(channels=self.img_channels)

    def grm_cfg(self, scales=None) -> graph_reasoning.GrmConfig:
        return graph_reasoning.GrmConfig(
            channels=self.channels, scales=scales or self.scales,
            idw_k=self.idw_k)

    def fusion_cfg(self) -> cross_modal.FusionConfig:
        return cross_modal.FusionConfig(
            channels=self.channels, heads=self.heads,
            points=self.sample_points, levels=backbones.PYRAMID_LEVELS,
            img_channels=self.img_channels, ffn_hidden=self.ffn_hidden)

    def head_cfg(self) -> HeadConfig:
        return HeadConfig(channels=self.channels, classes=self.classes)


def register_model(store: ParamStore, cfg: ModelConfig,
                   rng: np.random.Generator) -> None:
    backbones.register_image_pyramid(store, "pyr", cfg.pyramid_cfg(), rng)
    backbones.register_point_encoder(store, "penc", cfg.encoder_cfg(), rng)
    graph_reasoning.register_grm(store, "grm1", cfg.grm_cfg(), rng)
    graph_reasoning.register_grm(store, "grm2", cfg.grm_cfg(), rng)
    for t in range(1, cfg.stages + 1):
        for j in range(cfg.fusion_layers):
            cross_modal.register_fusion_layer(store, f"s{t}.f{j}",
                                              cfg.fusion_cfg(), rng)
        register_stage_heads(store, f"s{t}.heads", cfg.head_cfg(), rng)


@dataclass
class StageRecord:
    proposals: np.ndarray  # [M,3] anchors entering the stage
    preds: dict
    boxes: np.ndarray      # [M,7] decoded from this stage's predictions


@dataclass
class ModelOutput:
    stages: list[StageRecord]
    seed_coords: np.ndarray

    @property
    def final_boxes(self) -> np.ndarray:
        return self.stages[-1].boxes


def model_forward(store: ParamStore, positions: np.ndarray,
                  colors: np.ndarray, cam: geometry.CameraModel,
                  cfg: ModelConfig, *, ablate: frozenset = frozenset(),
                  heads_fn=None, raster: np.ndarray | None = None):
    """Full pipeline on one scene.  Returns (ModelOutput, cache).

    `ablate` holds normalized ablation flags (inference only).
    `heads_fn(stage, feats, proposals) -> preds` overrides the learned
    heads (for oracle tests); such a forward cannot be run backward.
    """
    ablate = frozenset(normalize_ablation(a) for a in ablate)
    single = [int(a.rsplit("-", 1)[1]) for a in ablate
              if a.startswith("single-scale-")]
    grm_cfg = cfg.grm_cfg(scales=(single[0],) * len(cfg.scales)) \
        if single else cfg.grm_cfg()
    use_grm = "no-grm" not in ablate
    balanced = "no-gating" in ablate
    point_only = "point-only" in ablate

    positions = np.asarray(positions, dtype=np.float64)
    # decoded centers are clipped to the point-cloud extent plus a margin,
    # so no parameter setting can walk a proposal out of the scene
    clip_lo = positions.min(axis=0) - 1.0
    clip_hi = positions.max(axis=0) + 1.0

    if raster is None:
        raster = backbones.rasterize_scene(positions, colors, cam)
    pyramid, pyr_cache = backbones.encode_image_pyramid_forward(
        store, "pyr", raster, cfg.pyramid_cfg())
    enc, penc_cache = backbones.encode_points_forward(
        store, "penc", positions, colors, cfg.encoder_cfg())
    queries = enc.features
    pfeats = enc.point_features

    g1_cache = None
    if use_grm:
        queries, g1_cache = graph_reasoning.grm_forward(
            store, "grm1", queries, enc.coords, grm_cfg, pfeats, positions)

    proposals = enc.coords
    records: list[StageRecord] = []
    stage_caches = []
    g2_cache = None
    fus_cfg = cfg.fusion_cfg()
    for t in range(1, cfg.stages + 1):
        ref_uv, valid = cam.project_points(proposals)
        if point_only:
            valid = np.zeros_like(valid)
        fcaches = []
        for j in range(cfg.fusion_layers):
            queries, fc = cross_modal.fusion_layer_forward(
                store, f"s{t}.f{j}", queries, pfeats, pyramid, ref_uv,
                valid, fus_cfg, balanced_gate=balanced)
            fcaches.append(fc)
        if heads_fn is None:
            preds, hcache = stage_heads_forward(store, f"s{t}.heads",
                                                queries, cfg.head_cfg())
        else:
            preds, hcache = heads_fn(t, queries, proposals), None
        boxes = geometry.decode_boxes(proposals, preds["reg"], preds["yaw"])
        boxes[:, :3] = np.clip(boxes[:, :3], clip_lo, clip_hi)
        records.append(StageRecord(proposals=proposals, preds=preds,
                                   boxes=boxes))
        stage_caches.append((fcaches, hcache))
        proposals = boxes[:, :3]
        if t == 1 and use_grm:
            queries, g2_cache = graph_reasoning.grm_forward(
                store, "grm2", queries, proposals, grm_cfg, pfeats,
                positions)

    out = ModelOutput(stages=records, seed_coords=enc.coords)
    cache = (pyr_cache, penc_cache, g1_cache, g2_cache, stage_caches,
             len(pyramid), cfg)
    return out, cache


def model_backward(store: ParamStore, cache, dstage_preds: list[dict]) -> None:
    """Accumulate parameter gradients for per-stage prediction grads."""
    (pyr_cache, penc_cache, g1_cache, g2_cache, stage_caches, n_levels,
     cfg) = cache
    if len(dstage_preds) != len(stage_caches):
        raise InputError("one gradient dict per stage required")
    m = dstage_preds[0]["cls"].shape[0]
    d_queries = np.zeros((m, cfg.channels))
    d_pfeats = None
    d_pyr = [None] * n_levels

    def add_pf(d):
        nonlocal d_pfeats
        d_pfeats = d if d_pfeats is None else d_pfeats + d

    for t in reversed(range(len(stage_caches))):
        fcaches, hcache = stage_caches[t]
        if hcache is None:
            raise ConfigError("cannot backprop through an oracle heads "
                              "override")
        if t == 0 and g2_cache is not None:
            d_queries, d_pf = graph_reasoning.grm_backward(store, g2_cache,
                                                           d_queries)
            add_pf(d_pf)
        d_queries += stage_heads_backward(store, hcache, dstage_preds[t])
        for fc in reversed(fcaches):
            d_queries, d_pf, d_py = cross_modal.fusion_layer_backward(
                store, fc, d_queries)
            add_pf(d_pf)
            for l in range(n_levels):
                d_pyr[l] = d_py[l] if d_pyr[l] is None else d_pyr[l] + d_py[l]
    if g1_cache is not None:
        d_queries, d_pf = graph_reasoning.grm_backward(store, g1_cache,
                                                       d_queries)
        add_pf(d_pf)
    backbones.encode_points_backward(store, penc_cache, d_queries, d_pfeats)
    for l in range(n_levels):
        if d_pyr[l] is not None:
            backbones.encode_image_pyramid_backward(store, pyr_cache, l,
                                                    d_pyr[l])


def cascade_refine(store: ParamStore, positions: np.ndarray,
                   colors: np.ndarray, cam: geometry.CameraModel,
                   cfg: ModelConfig, *, ablate: frozenset = frozenset(),
                   heads_fn=None) -> ModelOutput:
    """Inference-style convenience wrapper: forward only."""
    out, _ = model_forward(store, positions, colors, cam, cfg,
                           ablate=ablate, heads_fn=heads_fn)
    return out


def scene_loss(store: ParamStore, positions: np.ndarray, colors: np.ndarray,
               cam: geometry.CameraModel, gts: np.ndarray,
               gt_labels: np.ndarray, cfg: ModelConfig, *,
               raster: np.ndarray | None = None, grad_scale: float = 1.0,
               backward: bool = True):
    """Per-scene training objective.

    Runs the cascade, assigns targets per stage from that stage's input
    proposals, and (optionally) accumulates parameter gradients scaled
    by `grad_scale`.  Returns (LossBreakdown, ModelOutput).
    """
    out, mcache = model_forward(store, positions, colors, cam, cfg,
                                raster=raster)
    dstages = []
    parts_per_stage = []
    for t, rec in enumerate(out.stages):
        tg = assign_targets(rec.proposals, gts, gt_labels, cfg.classes,
                            margin=cfg.margins[t], top_k=cfg.top_k[t])
        _, parts, lc = stage_loss_forward(rec.preds, rec.proposals, tg, gts)
        parts_per_stage.append(parts)
        if backward:
            dp = stage_loss_backward(lc)
            s = grad_scale / len(out.stages)
            dstages.append({k: v * s for k, v in dp.items()})
    if backward:
        model_backward(store, mcache, dstages)
    return combine_breakdowns(parts_per_stage), out


# ---------------------------------------------------------------------------
# inference decoding
# ---------------------------------------------------------------------------

def nms_keep(boxes: np.ndarray, scores: np.ndarray,
             iou_thresh: float = 0.5) -> np.ndarray:
    """Greedy suppression: keep boxes in descending score order (ties by
    lower index), dropping any box with IoU > thresh against a kept one."""
    n = boxes.shape[0]
    order = np.lexsort((np.arange(n), -scores))
    keep = []
    suppressed = np.zeros(n, dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        for j in order:
            if not suppressed[j] and j != i:
                if geometry.rotated_iou3d(boxes[i], boxes[j]) > iou_thresh:
                    suppressed[j] = True
    return np.asarray(keep, dtype=np.int64)


def decode_detections(out: ModelOutput, cfg: ModelConfig, *,
                      score_thresh: float = 0.05, nms_iou: float = 0.5):
    """Final-stage predictions -> (boxes [D,7], labels [D], scores [D]).

    Score = class sigmoid x centerness sigmoid; class-wise NMS; results
    sorted by descending score (ties: class id, then query index).
    """
    rec = out.stages[-1]
    cls_p = sigmoid(rec.preds["cls"])
    ctr_p = sigmoid(rec.preds["ctr"])
    scores_all = cls_p * ctr_p[:, None]
    rows = []
    for k in range(cfg.classes):
        sk = scores_all[:, k]
        cand = np.flatnonzero(sk >= score_thresh)
        if cand.size == 0:
            continue
        keep = nms_keep(rec.boxes[cand], sk[cand], nms_iou)
        for i in cand[keep]:
            rows.append((float(sk[i]), k, int(i)))
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    if not rows:
        return (np.zeros((0, 7)), np.zeros(0, dtype=np.int64), np.zeros(0))
    boxes = np.stack([rec.boxes[i] for _, _, i in rows])
    labels = np.array([k for _, k, _ in rows], dtype=np.int64)
    scores = np.array([s for s, _, _ in rows])
    return boxes, labels, scores


def oracle_heads(gts: np.ndarray, classes: int):
    """heads_fn emitting, for every proposal, face distances whose decoded
    center update lands exactly on the nearest ground-truth center.

    Raw regression values must pass through softplus, so exact face
    distances (which can be negative for outside proposals) are shifted
    per axis pair by a common positive constant: the pair difference —
    the only quantity the center update reads — is preserved exactly.
    Yaw raw values are the exact (sin, cos) of the matched box.
    """
    gts = np.atleast_2d(np.asarray(gts, dtype=np.float64))

    def fn(stage: int, feats: np.ndarray, proposals: np.ndarray) -> dict:
        m = proposals.shape[0]
        d2 = ((proposals[:, None, :] - gts[None, :, :3]) ** 2).sum(axis=-1)
        near = gts[d2.argmin(axis=1)]
        e = geometry.encode_deltas(near, proposals)
        shift = np.maximum(0.0, -np.minimum(e[:, 0::2], e[:, 1::2])) + 1.0
        raw = inverse_softplus(e + np.repeat(shift, 2, axis=1))
        yaw_raw = np.stack([np.sin(near[:, 6]), np.cos(near[:, 6])], axis=1)
        return {"cls": np.zeros((m, classes)), "reg": raw, "yaw": yaw_raw,
                "ctr": np.zeros(m)}

    return fn
