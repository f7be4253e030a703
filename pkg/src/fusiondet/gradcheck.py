"""Finite-difference verification of the analytic backward passes.

`finite_diff_check` perturbs a deterministic subsample of elements of
every parameter (and optionally every named input) of a loss function
and compares central differences against the gradients produced by the
hand-written backward rules.

Relative error uses |a - n| / max(1e-8, |a| + |n|). Central differences
with h = 1e-5 on a float64 loss of magnitude O(1) carry ~1e-10 of
rounding noise, so element pairs whose absolute difference is below
`atol` are counted as agreeing regardless of the ratio — otherwise a
pair of true gradients at, say, 3e-8 would fail on noise alone.

`MODULE_CHECKS` maps module names to builders of small, seeded check
problems. Builders reject configurations that sit within the
finite-difference window of a non-smooth switch (max-pool near-ties,
bilinear taps near pixel-grid lines): central differences are invalid
there, and the rejection is on the test problem, never on the result.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore

DEFAULT_H = 1e-5
DEFAULT_THRESHOLD = 1e-4
DEFAULT_ATOL = 1e-8


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference sweep."""

    name: str
    threshold: float
    max_rel_err: float = 0.0
    worst_tensor: str = ""
    per_tensor: dict[str, float] = field(default_factory=dict)
    n_checked: int = 0
    passed: bool = True
    seconds: float = 0.0

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: max_rel_err={self.max_rel_err:.3e} "
                f"(worst: {self.worst_tensor}, {self.n_checked} elems, "
                f"{self.seconds:.2f}s)")


def _subsample(rng: np.random.Generator, size: int, max_elems: int) -> np.ndarray:
    if size <= max_elems:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_elems, replace=False))


def finite_diff_check(
    loss_and_grads: Callable,
    store: ParamStore,
    inputs: dict[str, np.ndarray] | None = None,
    *,
    h: float = DEFAULT_H,
    threshold: float = DEFAULT_THRESHOLD,
    atol: float = DEFAULT_ATOL,
    max_elems_per_tensor: int = 16,
    rng: np.random.Generator | None = None,
    name: str = "check",
    corrupt: str | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar loss against central differences.

    `loss_and_grads(store, inputs)` must zero nothing, accumulate
    parameter gradients into `store`, and return `(loss, input_grads)`
    where `input_grads` maps each key of `inputs` to an array of the
    input's shape (it may be None when `inputs` is None).

    Parameters are addressed as "p:<name>" and inputs as "i:<name>" in
    the report. `corrupt` names one such tensor whose analytic gradient
    is deliberately distorted before comparison — a negative control
    proving the sweep can catch a wrong gradient.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    inputs = inputs if inputs is not None else {}
    t0 = time.perf_counter()

    store.zero_grads()
    _, input_grads = loss_and_grads(store, inputs)
    analytic: dict[str, np.ndarray] = {}
    for pname in store.names():
        analytic["p:" + pname] = store.grad(pname).copy()
    for iname in inputs:
        analytic["i:" + iname] = np.asarray(input_grads[iname], dtype=np.float64)

    if corrupt is not None:
        if corrupt not in analytic:
            raise KeyError(f"no tensor named {corrupt!r} to corrupt")
        analytic[corrupt] = analytic[corrupt] * 1.5 + 0.05

    def loss_only() -> float:
        store.zero_grads()
        val, _ = loss_and_grads(store, inputs)
        return float(val)

    report = GradCheckReport(name=name, threshold=threshold)
    for key, grad in analytic.items():
        if key.startswith("p:"):
            arr = store.value(key[2:])
            setter = lambda a, n=key[2:]: store.set_value(n, a)
        else:
            arr = inputs[key[2:]]
            setter = None  # mutated in place
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        idxs = _subsample(rng, flat.size, max_elems_per_tensor)
        worst = 0.0
        for i in idxs:
            old = flat[i]
            flat[i] = old + h
            if setter:
                setter(arr)
            fp = loss_only()
            flat[i] = old - h
            if setter:
                setter(arr)
            fm = loss_only()
            flat[i] = old
            if setter:
                setter(arr)
            num = (fp - fm) / (2.0 * h)
            ana = gflat[i]
            diff = abs(ana - num)
            rel = 0.0 if diff <= atol else diff / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, rel)
            report.n_checked += 1
        report.per_tensor[key] = worst
        if worst > report.max_rel_err:
            report.max_rel_err = worst
            report.worst_tensor = key

    # re-establish gradients at the unperturbed point
    store.zero_grads()
    loss_and_grads(store, inputs)
    report.passed = report.max_rel_err < threshold
    report.seconds = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# per-module check problems
# ---------------------------------------------------------------------------
# Builders return (loss_and_grads, store, inputs). Sizes are tiny on
# purpose: the point is to exercise every backward rule, not to scale.

# Builders reject problems where any ReLU preactivation sits closer to
# zero than this: a +-h sweep there can cross the kink, where central
# differences are simply not a valid derivative estimate. A sweep moves
# a preactivation by at most h * sensitivity ~ 5e-5 for these small
# layer-normalized nets, so 2e-4 gives a 4x safety factor while keeping
# the rejection rate low even with thousands of units in play.
RELU_MARGIN = 2e-4


def _relu_margin(loss_and_grads, store, inputs) -> float:
    """Smallest |preactivation| feeding any ReLU in one loss evaluation."""
    from . import ops

    trace: list = []
    ops.RELU_MARGIN_TRACE = trace
    try:
        store.zero_grads()
        loss_and_grads(store, inputs)
    finally:
        ops.RELU_MARGIN_TRACE = None
    return min(trace) if trace else np.inf


def _build_kernels(seed: int):
    from . import ops

    spec = ops.MlpSpec(widths=(6, 5), relu=(True, False), layer_norm=(True, False))
    for attempt in range(64):
        rng = np.random.default_rng((seed, attempt))
        store = ParamStore()
        ops.register_mlp(store, "mlp", 4, spec, rng)
        inputs = {
            "x": rng.normal(size=(5, 4)),
            "fmap": rng.normal(size=(4, 5, 3)),
            "uv": np.round(rng.uniform(0.1, 0.9, size=(6, 2)) * 17) / 17 + 0.011,
            "a": rng.normal(size=(7, 6)),
            "b": rng.normal(size=(7, 6)),
        }
        w_mlp = rng.normal(size=(5, 5))
        w_bil = rng.normal(size=(6, 3))
        w_cos = rng.normal(size=7)

        def loss_and_grads(store, inputs, _wm=w_mlp, _wb=w_bil, _wc=w_cos):
            y, c_mlp = ops.mlp_forward(store, "mlp", inputs["x"], spec)
            s = ops.softmax(y, axis=-1)
            samp, c_bil = ops.bilinear_sample_forward(inputs["fmap"], inputs["uv"])
            cos, c_cos = ops.cosine_sim_forward(inputs["a"], inputs["b"])
            loss = float((s * _wm).sum() + (samp * _wb).sum() + (cos * _wc).sum())
            dy = ops.softmax_backward(s, _wm, axis=-1)
            dx = ops.mlp_backward(store, c_mlp, dy)
            dmap, duv = ops.bilinear_sample_backward(c_bil, _wb)
            da, db = ops.cosine_sim_backward(c_cos, _wc)
            return loss, {"x": dx, "fmap": dmap, "uv": duv, "a": da, "b": db}

        if _relu_margin(loss_and_grads, store, inputs) > RELU_MARGIN:
            return loss_and_grads, store, inputs
    raise RuntimeError("could not find a kink-free kernels configuration")


def _build_geometry(seed: int):
    from . import geometry

    rng = np.random.default_rng(seed)
    n = 6
    while True:
        gt = np.column_stack([
            rng.uniform(-1, 1, size=(n, 3)).reshape(n, 3),
            rng.uniform(0.5, 1.5, size=(n, 3)).reshape(n, 3),
            rng.uniform(-np.pi, np.pi, size=n).reshape(n, 1),
        ])
        anchors = gt[:, :3] + rng.uniform(-0.15, 0.15, size=(n, 3))
        raw = rng.normal(size=(n, 6)) * 0.3
        yaw_raw = rng.normal(size=(n, 2))
        # keep clear of the atan2 origin and the interval min/max ties
        yaw_norm, tie = geometry.surrogate_margins(anchors, raw, yaw_raw, gt)
        if yaw_norm > 0.1 and tie > 1e-3:
            break

    inputs = {"raw": raw, "yaw_raw": yaw_raw}
    store = ParamStore()  # pure-input check: the surrogate has no parameters

    def loss_and_grads(store, inputs):
        loss, _, cache = geometry.iou_surrogate_loss_forward(
            anchors, inputs["raw"], inputs["yaw_raw"], gt)
        draw, dyaw = geometry.iou_surrogate_loss_backward(cache)
        return loss, {"raw": draw, "yaw_raw": dyaw}

    return loss_and_grads, store, inputs


def _build_backbones(seed: int):
    from . import backbones, ops

    rng = np.random.default_rng(seed)
    for attempt in range(64):
        sub = np.random.default_rng((seed, attempt))
        pts = sub.uniform(-1, 1, size=(48, 3))
        colors = sub.uniform(0, 1, size=(48, 3))
        image = sub.uniform(0, 1, size=(32, 32, 4))
        store = ParamStore()
        cfg = backbones.PointEncoderConfig(n_queries=8, radius=0.6,
                                           max_group=8, channels=8)
        backbones.register_point_encoder(store, "pts", cfg, sub)
        icfg = backbones.ImagePyramidConfig(channels=6)
        backbones.register_image_pyramid(store, "img", icfg, sub)

        def loss_and_grads(store, inputs, _cfg=cfg, _icfg=icfg, _pts=pts):
            enc, cache = backbones.encode_points_forward(
                store, "pts", _pts, inputs["colors"], _cfg)
            pyr, pcache = backbones.encode_image_pyramid_forward(
                store, "img", inputs["image"], _icfg)
            wf = np.arange(enc.features.size, dtype=np.float64).reshape(
                enc.features.shape) * 0.01
            loss = float((enc.features * wf).sum())
            dcolors = backbones.encode_points_backward(store, cache, wf)
            dimg = np.zeros_like(inputs["image"])
            for lvl, fmap in enumerate(pyr):
                wl = 0.01 * (lvl + 1) * np.ones_like(fmap)
                loss += float((fmap * wl).sum())
                dimg += backbones.encode_image_pyramid_backward(
                    store, pcache, lvl, wl)
            return loss, {"colors": dcolors, "image": dimg}

        inputs = {"colors": colors, "image": image}
        if (backbones.maxpool_margin(store, "pts", pts, colors, cfg) > 1e-3
                and _relu_margin(loss_and_grads, store, inputs) > RELU_MARGIN):
            return loss_and_grads, store, inputs
    raise RuntimeError("could not find a tie-free backbone configuration")


def _build_grm(seed: int):
    from . import graph_reasoning as grm

    m, c, n_pts = 7, 8, 18
    cfg = grm.GrmConfig(channels=c, scales=(2, 3, 5), idw_k=4)
    for attempt in range(64):
        rng = np.random.default_rng((seed, attempt))
        coords = rng.uniform(-1, 1, size=(m, 3))
        point_coords = rng.uniform(-1, 1, size=(n_pts, 3))
        store = ParamStore()
        grm.register_grm(store, "grm", cfg, rng)
        store.set_value("grm.gamma", np.array([0.7]))  # move off the zero init
        inputs = {"feats": rng.normal(size=(m, c)),
                  "point_feats": rng.normal(size=(n_pts, c))}

        def loss_and_grads(store, inputs, _coords=coords, _pc=point_coords):
            w = np.cos(np.arange(m * c, dtype=np.float64)).reshape(m, c)
            out, cache = grm.grm_forward(store, "grm", inputs["feats"],
                                         _coords, cfg, inputs["point_feats"],
                                         _pc)
            loss = float((out * w).sum())
            dfeats, dpoints = grm.grm_backward(store, cache, w)
            return loss, {"feats": dfeats, "point_feats": dpoints}

        if _relu_margin(loss_and_grads, store, inputs) > RELU_MARGIN:
            return loss_and_grads, store, inputs
    raise RuntimeError("could not find a kink-free graph configuration")


def _build_fusion(seed: int):
    from . import cross_modal as cm

    rng = np.random.default_rng(seed)
    m, c, n_pts = 5, 8, 12
    cfg = cm.FusionConfig(channels=c, heads=2, points=2, levels=4,
                          img_channels=c, ffn_hidden=2 * c)
    for attempt in range(64):
        sub = np.random.default_rng((seed, attempt))
        store = ParamStore()
        cm.register_fusion_layer(store, "fuse", cfg, sub)
        # move the zero-initialized offset/gate layers off their init so
        # their backward paths carry signal
        for nm in store.names():
            if store.value(nm).ndim == 2 and not store.value(nm).any():
                store.set_value(nm, sub.normal(size=store.value(nm).shape) * 0.3)
        queries = sub.normal(size=(m, c))
        point_feats = sub.normal(size=(n_pts, c))
        pyramid = [sub.normal(size=(12 // (2 ** l) + 2, 12 // (2 ** l) + 2, c))
                   for l in range(cfg.levels)]
        ref_uv = np.column_stack([sub.uniform(0.15, 0.85, size=m),
                                  sub.uniform(0.15, 0.85, size=m)])
        valid = np.ones(m, dtype=bool)
        valid[m - 1] = False  # exercise the off-image path

        def loss_and_grads(store, inputs, _ref=ref_uv, _valid=valid):
            w = np.sin(np.arange(m * c, dtype=np.float64)).reshape(m, c)
            pyr = [inputs[f"lvl{l}"] for l in range(cfg.levels)]
            out, cache = cm.fusion_layer_forward(
                store, "fuse", inputs["queries"], inputs["point_feats"],
                pyr, _ref, _valid, cfg)
            loss = float((out * w).sum())
            dq, dpf, dpyr = cm.fusion_layer_backward(store, cache, w)
            grads = {"queries": dq, "point_feats": dpf}
            grads.update({f"lvl{l}": dpyr[l] for l in range(cfg.levels)})
            return loss, grads

        margin = cm.sample_margin(store, "fuse", queries, pyramid, ref_uv,
                                  valid, cfg)
        inputs = {"queries": queries, "point_feats": point_feats}
        inputs.update({f"lvl{l}": pyramid[l] for l in range(cfg.levels)})
        if (margin > 1e-3
                and _relu_margin(loss_and_grads, store, inputs) > RELU_MARGIN):
            return loss_and_grads, store, inputs
    raise RuntimeError("could not find a grid-safe fusion configuration")


def _build_decoder(seed: int):
    from . import cascade, geometry

    m, c, k = 6, 8, 3
    cfg = cascade.HeadConfig(channels=c, classes=k)
    for attempt in range(256):
        rng = np.random.default_rng((seed, attempt))
        store = ParamStore()
        cascade.register_stage_heads(store, "heads", cfg, rng)
        feats = rng.normal(size=(m, c))
        n_gt = 3
        gt = np.column_stack([
            rng.uniform(-1, 1, size=(n_gt, 3)),
            rng.uniform(0.6, 1.4, size=(n_gt, 3)),
            rng.uniform(-np.pi, np.pi, size=n_gt).reshape(n_gt, 1),
        ])
        gt_labels = rng.integers(0, k, size=n_gt)
        # drop the queries near the boxes so several land positive
        positions = (gt[rng.integers(0, n_gt, size=m), :3]
                     + rng.uniform(-0.3, 0.3, size=(m, 3)))
        # fixed target assignment: targets are constants w.r.t. the loss
        targets = cascade.assign_targets(positions, gt, gt_labels, k,
                                         margin=0.2, top_k=4)
        pos = targets.positive
        if pos.sum() < 2:
            continue

        def loss_and_grads(store, inputs, _pos=positions, _t=targets, _gt=gt):
            preds, cache = cascade.stage_heads_forward(store, "heads",
                                                       inputs["feats"], cfg)
            loss, parts, lcache = cascade.stage_loss_forward(
                preds, _pos, _t, _gt)
            dpreds = cascade.stage_loss_backward(lcache)
            dfeats = cascade.stage_heads_backward(store, cache, dpreds)
            return loss, {"feats": dfeats}

        # the regression surrogate routes through min/max/atan2; keep
        # every positive row clear of those switch sets at this problem
        preds, _ = cascade.stage_heads_forward(store, "heads", feats, cfg)
        yaw_norm, tie = geometry.surrogate_margins(
            positions[pos], preds["reg"][pos], preds["yaw"][pos],
            gt[targets.gt_index[pos]])
        inputs = {"feats": feats}
        if (yaw_norm > 0.1 and tie > 1e-3
                and _relu_margin(loss_and_grads, store, inputs) > RELU_MARGIN):
            return loss_and_grads, store, inputs
    raise RuntimeError("could not find a kink-free decoder configuration")


MODULE_CHECKS: dict[str, Callable] = {
    "kernels": _build_kernels,
    "geometry": _build_geometry,
    "backbones": _build_backbones,
    "grm": _build_grm,
    "fusion": _build_fusion,
    "decoder": _build_decoder,
}


def run_module_check(module: str, seed: int, *, threshold: float = DEFAULT_THRESHOLD,
                     max_elems: int = 16, corrupt: str | None = None) -> GradCheckReport:
    builder = MODULE_CHECKS[module]
    loss_and_grads, store, inputs = builder(seed)
    return finite_diff_check(
        loss_and_grads, store, inputs,
        threshold=threshold, max_elems_per_tensor=max_elems,
        rng=np.random.default_rng(seed + 99991),
        name=f"{module}[seed={seed}]", corrupt=corrupt)
