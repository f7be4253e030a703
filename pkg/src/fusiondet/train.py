"""Training loop and model evaluation harness.

One optimizer step consumes one batch of scenes: each scene's loss
gradients are accumulated in a fixed order with a 1/batch scale, then
AdamW applies the epoch's learning rate.  Every random choice (init,
per-epoch shuffling) comes from named substreams of the run seed, so a
single-threaded run is bit-reproducible and a run resumed from a state
file continues exactly where the interrupted one left off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backbones import rasterize_scene
from .cascade import (
    LossBreakdown,
    combine_breakdowns,
    cascade_refine,
    decode_detections,
    register_model,
    scene_loss,
)
from .checkpoints import (
    load_training_state,
    restore_params,
    save_checkpoint,
    save_training_state,
)
from .config import RunConfig
from .errors import CheckpointError, InputError, NumericalError
from .evaluation import Detection, SceneGroundTruth, map_at_iou
from .optim import AdamW
from .params import ParamStore

# inference-time decoding knobs (fixed protocol, not configuration)
SCORE_THRESH = 0.05
NMS_IOU = 0.5


def evaluate_model(store: ParamStore, mcfg, samples, *,
                   ablate=frozenset(), thresholds=(0.25, 0.5),
                   score_thresh: float = SCORE_THRESH,
                   nms_iou: float = NMS_IOU):
    """Run inference over `samples` and score it -> ThresholdReports."""
    dets = []
    gts = []
    for s in samples:
        out = cascade_refine(store, s.positions, s.colors, s.cam, mcfg,
                             ablate=frozenset(ablate))
        boxes, labels, scores = decode_detections(
            out, mcfg, score_thresh=score_thresh, nms_iou=nms_iou)
        for b, lab, sc in zip(boxes, labels, scores):
            dets.append(Detection(box=b, label=int(lab), score=float(sc),
                                  scene_id=s.scene_id))
        gts.append(SceneGroundTruth.from_sample(s))
    return map_at_iou(dets, gts, thresholds)


@dataclass
class TrainResult:
    store: ParamStore
    steps: int
    final_loss: LossBreakdown
    best_val_map: float | None
    checkpoint_saved: bool


def _chunks(seq, size):
    for lo in range(0, len(seq), size):
        yield seq[lo:lo + size]


def train_model(samples: dict, train_ids, val_ids, cfg: RunConfig, *,
                log_fn=None, checkpoint_path=None, state_path=None,
                resume: bool = False) -> TrainResult:
    """Train a fresh (or resumed) model on the given scene split.

    `samples` maps scene id -> SceneSample and must cover both id
    lists.  Per-step records (and per-epoch validation records) go to
    `log_fn`; the best-by-validation-mAP parameters go to
    `checkpoint_path`; `state_path` receives a resume file after every
    epoch.  Training stops early once cfg.max_steps optimizer steps ran.
    """
    train_ids = list(train_ids)
    val_ids = list(val_ids)
    missing = [i for i in train_ids + val_ids if i not in samples]
    if missing:
        raise InputError(f"scene id '{missing[0]}' not in the dataset")
    if not train_ids:
        raise InputError("empty dataset: no training scenes")

    mcfg = cfg.model_config()
    ocfg = cfg.optim_config()
    store = ParamStore()
    register_model(store, mcfg, np.random.default_rng((cfg.seed, 0)))
    opt = AdamW(store, ocfg)
    shuffle_rng = np.random.default_rng((cfg.seed, 1))
    start_epoch = 0
    global_step = 0
    best: float | None = None
    saved = False

    if resume:
        saved_cfg, params, opt_state, meta = load_training_state(state_path)
        if saved_cfg != cfg:
            raise CheckpointError("resume state was written with a "
                                  "different config")
        restore_params(store, params)
        opt.load_state_dict(opt_state)
        shuffle_rng.bit_generator.state = meta["rng"]
        start_epoch = int(meta["epoch"])
        global_step = int(meta["step"])
        best = meta["best_val_map"]
        saved = bool(meta["checkpoint_saved"])

    # rasters depend only on the scene, so build each once up front
    rasters = {sid: rasterize_scene(s.positions, s.colors, s.cam)
               for sid, s in samples.items() if sid in set(train_ids)}

    last = LossBreakdown(0.0, 0.0, 0.0, 0.0, 0)
    stop = False
    for epoch in range(start_epoch, cfg.epochs):
        if cfg.max_steps is not None and global_step >= cfg.max_steps:
            break
        order = [train_ids[i]
                 for i in shuffle_rng.permutation(len(train_ids))]
        lr = ocfg.lr_at_epoch(epoch)
        for batch in _chunks(order, cfg.batch_size):
            store.zero_grads()
            parts = []
            for sid in batch:
                s = samples[sid]
                bd, _ = scene_loss(store, s.positions, s.colors, s.cam,
                                   s.boxes, s.labels, mcfg,
                                   raster=rasters[sid],
                                   grad_scale=1.0 / len(batch))
                parts.append(bd)
            last = combine_breakdowns(parts)
            finite = math.isfinite(last.total)
            if log_fn is not None:
                log_fn({"kind": "step", "step": global_step, "epoch": epoch,
                        "lr": lr,
                        "loss": last.total if finite else None,
                        "cls": last.l_cls if finite else None,
                        "reg": last.l_reg if finite else None,
                        "ctr": last.l_ctr if finite else None,
                        "positives": last.positives,
                        "finite": finite})
            if not finite:
                raise NumericalError(
                    f"non-finite loss at step {global_step} "
                    f"(cls={last.l_cls!r}, reg={last.l_reg!r}, "
                    f"ctr={last.l_ctr!r})")
            opt.step(lr=lr)
            global_step += 1
            if cfg.max_steps is not None and global_step >= cfg.max_steps:
                stop = True
                break

        if val_ids:
            reports = evaluate_model(store, mcfg,
                                     [samples[i] for i in val_ids])
            val_map = reports[0].mean_ap
            if log_fn is not None:
                log_fn({"kind": "val", "epoch": epoch, "step": global_step,
                        "map": {str(r.iou_thresh): r.mean_ap
                                for r in reports}})
            if best is None or val_map > best:
                best = val_map
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, store, cfg)
                    saved = True
        if state_path is not None:
            save_training_state(
                state_path, store, opt, cfg,
                {"epoch": epoch + 1, "step": global_step,
                 "rng": shuffle_rng.bit_generator.state,
                 "best_val_map": best, "checkpoint_saved": saved})
        if stop:
            break

    if checkpoint_path is not None and not saved:
        # no validation set ever picked a best model: keep the final one
        save_checkpoint(checkpoint_path, store, cfg)
        saved = True
    return TrainResult(store=store, steps=global_step, final_loss=last,
                       best_val_map=best, checkpoint_saved=saved)
