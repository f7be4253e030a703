"""Command-line entry points: synth | train | eval | gradcheck | infer.

Every command reads an optional JSON config file (--config) and lets
individual fields be overridden by flags of the same name, then echoes
the effective configuration into whatever artifact it writes.  Exit
codes: 0 success, 2 input error (bad flags, unreadable files, malformed
data, incompatible checkpoints), 3 numerical failure (non-finite loss),
1 check failure (a gradient check did not pass).

Set FUSIONDET_LOG=DEBUG|INFO|WARNING|ERROR to control log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .cascade import (
    cascade_refine,
    decode_detections,
    normalize_ablation,
    register_model,
)
from .checkpoints import load_checkpoint, restore_params
from .config import RunConfig, apply_overrides, load_config
from .errors import CheckpointError, InputError, NumericalError, ParseError
from .evaluation import Detection, SceneGroundTruth, map_at_iou, save_detections
from .gradcheck import DEFAULT_THRESHOLD, MODULE_CHECKS, run_module_check
from .ops import ConfigError
from .params import ParamStore
from .scenes import generate_scene, load_dataset, load_scene, save_dataset, split_dataset
from .train import NMS_IOU, SCORE_THRESH, evaluate_model, train_model

log = logging.getLogger("fusiondet")

# the interface names a couple of modules after the blocks they test;
# map those onto the registry keys used by the gradcheck harness
_MODULE_ALIASES = {"acmt": "fusion"}


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

_TUPLE_FIELDS = {"scales", "lr_milestones"}


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One override flag per RunConfig field, plus --config for the file."""
    parser.add_argument("--config", metavar="FILE",
                        help="JSON config file (flags below override it)")
    group = parser.add_argument_group("config overrides")
    for field in dataclasses.fields(RunConfig):
        flag = "--" + field.name.replace("_", "-")
        if field.name in _TUPLE_FIELDS:
            group.add_argument(flag, dest=field.name, type=_int_tuple,
                               default=None, metavar="N,N,...")
        elif field.name in ("voxel_size", "lr", "lr_decay", "weight_decay"):
            group.add_argument(flag, dest=field.name, type=float,
                               default=None, metavar="X")
        else:
            group.add_argument(flag, dest=field.name, type=int,
                               default=None, metavar="N")


def build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name)
                 for f in dataclasses.fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    return apply_overrides(cfg, overrides)


def _check_labels(samples, cfg: RunConfig) -> None:
    top = max((int(s.labels.max()) for s in samples if len(s.labels)),
              default=-1)
    if top >= cfg.num_classes:
        raise InputError(f"dataset contains class id {top} but the config "
                         f"has num_classes={cfg.num_classes}")


def _build_model(cfg: RunConfig, tensors) -> ParamStore:
    store = ParamStore()
    register_model(store, cfg.model_config(), np.random.default_rng(0))
    try:
        restore_params(store, tensors)
    except CheckpointError as e:
        raise CheckpointError(f"incompatible checkpoint: {e}")
    return store


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = build_config(args)
    if args.count < 1:
        raise InputError("empty dataset: --count must be at least 1")
    spec = cfg.scene_spec()
    # one well-mixed integer seed per scene, derived from the run seed
    seeds = np.random.SeedSequence(cfg.seed).generate_state(args.count)
    samples = [generate_scene(int(seeds[i]), spec, scene_id=f"scene_{i:04d}")
               for i in range(args.count)]
    ids = [s.scene_id for s in samples]
    if len(ids) >= 2:
        train_ids, val_ids = split_dataset(ids, args.train_fraction, cfg.seed)
    else:
        train_ids, val_ids = ids, []
    save_dataset(args.out_dir, samples, train_ids, val_ids,
                 extra_meta={"config": cfg.to_dict()})
    log.info("generated %d scenes (train %d / val %d)",
             len(ids), len(train_ids), len(val_ids))
    print(f"wrote {len(ids)} scenes to {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = build_config(args)
    samples, manifest = load_dataset(args.data_dir)
    _check_labels(samples.values(), cfg)
    train_ids = list(manifest["train"])
    val_ids = list(manifest["val"])
    state_path = Path(args.state) if args.state else Path(str(args.out) + ".state")

    sink = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout

    def emit(record):
        json.dump(record, sink)
        sink.write("\n")
        sink.flush()

    emit({"kind": "config", "config": cfg.to_dict(),
          "train_scenes": len(train_ids), "val_scenes": len(val_ids)})
    try:
        result = train_model(samples, train_ids, val_ids, cfg,
                             log_fn=emit, checkpoint_path=args.out,
                             state_path=state_path, resume=args.resume)
        emit({"kind": "done", "steps": result.steps,
              "final_loss": result.final_loss.total,
              "best_val_map": result.best_val_map})
    finally:
        if sink is not sys.stdout:
            sink.close()
    log.info("training finished after %d steps", result.steps)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _select_split(manifest, which: str) -> list:
    if which == "train":
        return list(manifest["train"])
    if which == "val":
        return list(manifest["val"])
    return list(manifest["train"]) + list(manifest["val"])


def cmd_eval(args) -> int:
    cfg, tensors = load_checkpoint(args.checkpoint)
    samples, manifest = load_dataset(args.data_dir)
    _check_labels(samples.values(), cfg)
    ids = _select_split(manifest, args.split)
    if not ids:
        raise InputError(f"the '{args.split}' split is empty; "
                         "pick --split train or --split all")
    scenes = [samples[i] for i in ids]
    ablate = frozenset(normalize_ablation(a) for a in args.ablate)

    if args.oracle:
        # ground-truth boxes replayed as unit-score predictions: a
        # plumbing check that must score 1.0 at every threshold
        dets = [Detection(box=b, label=int(lab), score=1.0, scene_id=s.scene_id)
                for s in scenes for b, lab in zip(s.boxes, s.labels)]
        gts = [SceneGroundTruth.from_sample(s) for s in scenes]
        reports = map_at_iou(dets, gts)
    else:
        store = _build_model(cfg, tensors)
        reports = evaluate_model(store, cfg.model_config(), scenes,
                                 ablate=ablate)

    doc = {
        "config": cfg.to_dict(),
        "split": args.split,
        "scenes": len(scenes),
        "ablate": sorted(ablate),
        "oracle": bool(args.oracle),
        "results": {
            str(r.iou_thresh): {
                "per_class": {str(k): r.ap_per_class[k]
                              for k in sorted(r.ap_per_class)},
                "mAP": r.mean_ap,
            }
            for r in reports
        },
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    if args.json:
        json.dump(doc, sys.stdout)
        sys.stdout.write("\n")
    else:
        for r in reports:
            per = "  ".join(f"c{k}={v:.3f}"
                            for k, v in sorted(r.ap_per_class.items()))
            print(f"mAP@{r.iou_thresh:g} = {r.mean_ap:.4f}   [{per}]")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    if args.module == "all":
        modules = list(MODULE_CHECKS)
    else:
        modules = [_MODULE_ALIASES.get(args.module, args.module)]
    if args.corrupt and len(modules) != 1:
        raise InputError("--corrupt needs a single --module, not 'all'")

    overall_worst = None  # (module, tensor, rel err)
    table = {}
    for module in modules:
        per_tensor: dict[str, float] = {}
        seconds = 0.0
        for seed in range(args.seeds):
            report = run_module_check(module, seed, corrupt=args.corrupt)
            seconds += report.seconds
            for tensor, err in report.per_tensor.items():
                per_tensor[tensor] = max(float(err),
                                         per_tensor.get(tensor, 0.0))
        worst_tensor = max(per_tensor, key=per_tensor.get)
        worst = per_tensor[worst_tensor]
        table[module] = {
            "max_rel_err": worst,
            "worst_tensor": worst_tensor,
            "passed": worst < args.threshold,
            "seeds": args.seeds,
            "seconds": round(seconds, 3),
            "tensors": per_tensor,
        }
        if overall_worst is None or worst > overall_worst[2]:
            overall_worst = (module, worst_tensor, worst)
        log.info("%s: max_rel_err=%.3e over %d seeds",
                 module, worst, args.seeds)

    passed = all(entry["passed"] for entry in table.values())
    doc = {"threshold": args.threshold, "passed": passed,
           "worst": {"module": overall_worst[0],
                     "tensor": overall_worst[1],
                     "rel_err": overall_worst[2]},
           "modules": table}
    if args.json:
        json.dump(doc, sys.stdout)
        sys.stdout.write("\n")
    else:
        for module, entry in table.items():
            status = "ok" if entry["passed"] else "FAIL"
            print(f"[{status}] {module}: max_rel_err={entry['max_rel_err']:.3e}"
                  f" ({entry['worst_tensor']}) seeds={entry['seeds']}")
        print(f"{'PASS' if passed else 'FAIL'}: worst {overall_worst[1]} "
              f"in {overall_worst[0]} rel_err={overall_worst[2]:.3e} "
              f"(threshold {args.threshold:g})")
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def cmd_infer(args) -> int:
    cfg, tensors = load_checkpoint(args.checkpoint)
    sample = load_scene(args.scene_dir)
    store = _build_model(cfg, tensors)
    out = cascade_refine(store, sample.positions, sample.colors, sample.cam,
                         cfg.model_config())
    boxes, labels, scores = decode_detections(
        out, cfg.model_config(), score_thresh=SCORE_THRESH, nms_iou=NMS_IOU)
    save_detections(args.out, sample.scene_id, boxes, labels, scores,
                    config=cfg.to_dict())
    log.info("scene %s -> %d detections", sample.scene_id, len(scores))
    print(f"wrote {len(scores)} detections to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusiondet",
        description="Multi-modal 3D object detection on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("out_dir", help="output dataset directory")
    p.add_argument("--count", type=int, required=True,
                   help="number of scenes to generate")
    p.add_argument("--train-fraction", type=float, default=0.8,
                   help="share of scenes in the train split (default 0.8)")
    add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("data_dir", help="dataset directory from `synth`")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--state", default=None,
                   help="resume-state path (default: <out>.state)")
    p.add_argument("--resume", action="store_true",
                   help="continue from the resume state")
    p.add_argument("--log", default=None,
                   help="JSONL log path (default: stdout)")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("data_dir")
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--ablate", action="append", default=[], metavar="FLAG",
                   help="disable a component at inference; repeatable "
                        "(no-grm, no-gating, point-only, single-scale-k=K)")
    p.add_argument("--oracle", action="store_true",
                   help="replay ground-truth boxes as predictions "
                        "(plumbing check; must score mAP 1.0)")
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.add_argument("--json", action="store_true",
                   help="print the report as JSON instead of a summary")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="compare analytic gradients to finite differences")
    p.add_argument("--module", default="all",
                   choices=["all"] + sorted(set(MODULE_CHECKS)
                                            | set(_MODULE_ALIASES)))
    p.add_argument("--seeds", type=int, default=20,
                   help="random problem instances per module (default 20)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="max allowed relative error")
    p.add_argument("--corrupt", default=None, metavar="TENSOR",
                   help="deliberately distort this tensor's analytic "
                        "gradient (negative control; needs one --module)")
    p.add_argument("--json", action="store_true",
                   help="print the report as JSON instead of a table")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("infer", help="run detection on one scene archive")
    p.add_argument("checkpoint")
    p.add_argument("scene_dir", help="SceneArchive directory")
    p.add_argument("--out", required=True, help="detections JSON path")
    p.set_defaults(func=cmd_infer)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("FUSIONDET_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (InputError, ParseError, CheckpointError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
