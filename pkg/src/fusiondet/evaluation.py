"""Detection matching and average-precision evaluation.

Per class, detections are ranked by score and matched greedily: each
one claims the highest-IoU still-unclaimed ground-truth box of its own
scene that clears the IoU threshold (TP), or counts as a false
positive.  Precision/recall accumulate over the ranking and integrate
into AP by the all-point rule (area under the precision envelope);
mAP averages the per-class APs over classes that have ground truth.

Detection files are one JSON document per scene; each row extends the
boxes.json tuple with a score: [x, y, z, w, l, h, theta, class, score].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .geometry import rotated_iou3d
from .scenes import (
    _check_keys,
    _dump_json,
    _is_int,
    _is_real,
    _load_json_object,
)

DETECTIONS_FORMAT = "detections"
DETECTIONS_VERSION = 1


@dataclass(frozen=True)
class Detection:
    """One scored box prediction tied to a scene."""

    box: np.ndarray
    label: int
    score: float
    scene_id: str

    def __post_init__(self):
        object.__setattr__(
            self, "box", np.asarray(self.box, dtype=np.float64).reshape(7))
        if not (np.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise InputError(f"score must be finite in [0,1], "
                             f"got {self.score}")
        if self.label < 0:
            raise InputError("class id must be non-negative")


@dataclass(frozen=True)
class SceneGroundTruth:
    """Ground-truth boxes and labels of one scene."""

    scene_id: str
    boxes: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 7)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if boxes.shape[0] != labels.shape[0]:
            raise InputError("one label per ground-truth box required")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_sample(cls, sample) -> "SceneGroundTruth":
        return cls(scene_id=sample.scene_id, boxes=sample.boxes,
                   labels=sample.labels)


def sort_detections(dets) -> list:
    """Canonical ranking: score desc, then scene id asc, then insertion."""
    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].score, dets[i].scene_id, i))
    return [dets[i] for i in order]


def match_detections(dets, gt_boxes_by_scene: dict,
                     iou_thresh: float) -> np.ndarray:
    """TP/FP flags for one class of detections, already ranked.

    `gt_boxes_by_scene` maps scene id -> [G,7] boxes of the same class.
    Greedy in ranking order: a detection claims the highest-IoU box of
    its scene with IoU >= iou_thresh that no earlier detection claimed
    (ties toward the lower box index); each box is claimed at most once.
    """
    scores = [d.score for d in dets]
    if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
        raise InputError("detections must be sorted by descending score")
    claimed = {sid: np.zeros(np.atleast_2d(b).shape[0], dtype=bool)
               for sid, b in gt_boxes_by_scene.items()}
    flags = np.zeros(len(dets), dtype=bool)
    for i, det in enumerate(dets):
        boxes = gt_boxes_by_scene.get(det.scene_id)
        if boxes is None:
            continue
        boxes = np.atleast_2d(boxes)
        used = claimed[det.scene_id]
        best = -1
        best_iou = 0.0
        for g in range(boxes.shape[0]):
            if used[g]:
                continue
            iou = rotated_iou3d(det.box, boxes[g])
            if iou >= iou_thresh and iou > best_iou:
                best, best_iou = g, iou
        if best >= 0:
            used[best] = True
            flags[i] = True
    return flags


@dataclass(frozen=True)
class PRCurve:
    """Cumulative precision/recall over the ranking plus its AP."""

    recall: np.ndarray
    precision: np.ndarray
    ap: float
    defined: bool  # False when there was no ground truth to recall


def average_precision(flags, num_gts: int) -> PRCurve:
    """All-point-interpolated AP from ranked TP/FP flags."""
    flags = np.asarray(flags, dtype=bool).reshape(-1)
    if num_gts < 0:
        raise InputError("ground-truth count must be non-negative")
    if num_gts == 0:
        return PRCurve(np.zeros(0), np.zeros(0), 0.0, False)
    n = flags.size
    if n == 0:
        return PRCurve(np.zeros(0), np.zeros(0), 0.0, True)
    tp = np.cumsum(flags)
    recall = tp / float(num_gts)
    precision = tp / np.arange(1.0, n + 1.0)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    ap = float(np.sum((recall - prev) * envelope))
    return PRCurve(recall, precision, ap, True)


@dataclass(frozen=True)
class ThresholdReport:
    """Per-class AP and their unweighted mean at one IoU threshold."""

    iou_thresh: float
    ap_per_class: dict
    mean_ap: float


def map_at_iou(dets, gts, thresholds=(0.25, 0.5)) -> list[ThresholdReport]:
    """Evaluate detections against ground truth at each IoU threshold.

    `gts` is a list of SceneGroundTruth (one per scene).  Classes with
    no ground truth anywhere are left out of the mean entirely; their
    detections are ignored rather than punished.
    """
    by_scene = {}
    for g in gts:
        if g.scene_id in by_scene:
            raise InputError(f"duplicate scene id '{g.scene_id}'")
        by_scene[g.scene_id] = g
    classes = sorted({int(lab) for g in gts for lab in g.labels})
    reports = []
    for thr in thresholds:
        ap_per = {}
        for c in classes:
            class_dets = sort_detections([d for d in dets if d.label == c])
            boxes = {sid: g.boxes[g.labels == c]
                     for sid, g in by_scene.items()}
            num_gts = sum(b.shape[0] for b in boxes.values())
            flags = match_detections(class_dets, boxes, thr)
            ap_per[c] = average_precision(flags, num_gts).ap
        mean_ap = float(np.mean(list(ap_per.values()))) if ap_per else 0.0
        reports.append(ThresholdReport(float(thr), ap_per, mean_ap))
    return reports


# ---------------------------------------------------------------------------
# detection files
# ---------------------------------------------------------------------------

def save_detections(path, scene_id: str, boxes, labels, scores,
                    config: dict | None = None) -> None:
    """Write one scene's detections as a JSON document.

    `config` optionally embeds the run configuration that produced the
    detections; readers treat it as provenance and ignore its contents.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not (boxes.shape[0] == labels.shape[0] == scores.shape[0]):
        raise InputError("boxes, labels and scores must align")
    rows = []
    for b, lab, sc in zip(boxes, labels, scores):
        rows.append([float(v) for v in b] + [int(lab), float(sc)])
    doc = {
        "format": DETECTIONS_FORMAT,
        "version": DETECTIONS_VERSION,
        "scene_id": str(scene_id),
        "detections": rows,
    }
    if config is not None:
        doc["config"] = config
    _dump_json(Path(path), doc)


def load_detections(path) -> list[Detection]:
    """Read one scene's detections back as Detection objects."""
    path = Path(path)
    doc = _load_json_object(path)
    _check_keys(doc, path, ("format", "version", "scene_id", "detections"),
                optional=("config",))
    if doc["format"] != DETECTIONS_FORMAT:
        raise ParseError(path, "key 'format'",
                         f"expected '{DETECTIONS_FORMAT}'")
    if doc["version"] != DETECTIONS_VERSION:
        raise ParseError(path, "key 'version'",
                         f"unsupported version {doc['version']!r}")
    if not isinstance(doc["scene_id"], str):
        raise ParseError(path, "key 'scene_id'", "expected a string")
    rows = doc["detections"]
    if not isinstance(rows, list):
        raise ParseError(path, "key 'detections'", "expected a list")
    out = []
    for i, row in enumerate(rows):
        where = f"detections[{i}]"
        if not isinstance(row, list) or len(row) != 9:
            raise ParseError(path, where, "expected a 9-tuple "
                             "[x, y, z, w, l, h, theta, class, score]")
        if not all(_is_real(x) for x in row[:7]) or not _is_real(row[8]):
            raise ParseError(path, where, "reals required")
        if not _is_int(row[7]) or row[7] < 0:
            raise ParseError(path, where,
                             "class must be a non-negative integer")
        box = np.array([float(x) for x in row[:7]])
        score = float(row[8])
        if not np.isfinite(box).all() or not np.isfinite(score):
            raise ParseError(path, where, "non-finite value")
        if not 0.0 <= score <= 1.0:
            raise ParseError(path, where, "score must lie in [0,1]")
        out.append(Detection(box=box, label=int(row[7]), score=score,
                             scene_id=doc["scene_id"]))
    return out
