"""Synthetic indoor scenes, their on-disk archive format, and splits.

A scene is a small rectangular room: a handful of yaw-rotated boxes rest
on the floor, each box contributes a patch of class-colored surface
points, the remaining points are neutral-gray clutter on the floor and
walls, and a pinhole camera sits on one wall looking at the boxes.
Everything is a deterministic function of (seed, SceneSpec).

Archive layout (one directory per scene, all text, LF line endings):

    points.txt    one point per line: x y z r g b  (space separated)
    camera.json   pinhole model: K (row-major 9), R (row-major 9), t, W0, H0
    boxes.json    {"boxes": [[x, y, z, w, l, h, theta, class], ...]}
    meta.json     {"format": "scene-archive", "version": 1, ...}

Reals are serialized as their shortest round-trippable decimal form
(``repr`` / JSON float formatting), so write -> read -> write reproduces
every byte.
"""

from __future__ import annotations

import colorsys
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError, InputError, ParseError
from .geometry import CameraModel, rotated_iou3d

ARCHIVE_FORMAT = "scene-archive"
ARCHIVE_VERSION = 1
POINTS_FILE = "points.txt"
CAMERA_FILE = "camera.json"
BOXES_FILE = "boxes.json"
META_FILE = "meta.json"

# boxes are re-drawn until every pair overlaps less than this
MAX_PAIR_IOU = 0.05

# surface samples are pulled toward the box center by this factor so a
# containment test never sits exactly on a face
_SURFACE_TUCK = 0.995


@dataclass(frozen=True)
class SceneSpec:
    """Generator knobs; the defaults make a 6 x 6 x 3 m room."""

    room: tuple[float, float, float] = (6.0, 6.0, 3.0)
    num_classes: int = 5
    num_points: int = 2048
    min_boxes: int = 3
    max_boxes: int = 6
    box_xy: tuple[float, float] = (0.5, 1.3)       # footprint side range, m
    box_height: tuple[float, float] = (0.5, 1.1)
    surface_points_per_box: int = 160
    wall_margin: float = 0.4
    image_size: int = 64
    color_jitter: float = 0.05
    max_attempts: int = 1000

    def __post_init__(self):
        if len(self.room) != 3 or min(self.room) <= 0:
            raise InputError("room must be three positive extents")
        if self.num_classes < 1:
            raise InputError("need at least one class")
        if self.num_points < 1:
            raise InputError("need at least one point")
        if not 1 <= self.min_boxes <= self.max_boxes:
            raise InputError("box count range needs 1 <= min <= max")
        if not 0 < self.box_xy[0] <= self.box_xy[1]:
            raise InputError("box footprint range must be positive and sorted")
        if not 0 < self.box_height[0] <= self.box_height[1]:
            raise InputError("box height range must be positive and sorted")
        if self.surface_points_per_box < 20:
            raise InputError("need at least 20 surface points per box")
        if self.wall_margin < 0:
            raise InputError("wall margin must be non-negative")
        if self.image_size <= 0 or self.image_size % 32 != 0:
            raise InputError("image size must be a positive multiple of 32 "
                             "(the pyramid pools by powers of two)")
        if self.color_jitter < 0:
            raise InputError("color jitter must be non-negative")
        if self.max_attempts < 1:
            raise InputError("max_attempts must be positive")


@dataclass
class SceneSample:
    """One scene in memory: points [N,6] (xyz rgb), camera, boxes [G,7]."""

    points: np.ndarray
    cam: CameraModel
    boxes: np.ndarray
    labels: np.ndarray
    scene_id: str
    seed: int

    @property
    def positions(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def colors(self) -> np.ndarray:
        return self.points[:, 3:]


def class_palette(num_classes: int) -> np.ndarray:
    """[K,3] rgb colors on an evenly spaced hue wheel.

    Class identity is carried by color, so the image modality holds
    information the bare geometry does not.
    """
    if num_classes < 1:
        raise InputError("need at least one class")
    cols = [colorsys.hsv_to_rgb(k / num_classes, 0.75, 0.9)
            for k in range(num_classes)]
    return np.array(cols, dtype=np.float64)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _sample_box_surface(rng: np.random.Generator, box: np.ndarray,
                        n: int) -> np.ndarray:
    """n points on the faces of one box, area-weighted over the faces."""
    w, l, h = box[3], box[4], box[5]
    areas = np.array([l * h, l * h, w * h, w * h, w * l, w * l])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    a = rng.uniform(-0.5, 0.5, size=n)
    b = rng.uniform(-0.5, 0.5, size=n)
    half = np.array([w, l, h]) / 2.0
    local = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for ax in range(3):
        m = axis == ax
        o1, o2 = [i for i in range(3) if i != ax]
        local[m, ax] = sign[m] * half[ax]
        local[m, o1] = a[m] * 2.0 * half[o1]
        local[m, o2] = b[m] * 2.0 * half[o2]
    local *= _SURFACE_TUCK
    c, s = math.cos(box[6]), math.sin(box[6])
    rot = np.array([[c, -s], [s, c]])
    out = np.empty_like(local)
    out[:, :2] = local[:, :2] @ rot.T + box[:2]
    out[:, 2] = local[:, 2] + box[2]
    return out


def _sample_clutter(rng: np.random.Generator, room, n: int):
    """Uniform gray points over the floor and the four walls."""
    rx, ry, rz = room
    hx, hy = rx / 2.0, ry / 2.0
    areas = np.array([rx * ry, rx * rz, rx * rz, ry * rz, ry * rz])
    surf = rng.choice(5, size=n, p=areas / areas.sum())
    a = rng.uniform(0.0, 1.0, size=n)
    b = rng.uniform(0.0, 1.0, size=n)
    pts = np.empty((n, 3))
    for which in range(5):
        m = surf == which
        k = int(m.sum())
        if which == 0:
            block = np.column_stack([a[m] * rx - hx, b[m] * ry - hy,
                                     np.zeros(k)])
        elif which == 1:
            block = np.column_stack([a[m] * rx - hx, np.full(k, -hy),
                                     b[m] * rz])
        elif which == 2:
            block = np.column_stack([a[m] * rx - hx, np.full(k, hy),
                                     b[m] * rz])
        elif which == 3:
            block = np.column_stack([np.full(k, -hx), a[m] * ry - hy,
                                     b[m] * rz])
        else:
            block = np.column_stack([np.full(k, hx), a[m] * ry - hy,
                                     b[m] * rz])
        pts[m] = block
    colors = 0.5 + rng.uniform(-0.15, 0.15, size=(n, 3))
    return pts, colors


def _place_camera(rng: np.random.Generator, spec: SceneSpec,
                  target: np.ndarray) -> CameraModel:
    """Camera on a random wall, at eye-ish height, facing the target."""
    rx, ry, rz = spec.room
    hx, hy = rx / 2.0, ry / 2.0
    wall = int(rng.integers(4))
    along = rng.uniform(-0.25, 0.25)
    height = rng.uniform(0.45, 0.75) * rz
    if wall == 0:
        eye = np.array([-hx, along * ry, height])
    elif wall == 1:
        eye = np.array([hx, along * ry, height])
    elif wall == 2:
        eye = np.array([along * rx, -hy, height])
    else:
        eye = np.array([along * rx, hy, height])
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    size = spec.image_size
    f = size / 2.0
    K = np.array([[f, 0.0, size / 2.0],
                  [0.0, f, size / 2.0],
                  [0.0, 0.0, 1.0]])
    return CameraModel(K=K, R=R, t=-R @ eye, width=size, height=size)


def generate_scene(seed: int, spec: SceneSpec = SceneSpec(), *,
                   scene_id: str | None = None) -> SceneSample:
    """Deterministically generate one scene from (seed, spec).

    Boxes are rejection-sampled until every pair overlaps less than
    MAX_PAIR_IOU and every box (including its yawed corners) stays
    wall_margin away from the walls; after max_attempts rejections the
    spec is declared infeasible.
    """
    rng = np.random.default_rng(seed)
    n_boxes = int(rng.integers(spec.min_boxes, spec.max_boxes + 1))
    n_surface = n_boxes * spec.surface_points_per_box
    if n_surface > spec.num_points:
        raise GenerationError(
            f"{n_boxes} boxes x {spec.surface_points_per_box} surface points "
            f"exceed the {spec.num_points}-point budget")

    rx, ry, rz = spec.room
    boxes: list[np.ndarray] = []
    rejections = 0
    while len(boxes) < n_boxes:
        if rejections >= spec.max_attempts:
            raise GenerationError(
                f"gave up after {rejections} rejected placements; "
                "the room cannot hold the requested boxes")
        w, l = rng.uniform(spec.box_xy[0], spec.box_xy[1], size=2)
        h = rng.uniform(spec.box_height[0], spec.box_height[1])
        theta = rng.uniform(-math.pi, math.pi)
        reach = math.hypot(w, l) / 2.0
        lo_x = -rx / 2.0 + spec.wall_margin + reach
        lo_y = -ry / 2.0 + spec.wall_margin + reach
        if lo_x >= -lo_x or lo_y >= -lo_y or h >= rz:
            rejections += 1
            continue
        cx = rng.uniform(lo_x, -lo_x)
        cy = rng.uniform(lo_y, -lo_y)
        cand = np.array([cx, cy, h / 2.0, w, l, h, theta])
        if any(rotated_iou3d(cand, b) >= MAX_PAIR_IOU for b in boxes):
            rejections += 1
            continue
        boxes.append(cand)
    gts = np.vstack(boxes)
    labels = rng.integers(0, spec.num_classes, size=n_boxes)

    palette = class_palette(spec.num_classes)
    jit = spec.color_jitter
    xyz_chunks = []
    rgb_chunks = []
    for g in range(n_boxes):
        pts = _sample_box_surface(rng, gts[g], spec.surface_points_per_box)
        col = palette[labels[g]] + rng.uniform(
            -jit, jit, size=(spec.surface_points_per_box, 3))
        xyz_chunks.append(pts)
        rgb_chunks.append(np.clip(col, 0.0, 1.0))
    n_clutter = spec.num_points - n_surface
    cl_pts, cl_col = _sample_clutter(rng, spec.room, n_clutter)
    xyz_chunks.append(cl_pts)
    rgb_chunks.append(cl_col)
    points = np.hstack([np.vstack(xyz_chunks), np.vstack(rgb_chunks)])

    cam = _place_camera(rng, spec, gts[:, :3].mean(axis=0))
    if scene_id is None:
        scene_id = f"scene-{seed}"
    return SceneSample(points=points, cam=cam, boxes=gts,
                       labels=labels.astype(np.int64),
                       scene_id=scene_id, seed=int(seed))


# ---------------------------------------------------------------------------
# archive I/O
# ---------------------------------------------------------------------------

def _dump_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def save_scene(sample: SceneSample, directory) -> Path:
    """Write one SceneSample to `directory` (created if needed)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pts = np.asarray(sample.points, dtype=np.float64)
    with open(d / POINTS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for row in pts:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    cam = sample.cam
    _dump_json(d / CAMERA_FILE, {
        "K": [float(v) for v in cam.K.ravel()],
        "R": [float(v) for v in cam.R.ravel()],
        "t": [float(v) for v in cam.t],
        "W0": int(cam.width),
        "H0": int(cam.height),
    })
    rows = []
    for box, lab in zip(np.atleast_2d(sample.boxes), sample.labels):
        rows.append([float(v) for v in box[:7]] + [int(lab)])
    _dump_json(d / BOXES_FILE, {"boxes": rows})
    _dump_json(d / META_FILE, {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "scene_id": str(sample.scene_id),
        "seed": int(sample.seed),
    })
    return d


def _is_real(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _load_json_object(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ParseError(path, "file", "missing")
    except json.JSONDecodeError as e:
        raise ParseError(path, f"line {e.lineno}", e.msg)
    if not isinstance(doc, dict):
        raise ParseError(path, "document", "expected a JSON object")
    return doc


def _check_keys(doc: dict, path: Path, required: tuple,
                optional: tuple = ()) -> None:
    for k in required:
        if k not in doc:
            raise ParseError(path, f"key '{k}'", "missing")
    for k in doc:
        if k not in required and k not in optional:
            warnings.warn(f"{path}: ignoring unknown key '{k}'")


def _real_list(doc: dict, path: Path, key: str, n: int) -> np.ndarray:
    v = doc[key]
    if (not isinstance(v, list) or len(v) != n
            or not all(_is_real(x) for x in v)):
        raise ParseError(path, f"key '{key}'", f"expected {n} reals")
    arr = np.array([float(x) for x in v])
    if not np.isfinite(arr).all():
        raise ParseError(path, f"key '{key}'", "non-finite value")
    return arr


def _int_value(doc: dict, path: Path, key: str, minimum: int) -> int:
    v = doc[key]
    if not _is_int(v) or v < minimum:
        raise ParseError(path, f"key '{key}'", f"expected an integer "
                         f">= {minimum}")
    return int(v)


def _read_points(path: Path) -> np.ndarray:
    rows = []
    lines = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(path, "file", "missing")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            toks = line.split()
            if not toks:
                continue
            if len(toks) != 6:
                raise ParseError(path, f"line {lineno}",
                                 f"expected 6 values, got {len(toks)}")
            try:
                rows.append([float(t) for t in toks])
            except ValueError:
                raise ParseError(path, f"line {lineno}", "not a number")
            lines.append(lineno)
    pts = np.array(rows, dtype=np.float64).reshape(-1, 6)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        bad = lines[int(np.flatnonzero(~finite)[0])]
        raise ParseError(path, f"line {bad}", "non-finite value")
    return pts


def _read_camera(path: Path) -> CameraModel:
    doc = _load_json_object(path)
    _check_keys(doc, path, ("K", "R", "t", "W0", "H0"))
    K = _real_list(doc, path, "K", 9).reshape(3, 3)
    R = _real_list(doc, path, "R", 9).reshape(3, 3)
    t = _real_list(doc, path, "t", 3)
    w0 = _int_value(doc, path, "W0", 1)
    h0 = _int_value(doc, path, "H0", 1)
    try:
        return CameraModel(K=K, R=R, t=t, width=w0, height=h0)
    except ValueError as e:
        raise ParseError(path, "camera", str(e))


def _read_boxes(path: Path):
    doc = _load_json_object(path)
    _check_keys(doc, path, ("boxes",))
    v = doc["boxes"]
    if not isinstance(v, list):
        raise ParseError(path, "key 'boxes'", "expected a list")
    boxes = np.zeros((len(v), 7))
    labels = np.zeros(len(v), dtype=np.int64)
    for i, row in enumerate(v):
        where = f"boxes[{i}]"
        if not isinstance(row, list) or len(row) != 8:
            raise ParseError(path, where, "expected an 8-tuple "
                             "[x, y, z, w, l, h, theta, class]")
        if not all(_is_real(x) for x in row[:7]):
            raise ParseError(path, where, "first 7 entries must be reals")
        if not _is_int(row[7]) or row[7] < 0:
            raise ParseError(path, where,
                             "class must be a non-negative integer")
        b = np.array([float(x) for x in row[:7]])
        if not np.isfinite(b).all():
            raise ParseError(path, where, "non-finite value")
        if b[3:6].min() <= 0:
            raise ParseError(path, where, "box sizes must be positive")
        boxes[i] = b
        labels[i] = row[7]
    return boxes, labels


def _read_meta(path: Path) -> dict:
    doc = _load_json_object(path)
    _check_keys(doc, path, ("format", "version", "scene_id", "seed"))
    if doc["format"] != ARCHIVE_FORMAT:
        raise ParseError(path, "key 'format'",
                         f"expected '{ARCHIVE_FORMAT}'")
    if doc["version"] != ARCHIVE_VERSION:
        raise ParseError(path, "key 'version'",
                         f"unsupported version {doc['version']!r}")
    if not isinstance(doc["scene_id"], str):
        raise ParseError(path, "key 'scene_id'", "expected a string")
    seed = _int_value(doc, path, "seed", -(2 ** 63))
    return {"scene_id": doc["scene_id"], "seed": seed}


def load_scene(directory) -> SceneSample:
    """Read one SceneSample back from a scene directory."""
    d = Path(directory)
    points = _read_points(d / POINTS_FILE)
    cam = _read_camera(d / CAMERA_FILE)
    boxes, labels = _read_boxes(d / BOXES_FILE)
    meta = _read_meta(d / META_FILE)
    return SceneSample(points=points, cam=cam, boxes=boxes, labels=labels,
                       scene_id=meta["scene_id"], seed=meta["seed"])


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

MANIFEST_FILE = "manifest.json"
DATASET_FORMAT = "scene-dataset"


def save_dataset(directory, samples: list, train_ids, val_ids,
                 extra_meta: dict | None = None) -> Path:
    """Write scenes under `directory`/scenes plus a split manifest."""
    d = Path(directory)
    (d / "scenes").mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        save_scene(s, d / "scenes" / s.scene_id)
        ids.append(s.scene_id)
    if len(ids) != len(set(ids)):
        raise InputError("scene ids must be unique")
    if set(train_ids) | set(val_ids) != set(ids) or \
            set(train_ids) & set(val_ids):
        raise InputError("train/val must partition the scene ids")
    doc = {
        "format": DATASET_FORMAT,
        "version": ARCHIVE_VERSION,
        "scene_ids": ids,
        "train": list(train_ids),
        "val": list(val_ids),
    }
    if extra_meta:
        overlap = set(extra_meta) & set(doc)
        if overlap:
            raise InputError(f"extra_meta may not override {sorted(overlap)}")
        doc.update(extra_meta)
    _dump_json(d / MANIFEST_FILE, doc)
    return d


def load_dataset(directory):
    """Read a dataset directory -> ({scene id: SceneSample}, manifest)."""
    d = Path(directory)
    path = d / MANIFEST_FILE
    doc = _load_json_object(path)
    for key in ("format", "version", "scene_ids", "train", "val"):
        if key not in doc:
            raise ParseError(path, f"key '{key}'", "missing")
    if doc["format"] != DATASET_FORMAT:
        raise ParseError(path, "key 'format'", f"expected '{DATASET_FORMAT}'")
    if doc["version"] != ARCHIVE_VERSION:
        raise ParseError(path, "key 'version'",
                         f"unsupported version {doc['version']!r}")
    ids = doc["scene_ids"]
    if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
        raise ParseError(path, "key 'scene_ids'", "expected a string list")
    if set(doc["train"]) | set(doc["val"]) != set(ids) or \
            set(doc["train"]) & set(doc["val"]):
        raise ParseError(path, "key 'train'",
                         "train/val do not partition scene_ids")
    samples = {sid: load_scene(d / "scenes" / sid) for sid in ids}
    return samples, doc


# ---------------------------------------------------------------------------
# dataset splits
# ---------------------------------------------------------------------------

def split_dataset(scene_ids, train_fraction: float, seed: int):
    """Deterministic disjoint train/val split of `scene_ids` by seed.

    Both sides keep the original listing order; the split itself comes
    from a seeded shuffle.  Each side always gets at least one scene.
    """
    ids = list(scene_ids)
    if len(ids) < 2:
        raise InputError("need at least 2 scenes to split")
    if not 0.0 < train_fraction < 1.0:
        raise InputError("train fraction must lie strictly in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ids))
    k = int(round(train_fraction * len(ids)))
    k = min(max(k, 1), len(ids) - 1)
    train = sorted(int(i) for i in perm[:k])
    val = sorted(int(i) for i in perm[k:])
    return [ids[i] for i in train], [ids[i] for i in val]
