"""Oriented 3D boxes, camera projection, and box-regression geometry.

Boxes are 7-DoF: center (x, y, z), extents (w, l, h), yaw about +z,
stored either as `OrientedBox3D` records or as rows [x,y,z,w,l,h,yaw]
of a float64 array — the batch math works on arrays.

Three distinct IoU routes live here on purpose and must stay separate:
  * `rotated_iou3d` — exact BEV polygon clipping x vertical overlap,
    used by evaluation, NMS, and target assignment;
  * `iou_surrogate_loss_*` — a smooth DIoU-style surrogate used only
    as the regression training loss (it inflates the predicted
    footprint to its axis-aligned hull in the target frame, so it is
    not the exact IoU, but it is exactly differentiable a.e. and its
    gradient is verified by finite differences);
  * the tests hold a third, Monte-Carlo containment oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ops import sigmoid, softplus

YAW_DENOM_EPS = 1e-12


def normalize_yaw(theta):
    """Wrap angle(s) to [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class OrientedBox3D:
    """7-DoF oriented box: center, extents (w,l,h), yaw about +z."""

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if not (self.size > 0).all():
            raise ValueError(f"box extents must be positive, got {self.size}")
        self.yaw = float(normalize_yaw(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.center, self.size, [self.yaw]])

    @classmethod
    def from_array(cls, arr) -> "OrientedBox3D":
        arr = np.asarray(arr, dtype=np.float64).reshape(7)
        return cls(center=arr[:3], size=arr[3:6], yaw=float(arr[6]))

    def volume(self) -> float:
        return float(self.size.prod())


@dataclass
class CameraModel:
    """Pinhole camera: intrinsics K, world-to-camera rotation R and
    translation t (x_cam = R x_world + t), image size (width, height)."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.K[2, 2] != 1.0:
            raise ValueError("K[2,2] must be 1")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-9:
            raise ValueError("R must be orthonormal")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def project_homogeneous(self, P4: np.ndarray):
        """Project homogeneous world points [n,4]; scale-invariant in P4.

        Returns (uv [n,2] normalized by (width, height), valid [n]).
        """
        P4 = np.asarray(P4, dtype=np.float64).reshape(-1, 4)
        x_cam = P4[:, :3] @ self.R.T + np.outer(P4[:, 3], self.t)
        hom = x_cam @ self.K.T
        w = hom[:, 2]
        valid = w > 1e-6
        w_safe = np.where(valid, w, 1.0)
        u = hom[:, 0] / w_safe / self.width
        v = hom[:, 1] / w_safe / self.height
        uv = np.stack([u, v], axis=1)
        valid &= (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
        uv[~valid] = -1.0
        return uv, valid

    def project_points(self, P: np.ndarray):
        """World points [n,3] -> (normalized uv in [0,1]^2, valid mask)."""
        P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
        ones = np.ones((P.shape[0], 1))
        return self.project_homogeneous(np.hstack([P, ones]))

    def project_pixels(self, P: np.ndarray):
        """World points [n,3] -> (pixel coords [n,2], camera depth [n],
        in-front mask [n]). Used by the rasterizer; no border clipping."""
        P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
        x_cam = P @ self.R.T + self.t
        hom = x_cam @ self.K.T
        z = hom[:, 2]
        in_front = z > 1e-6
        z_safe = np.where(in_front, z, 1.0)
        px = np.stack([hom[:, 0] / z_safe, hom[:, 1] / z_safe], axis=1)
        return px, z, in_front


def project_point(cam: CameraModel, P) -> tuple[np.ndarray, bool]:
    """Single-point convenience wrapper around CameraModel.project_points."""
    uv, valid = cam.project_points(np.asarray(P, dtype=np.float64)[None, :])
    return uv[0], bool(valid[0])


# ---------------------------------------------------------------------------
# face-distance (delta) encoding
# ---------------------------------------------------------------------------
# The six deltas are signed distances from a proposal point to the box
# faces, measured in the box's yaw-aligned frame: (d1,d2) along box x,
# (d3,d4) along box y, (d5,d6) along box z, with the odd index toward
# the positive face. All positive iff the point is strictly inside.


def encode_deltas(boxes: np.ndarray, proposals: np.ndarray) -> np.ndarray:
    """boxes [n,7], proposals [n,3] -> deltas [n,6]."""
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    proposals = np.atleast_2d(np.asarray(proposals, dtype=np.float64))
    rel = proposals - boxes[:, :3]
    c, s = np.cos(boxes[:, 6]), np.sin(boxes[:, 6])
    qx = c * rel[:, 0] + s * rel[:, 1]
    qy = -s * rel[:, 0] + c * rel[:, 1]
    qz = rel[:, 2]
    half = boxes[:, 3:6] / 2.0
    return np.stack([
        half[:, 0] - qx, half[:, 0] + qx,
        half[:, 1] - qy, half[:, 1] + qy,
        half[:, 2] - qz, half[:, 2] + qz,
    ], axis=1)


def apply_center_update(proposals: np.ndarray, deltas: np.ndarray,
                        yaws: np.ndarray) -> np.ndarray:
    """Move proposals [n,3] by the box-frame offset implied by deltas.

    The offset ((d1-d2)/2, (d3-d4)/2, (d5-d6)/2) lives in the yaw-aligned
    frame and is rotated back by `yaws` before being added; with exact
    deltas from `encode_deltas` this lands on the box center exactly.
    """
    proposals = np.atleast_2d(np.asarray(proposals, dtype=np.float64))
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    yaws = np.atleast_1d(np.asarray(yaws, dtype=np.float64))
    ox = (deltas[:, 0] - deltas[:, 1]) / 2.0
    oy = (deltas[:, 2] - deltas[:, 3]) / 2.0
    oz = (deltas[:, 4] - deltas[:, 5]) / 2.0
    c, s = np.cos(yaws), np.sin(yaws)
    return proposals + np.stack([c * ox - s * oy, s * ox + c * oy, oz], axis=1)


def centerness_target(deltas: np.ndarray) -> np.ndarray:
    """Per-row centerness in [0,1]: product over the three axis pairs of
    min/max; 0 for points outside the box (any negative delta)."""
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    inside = (deltas >= 0).all(axis=1)
    out = np.ones(deltas.shape[0])
    for i in range(3):
        lo = np.minimum(deltas[:, 2 * i], deltas[:, 2 * i + 1])
        hi = np.maximum(deltas[:, 2 * i], deltas[:, 2 * i + 1])
        safe = hi > 0
        out *= np.where(safe, lo / np.where(safe, hi, 1.0), 0.0)
    return np.where(inside, out, 0.0)


def decode_boxes(anchors: np.ndarray, raw: np.ndarray,
                 yaw_raw: np.ndarray) -> np.ndarray:
    """Head outputs -> boxes [n,7].

    raw [n,6] passes through softplus to become positive face distances;
    yaw_raw [n,2] is an unnormalized (sin, cos) pair decoded by atan2.
    The center is the anchor moved by the decoded face-distance offset
    (same algebra as apply_center_update); extents are the pair sums.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    d = softplus(np.atleast_2d(np.asarray(raw, dtype=np.float64)))
    yaw_raw = np.atleast_2d(np.asarray(yaw_raw, dtype=np.float64))
    yaw = np.arctan2(yaw_raw[:, 0], yaw_raw[:, 1])
    centers = apply_center_update(anchors, d, yaw)
    ext = d[:, 0::2] + d[:, 1::2]
    return np.column_stack([centers, ext, yaw])


# ---------------------------------------------------------------------------
# exact rotated IoU (BEV polygon clipping x vertical overlap)
# ---------------------------------------------------------------------------

_CLIP_EPS = 1e-12


def bev_corners(box: np.ndarray) -> np.ndarray:
    """Footprint corners [4,2] in counterclockwise order."""
    cx, cy = box[0], box[1]
    hw, hl = box[3] / 2.0, box[4] / 2.0
    c, s = math.cos(box[6]), math.sin(box[6])
    local = np.array([[hw, hl], [-hw, hl], [-hw, -hl], [hw, -hl]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def _clip_by_edge(poly: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sutherland–Hodgman step: keep the part of poly left of edge a->b."""
    d = b - a
    if len(poly) == 0:
        return poly
    side = d[0] * (poly[:, 1] - a[1]) - d[1] * (poly[:, 0] - a[0])
    keep = side >= -_CLIP_EPS
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        if keep[i]:
            out.append(poly[i])
        if keep[i] != keep[j]:
            t = side[i] / (side[i] - side[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out) if out else np.zeros((0, 2))


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def rotated_iou3d(a, b) -> float:
    """Exact IoU of two oriented boxes (arrays [7] or OrientedBox3D)."""
    if isinstance(a, OrientedBox3D):
        a = a.as_array()
    if isinstance(b, OrientedBox3D):
        b = b.as_array()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    za = (a[2] - a[5] / 2.0, a[2] + a[5] / 2.0)
    zb = (b[2] - b[5] / 2.0, b[2] + b[5] / 2.0)
    dz = min(za[1], zb[1]) - max(za[0], zb[0])
    if dz <= 0.0:
        return 0.0
    poly = bev_corners(a)
    clip = bev_corners(b)
    for i in range(4):
        poly = _clip_by_edge(poly, clip[i], clip[(i + 1) % 4])
        if len(poly) < 3:
            return 0.0
    area = _polygon_area(poly)
    inter = area * dz
    if inter < 1e-12:
        return 0.0
    union = float(a[3:6].prod() + b[3:6].prod()) - inter
    if union <= 1e-12:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise exact rotated IoU, [n,m]."""
    boxes_a = np.atleast_2d(boxes_a)
    boxes_b = np.atleast_2d(boxes_b)
    out = np.zeros((boxes_a.shape[0], boxes_b.shape[0]))
    for i in range(boxes_a.shape[0]):
        for j in range(boxes_b.shape[0]):
            out[i, j] = rotated_iou3d(boxes_a[i], boxes_b[j])
    return out


def contains_points(box: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Inclusive containment mask of pts [n,3] in one box [7]."""
    box = np.asarray(box, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    rel = pts - box[:3]
    c, s = math.cos(box[6]), math.sin(box[6])
    qx = c * rel[:, 0] + s * rel[:, 1]
    qy = -s * rel[:, 0] + c * rel[:, 1]
    half = box[3:6] / 2.0
    return ((np.abs(qx) <= half[0]) & (np.abs(qy) <= half[1])
            & (np.abs(rel[:, 2]) <= half[2]))


# ---------------------------------------------------------------------------
# smooth IoU surrogate for the regression loss
# ---------------------------------------------------------------------------

def iou_surrogate_loss_forward(anchors: np.ndarray, raw: np.ndarray,
                               yaw_raw: np.ndarray, gt: np.ndarray):
    """Mean over rows of (1 - surrogate), a DIoU-style smooth bound.

    surrogate = overlap - center_penalty - yaw_penalty.  The prediction
    is decoded from (anchors, raw, yaw_raw) as in decode_boxes.  The
    overlap term intersects the boxes as if the prediction shared the
    target's yaw -- axis-aligned in the target's yaw frame, with the
    predicted angle passed straight through instead of deforming the
    geometry -- so inter <= min(vol_pred, vol_gt) by construction and
    overlap stays in [0, 1].  center_penalty is the squared center
    distance over the squared diagonal of the enclosing axis-aligned
    box in that frame.  yaw_penalty is the squared chord between the
    normalized predicted (sin, cos) pair and the target's, scaled to
    [0, 1]; it is what trains the yaw head.  Per-row loss lies in
    [0, 3].  Smooth except on the measure-zero min/max switch sets and
    the yaw_raw origin; the backward is the exact a.e. derivative with
    no detached factors.

    Returns (loss: float, surrogate per row [n], cache).
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    yaw_raw = np.atleast_2d(np.asarray(yaw_raw, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    n = raw.shape[0]

    d = softplus(raw)
    sy, cy = yaw_raw[:, 0], yaw_raw[:, 1]
    theta = np.arctan2(sy, cy)
    ol = 0.5 * (d[:, 0::2] - d[:, 1::2])
    ext = d[:, 0::2] + d[:, 1::2]
    ct, st = np.cos(theta), np.sin(theta)
    cxp = anchors[:, 0] + ct * ol[:, 0] - st * ol[:, 1]
    cyp = anchors[:, 1] + st * ol[:, 0] + ct * ol[:, 1]
    czp = anchors[:, 2] + ol[:, 2]

    gc, ge, gth = gt[:, :3], gt[:, 3:6], gt[:, 6]
    cg, sg = np.cos(gth), np.sin(gth)
    dxw, dyw, dzw = cxp - gc[:, 0], cyp - gc[:, 1], czp - gc[:, 2]
    u = cg * dxw + sg * dyw
    v = -sg * dxw + cg * dyw
    w = dzw

    hx, hy, hz = 0.5 * ext[:, 0], 0.5 * ext[:, 1], 0.5 * ext[:, 2]
    gx, gy, gz = ge[:, 0] / 2.0, ge[:, 1] / 2.0, ge[:, 2] / 2.0

    # axis-aligned overlap in the target frame
    hi_x, lo_x = np.minimum(u + hx, gx), np.maximum(u - hx, -gx)
    hi_y, lo_y = np.minimum(v + hy, gy), np.maximum(v - hy, -gy)
    hi_z, lo_z = np.minimum(w + hz, gz), np.maximum(w - hz, -gz)
    ox = np.maximum(hi_x - lo_x, 0.0)
    oy = np.maximum(hi_y - lo_y, 0.0)
    oz = np.maximum(hi_z - lo_z, 0.0)
    inter = ox * oy * oz
    volp = ext.prod(axis=1)
    volg = ge.prod(axis=1)
    union = volp + volg - inter
    overlap = inter / union

    # enclosing-box diagonal penalty
    He_x, Le_x = np.maximum(u + hx, gx), np.minimum(u - hx, -gx)
    He_y, Le_y = np.maximum(v + hy, gy), np.minimum(v - hy, -gy)
    He_z, Le_z = np.maximum(w + hz, gz), np.minimum(w - hz, -gz)
    X, Y, Z = He_x - Le_x, He_y - Le_y, He_z - Le_z
    c2 = X * X + Y * Y + Z * Z
    rho2 = u * u + v * v + w * w
    penalty = rho2 / c2

    # yaw alignment: squared chord between unit (sin, cos) pairs, in [0, 1]
    r = np.sqrt(np.maximum(sy * sy + cy * cy, YAW_DENOM_EPS))
    su, cu = sy / r, cy / r
    yawpen = 0.25 * ((su - sg) ** 2 + (cu - cg) ** 2)

    surrogate = overlap - penalty - yawpen
    loss = float(np.mean(1.0 - surrogate))
    cache = (anchors, raw, yaw_raw, d, sy, cy, theta, ol, ext, ct, st,
             cg, sg, u, v, w, hx, hy, hz,
             gx, gy, gz, hi_x, lo_x, hi_y, lo_y, hi_z, lo_z,
             ox, oy, oz, inter, volp, union, X, Y, Z, c2, rho2,
             r, su, cu, n)
    return loss, surrogate, cache


def _route_overlap(p, h, g, o, d_o, d_p, d_h):
    """Backward of o = max(min(p+h, g) - max(p-h, -g), 0) into (p, h)."""
    gate = o > 0.0
    d_hi = np.where(gate, d_o, 0.0)
    d_lo = np.where(gate, -d_o, 0.0)
    won_hi = (p + h) <= g     # prediction side won the min
    won_lo = (p - h) >= -g    # prediction side won the max
    d_p += np.where(won_hi, d_hi, 0.0) + np.where(won_lo, d_lo, 0.0)
    d_h += np.where(won_hi, d_hi, 0.0) - np.where(won_lo, d_lo, 0.0)
    return d_p, d_h


def _route_hull(p, h, g, d_span, d_p, d_h):
    """Backward of span = max(p+h, g) - min(p-h, -g) into (p, h)."""
    won_hi = (p + h) >= g
    won_lo = (p - h) <= -g
    d_p += np.where(won_hi, d_span, 0.0) - np.where(won_lo, d_span, 0.0)
    d_h += np.where(won_hi, d_span, 0.0) + np.where(won_lo, d_span, 0.0)
    return d_p, d_h


def iou_surrogate_loss_backward(cache):
    """Gradient of iou_surrogate_loss_forward's loss wrt (raw, yaw_raw)."""
    (anchors, raw, yaw_raw, d, sy, cyr, theta, ol, ext, ct, st,
     cg, sg, u, v, w, hx, hy, hz,
     gx, gy, gz, hi_x, lo_x, hi_y, lo_y, hi_z, lo_z,
     ox, oy, oz, inter, volp, union, X, Y, Z, c2, rho2,
     r, su, cu, n) = cache

    # loss = mean(1 - overlap + penalty + yawpen)
    d_overlap = np.full_like(u, -1.0 / n)
    d_pen = np.full_like(u, 1.0 / n)

    # overlap = inter/union with union = volp + volg - inter
    d_inter = d_overlap * (union + inter) / (union * union)
    d_volp = d_overlap * (-inter) / (union * union)

    # penalty = rho2/c2
    d_rho2 = d_pen / c2
    d_c2 = -d_pen * rho2 / (c2 * c2)

    d_u = d_rho2 * 2.0 * u
    d_v = d_rho2 * 2.0 * v
    d_w = d_rho2 * 2.0 * w
    d_hx = np.zeros_like(u)
    d_hy = np.zeros_like(u)
    d_hz = np.zeros_like(u)

    d_u, d_hx = _route_hull(u, hx, gx, d_c2 * 2.0 * X, d_u, d_hx)
    d_v, d_hy = _route_hull(v, hy, gy, d_c2 * 2.0 * Y, d_v, d_hy)
    d_w, d_hz = _route_hull(w, hz, gz, d_c2 * 2.0 * Z, d_w, d_hz)

    d_ox = d_inter * oy * oz
    d_oy = d_inter * ox * oz
    d_oz = d_inter * ox * oy
    d_u, d_hx = _route_overlap(u, hx, gx, ox, d_ox, d_u, d_hx)
    d_v, d_hy = _route_overlap(v, hy, gy, oy, d_oy, d_v, d_hy)
    d_w, d_hz = _route_overlap(w, hz, gz, oz, d_oz, d_w, d_hz)

    # volp = e0 e1 e2 ; (hx, hy, hz) = ext / 2
    d_ext = np.zeros_like(ext)
    d_ext[:, 0] = d_volp * ext[:, 1] * ext[:, 2] + 0.5 * d_hx
    d_ext[:, 1] = d_volp * ext[:, 0] * ext[:, 2] + 0.5 * d_hy
    d_ext[:, 2] = d_volp * ext[:, 0] * ext[:, 1] + 0.5 * d_hz

    # (u, v, w) = target-frame rotation of the world center offset
    d_dxw = cg * d_u - sg * d_v
    d_dyw = sg * d_u + cg * d_v
    d_dzw = d_w

    # world center = anchor + Rz(theta) @ local offset
    d_ol = np.zeros_like(ol)
    d_ol[:, 0] = ct * d_dxw + st * d_dyw
    d_ol[:, 1] = -st * d_dxw + ct * d_dyw
    d_ol[:, 2] = d_dzw
    d_theta = (-st * ol[:, 0] - ct * ol[:, 1]) * d_dxw
    d_theta += (ct * ol[:, 0] - st * ol[:, 1]) * d_dyw

    # theta = atan2(sy, cy)
    denom = np.maximum(sy * sy + cyr * cyr, YAW_DENOM_EPS)
    d_sy = d_theta * cyr / denom
    d_cy = -d_theta * sy / denom

    # yawpen = ((su - sg)^2 + (cu - cg)^2) / 4 with (su, cu) = (sy, cy)/r
    d_su = d_pen * 0.5 * (su - sg)
    d_cu = d_pen * 0.5 * (cu - cg)
    live = (sy * sy + cyr * cyr) > YAW_DENOM_EPS
    d_r = np.where(live, -(d_su * su + d_cu * cu), 0.0)
    d_sy += (d_su + d_r * su) / r
    d_cy += (d_cu + d_r * cu) / r
    d_yaw_raw = np.stack([d_sy, d_cy], axis=1)

    # ext_i = d_even + d_odd ; ol_i = (d_even - d_odd)/2
    d_d = np.zeros_like(d)
    d_d[:, 0::2] = d_ext + 0.5 * d_ol
    d_d[:, 1::2] = d_ext - 0.5 * d_ol

    d_raw = d_d * sigmoid(raw)
    return d_raw, d_yaw_raw


def surrogate_margins(anchors, raw, yaw_raw, gt):
    """Distance of a surrogate-loss problem from its non-smooth switch sets.

    Returns (min row norm of yaw_raw, min min/max tie margin over the
    clipped intervals).  The gradient-check harness rejects problems
    where either is small, because a +-h finite-difference sweep there
    can cross an atan2 / min / max switch and the central difference
    stops being a derivative estimate.
    """
    if np.atleast_2d(np.asarray(raw)).shape[0] == 0:
        return np.inf, np.inf
    _, _, cache = iou_surrogate_loss_forward(anchors, raw, yaw_raw, gt)
    (_anchors, _raw, _yaw, _d, sy, cyr, _theta, _ol, _ext, _ct, _st,
     _cg, _sg, u, v, w, hx, hy, hz,
     gx, gy, gz, hi_x, lo_x, hi_y, lo_y, hi_z, lo_z,
     _ox, _oy, _oz, _inter, _volp, _union, _X, _Y, _Z, _c2, _rho2,
     _r, _su, _cu, _n) = cache
    yaw_norm = float(np.hypot(sy, cyr).min())
    ties = []
    for p, h, g, hi, lo in ((u, hx, gx, hi_x, lo_x),
                            (v, hy, gy, hi_y, lo_y),
                            (w, hz, gz, hi_z, lo_z)):
        ties.append(np.abs(p + h - g))
        ties.append(np.abs(p - h + g))
        ties.append(np.abs(hi - lo))
    tie = float(np.min(np.concatenate(ties)))
    return yaw_norm, tie
