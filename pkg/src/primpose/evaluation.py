"""Pose and shape metrics: box IoU, symmetry-aware pose error, AP, Chamfer."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyList
from .io import atomic_write_text
from .geometry import Sim3Transform, as_points, rotation_angle_deg
from .shapes import SymmetrySpec

IOU_THRESHOLDS = (0.5, 0.75)
POSE_THRESHOLDS = ((5.0, 0.02), (5.0, 0.05), (10.0, 0.02), (10.0, 0.05))


@dataclass
class OrientedBox:
    """Box of size ``extents`` centered at ``center`` in the canonical frame, placed by ``pose``."""

    pose: Sim3Transform
    extents: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.extents = np.asarray(self.extents, dtype=np.float64).reshape(3)
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if np.any(self.extents <= 0):
            raise ValueError("box extents must be positive")

    @classmethod
    def from_bounds(cls, pose: Sim3Transform, lo, hi) -> "OrientedBox":
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        return cls(pose, hi - lo, 0.5 * (lo + hi))

    def corners(self) -> np.ndarray:
        signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], float)
        return self.pose.apply(self.center + 0.5 * signs * self.extents)

    def contains(self, X: np.ndarray) -> np.ndarray:
        u = self.pose.inverse().apply(X) - self.center
        return np.all(np.abs(u) <= 0.5 * self.extents, axis=1)


    @property
    def volume(self) -> float:
        return float(self.pose.s ** 3 * np.prod(self.extents))

    def grid(self, resolution: int) -> np.ndarray:
        """World positions of ``resolution**3`` cell centers filling the box."""
        g = (np.arange(resolution) + 0.5) / resolution - 0.5
        U = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        return self.pose.apply(self.center + U * self.extents)


def iou3d(a: OrientedBox, b: OrientedBox, resolution: int = 50) -> float:
    """Volume IoU with the intersection estimated on grids inside each box.

    Box volumes are exact. The intersection volume is the covered fraction of
    a ``resolution**3`` grid laid out in each box's own frame, averaged over
    the two boxes, which makes the estimate symmetric in its arguments.
    """
    va, vb = a.volume, b.volume
    inter = 0.5 * (va * np.mean(b.contains(a.grid(resolution))) + vb * np.mean(a.contains(b.grid(resolution))))
    if inter <= 0:
        return 0.0
    return float(inter / (va + vb - inter))


def rotation_error_deg(R_pred, R_gt, sym: SymmetrySpec | None = None) -> float:
    """Geodesic rotation error; for symmetric categories, modulo any rotation about the axis."""
    if sym is not None and sym.symmetric:
        a = np.asarray(sym.axis, dtype=np.float64)
        a = a / np.linalg.norm(a)
        u, v = np.asarray(R_pred) @ a, np.asarray(R_gt) @ a
        return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v))))
    return rotation_angle_deg(R_pred, R_gt)


def pose_error(pred: Sim3Transform, gt: Sim3Transform, sym: SymmetrySpec | None = None):
    """``(rotation error in degrees, translation error, scale ratio pred/gt)``."""
    rot = rotation_error_deg(pred.R, gt.R, sym)
    trans = float(np.linalg.norm(pred.t - gt.t))
    return rot, trans, pred.s / gt.s


def align_about_axis(R_pred, R_gt, sym: SymmetrySpec | None) -> np.ndarray:
    """``R_pred`` composed with the rotation about the symmetry axis that brings it closest to ``R_gt``.

    Returns ``R_pred`` unchanged for asymmetric categories.
    """
    R_pred = np.asarray(R_pred, dtype=np.float64)
    if sym is None or not sym.symmetric:
        return R_pred
    a = np.asarray(sym.axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    M = np.asarray(R_gt).T @ R_pred
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    # trace(M Rot(phi)) = cos(phi) (tr M - a'Ma) + sin(phi) tr(M K) + a'Ma
    phi = np.arctan2(np.trace(M @ K), np.trace(M) - a @ M @ a)
    c, s = np.cos(phi), np.sin(phi)
    Rot = c * np.eye(3) + s * K + (1 - c) * np.outer(a, a)
    return R_pred @ Rot


def average_precision(errors, rot_thresh: float, trans_thresh: float) -> float:
    """Fraction of ``(rot, trans)`` pairs within both thresholds."""
    E = np.asarray(errors, dtype=np.float64).reshape(-1, 2)
    if len(E) == 0:
        raise EmptyList("no errors to score")
    return float(np.mean((E[:, 0] <= rot_thresh) & (E[:, 1] <= trans_thresh)))


def iou_precision(ious, thresh: float) -> float:
    v = np.asarray(ious, dtype=np.float64).reshape(-1)
    if len(v) == 0:
        raise EmptyList("no IoU values to score")
    return float(np.mean(v >= thresh))


def _directed_sq(a: np.ndarray, b: np.ndarray) -> float:
    _, idx = cKDTree(b).query(a, k=1)
    diff = a - b[idx]
    return float(np.mean(np.einsum("nj,nj->n", diff, diff)))


def chamfer(a, b) -> float:
    """Symmetric squared Chamfer distance (sum of the two mean squared NN distances)."""
    A, B = as_points(a), as_points(b)
    if len(A) == 0 or len(B) == 0:
        raise EmptyList("chamfer needs non-empty clouds")
    return _directed_sq(A, B) + _directed_sq(B, A)


def chamfer_brute_force(a, b) -> float:
    A, B = as_points(a), as_points(b)
    D = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    return float(D.min(axis=1).mean() + D.min(axis=0).mean())


@dataclass
class InstanceMetrics:
    id: str
    category: str
    rot_deg: float
    trans_m: float
    scale_ratio: float
    iou: float
    chamfer: float
    diameter: float = float("nan")

    @property
    def trans_rel(self) -> float:
        return self.trans_m / self.diameter


@dataclass
class MetricsReport:
    instances: list

    def summary(self, relative=((5.0, 0.05), (10.0, 0.10))) -> dict:
        if not self.instances:
            raise EmptyList("no instances evaluated")
        E = [(m.rot_deg, m.trans_m) for m in self.instances]
        out = {"n": len(self.instances)}
        for thr in IOU_THRESHOLDS:
            out[f"IoU{int(round(thr * 100))}"] = iou_precision([m.iou for m in self.instances], thr)
        for r, t in POSE_THRESHOLDS:
            out[f"{r:g}deg_{t * 100:g}cm"] = average_precision(E, r, t)
        rel = [(m.rot_deg, m.trans_rel) for m in self.instances]
        for r, t in relative:
            out[f"{r:g}deg_{t * 100:g}pct_diameter"] = average_precision(rel, r, t)
        ch = [m.chamfer for m in self.instances if np.isfinite(m.chamfer)]
        out["mean_chamfer"] = float(np.mean(ch)) if ch else float("nan")
        out["mean_rot_deg"] = float(np.mean([m.rot_deg for m in self.instances]))
        out["mean_trans_m"] = float(np.mean([m.trans_m for m in self.instances]))
        return out

    def write_csv(self, path) -> None:
        f = io.StringIO()
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "category", "rot_deg", "trans_m", "scale_ratio", "iou", "chamfer", "diameter"])
        for m in self.instances:
            w.writerow([m.id, m.category, repr(m.rot_deg), repr(m.trans_m), repr(m.scale_ratio),
                        repr(m.iou), repr(m.chamfer), repr(m.diameter)])
        atomic_write_text(path, f.getvalue())


def instance_metrics(
    id: str,
    category: str,
    pred: Sim3Transform,
    gt: Sim3Transform,
    pred_ps,
    gt_ps,
    sym: SymmetrySpec | None,
    diameter: float,
    iou_resolution: int = 50,
) -> InstanceMetrics:
    """Pose errors, box IoU of the two decoded shapes, and canonical center Chamfer."""
    rot, trans, ratio = pose_error(pred, gt, sym)
    # Symmetric shapes: compare boxes after removing the unobservable spin about the axis.
    pred_aligned = Sim3Transform(pred.s, align_about_axis(pred.R, gt.R, sym), pred.t)
    a = OrientedBox.from_bounds(pred_aligned, *pred_ps.extents())
    b = OrientedBox.from_bounds(gt, *gt_ps.extents())
    iou = iou3d(a, b, iou_resolution)
    ch = chamfer(pred_ps.centers, gt_ps.centers)
    return InstanceMetrics(id, category, rot, trans, ratio, iou, ch, diameter)


DEFAULT_GRIDS = {
    "iou": np.linspace(0.0, 1.0, 101),
    "rotation_deg": np.linspace(0.0, 60.0, 61),
    "translation_cm": np.linspace(0.0, 15.0, 61),
}


def ap_curves(instances, grids: dict | None = None) -> list:
    """Rows ``(threshold, category, metric, ap)`` per category plus ``"all"``.

    Rotation and translation curves each vary one threshold with the other
    unconstrained; the IoU curve counts instances with IoU at or above the
    threshold, so it decreases as the threshold grows.
    """
    if not instances:
        raise EmptyList("no instances for AP curves")
    grids = grids or DEFAULT_GRIDS
    by_cat = {}
    for m in instances:
        by_cat.setdefault(m.category, []).append(m)
    cats = sorted(by_cat) + ["all"]
    by_cat["all"] = list(instances)
    rows = []
    for cat in cats:
        ms = by_cat[cat]
        rot = np.array([m.rot_deg for m in ms])
        trans = np.array([m.trans_m for m in ms])
        ious = np.array([m.iou for m in ms])
        for thr in grids["iou"]:
            rows.append((float(thr), cat, "iou", iou_precision(ious, thr)))
        for thr in grids["rotation_deg"]:
            rows.append((float(thr), cat, "rotation_deg", average_precision(np.c_[rot, trans], thr, np.inf)))
        for thr in grids["translation_cm"]:
            rows.append((float(thr), cat, "translation_cm", average_precision(np.c_[rot, trans], np.inf, thr / 100.0)))
    return rows


def write_curves_csv(rows, path) -> None:
    f = io.StringIO()
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["threshold", "category", "metric", "ap"])
    for thr, cat, metric, ap in rows:
        w.writerow([f"{thr:.6g}", cat, metric, repr(ap)])
    atomic_write_text(path, f.getvalue())
