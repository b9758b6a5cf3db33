"""End-to-end estimation: labeled points to latent shape and similarity pose."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration
from .geometry import Sim3Transform, umeyama_align
from .labeling import LabeledPointCloud, centralize
from .io import write_json
from .optimizer import OptimizationTrace, OptimizerConfig, optimize_shape, optimize_shape_ransac
from .primitives import LinearShapeBasis, PrimitiveSet, decode


@dataclass
class EstimationResult:
    z_hat: np.ndarray
    pose: Sim3Transform
    alignment_residual: float
    descriptor_residual: float
    n_labels: int
    timings_ms: dict = field(default_factory=dict)
    trace: OptimizationTrace | None = None

    def to_dict(self) -> dict:
        d = {"z": [float(v) for v in self.z_hat]}
        d.update(self.pose.to_dict())
        d["residuals"] = {
            "alignment": self.alignment_residual,
            "descriptor": self.descriptor_residual,
        }
        d["n_labels"] = self.n_labels
        d["timings_ms"] = dict(self.timings_ms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationResult":
        return cls(
            np.asarray(d["z"], dtype=np.float64),
            Sim3Transform.from_dict(d),
            d["residuals"]["alignment"],
            d["residuals"]["descriptor"],
            d.get("n_labels", 0),
            d.get("timings_ms", {}),
        )

    def save(self, path, include_timings: bool = True) -> None:
        d = self.to_dict()
        if not include_timings:
            d.pop("timings_ms")
        write_json(path, d)


def recover_pose(lc: LabeledPointCloud, decoded: PrimitiveSet, per_label_weights: bool = False):
    """Similarity transform taking decoded centers onto the observed points.

    Every non-dust point is paired with the decoded center of its label.
    With ``per_label_weights`` each label contributes equal total weight
    instead of weight proportional to its point count.

    Returns ``(pose, residual)``.
    """
    keep = lc.valid
    labels = lc.labels[keep]
    if len(np.unique(labels)) < 3:
        raise DegenerateConfiguration("fewer than 3 distinct labels for pose recovery")
    src = decoded.centers[labels]
    dst = lc.points[keep]
    w = None
    if per_label_weights:
        _, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
        w = 1.0 / counts[inv]
    return umeyama_align(src, dst, weights=w)


def estimate(
    lc: LabeledPointCloud,
    basis: LinearShapeBasis,
    cfg: OptimizerConfig | None = None,
    per_label_weights: bool = False,
) -> EstimationResult:
    """Centralize, optimize the latent shape, then align it to the observation."""
    cfg = cfg or OptimizerConfig()
    timings = {}
    t0 = time.perf_counter()
    obs = centralize(lc)
    t1 = time.perf_counter()
    timings["centralize"] = (t1 - t0) * 1e3
    if cfg.ransac is not None:
        z_hat, trace = optimize_shape_ransac(obs, basis, cfg)
    else:
        z_hat, trace = optimize_shape(obs, basis, cfg)
    t2 = time.perf_counter()
    timings["shape"] = (t2 - t1) * 1e3
    decoded = decode(basis, z_hat)
    pose, resid = recover_pose(lc, decoded, per_label_weights)
    t3 = time.perf_counter()
    timings["pose"] = (t3 - t2) * 1e3
    desc_res = trace.residual[trace.best_iteration] if trace.best_iteration >= 0 else float("nan")
    return EstimationResult(z_hat, pose, resid, desc_res, len(obs.labels), timings, trace)


def mean_shape_alignment(lc: LabeledPointCloud, basis: LinearShapeBasis):
    """Pose and residual when the shape is fixed at the mean (``z = 0``)."""
    return recover_pose(lc, decode(basis, np.zeros(basis.latent_dim)))
