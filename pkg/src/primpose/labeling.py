"""Per-point semantic labels, the symmetry-aware label loss and centralization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AngleNotInSpec, MalformedDistribution, TooFewLabels
from .geometry import Sim3Transform, as_points, axis_angle_matrix
from .primitives import PrimitiveSet
from .shapes import SymmetrySpec

DUST = -1
DEFAULT_DUST_RADIUS = 0.1
MIN_LABELS = 4


@dataclass
class LabeledPointCloud:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = as_points(self.points)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels differ in length")

    def __len__(self):
        return len(self.labels)

    @property
    def valid(self) -> np.ndarray:
        return self.labels != DUST

    def distinct_labels(self) -> np.ndarray:
        return np.unique(self.labels[self.valid])


@dataclass
class SemanticCenters:
    labels: np.ndarray
    centers: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return len(self.labels)

    def as_map(self) -> dict:
        return {int(l): c for l, c in zip(self.labels, self.centers)}

    def transformed(self, T: Sim3Transform) -> "SemanticCenters":
        return SemanticCenters(self.labels.copy(), T.apply(self.centers), self.counts.copy())


@dataclass(frozen=True)
class LabelNoise:
    """Independent per-point flips to a uniformly drawn wrong label."""

    fraction: float = 0.0
    seed: object = 0


def _nearest(points: np.ndarray, centers: np.ndarray):
    if len(points) * len(centers) <= 4_000_000:
        # Explicit differences keep the lowest-index tie-break exact.
        diff = points[:, None, :] - centers[None, :, :]
        d2 = np.einsum("nkj,nkj->nk", diff, diff)
    else:
        d2 = (
            np.einsum("nj,nj->n", points, points)[:, None]
            - 2.0 * points @ centers.T
            + np.einsum("kj,kj->k", centers, centers)[None, :]
        )
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(np.maximum(d2[np.arange(len(points)), idx], 0.0))


def assign_labels(canonical_cloud, ps: PrimitiveSet) -> np.ndarray:
    """Index of the nearest primitive center per point; ties go to the lowest index."""
    idx, _ = _nearest(as_points(canonical_cloud), ps.centers)
    return idx


def _check_angle(sym: SymmetrySpec, theta: float) -> None:
    if not any(abs((theta - a + 180.0) % 360.0 - 180.0) < 1e-9 for a in sym.angles):
        raise AngleNotInSpec(f"{theta} deg is not one of {sym.angles}")


def rotated_labels(canonical_cloud, ps: PrimitiveSet, sym: SymmetrySpec, theta: float) -> np.ndarray:
    """Labels against the primitive centers rotated by ``theta`` degrees about the axis."""
    _check_angle(sym, theta)
    if theta % 360.0 == 0.0:
        return assign_labels(canonical_cloud, ps)
    R = axis_angle_matrix(sym.axis, np.radians(theta))
    return assign_labels(canonical_cloud, PrimitiveSet(ps.centers @ R.T, ps.radii))


def symmetric_cross_entropy(pred, canonical_cloud, ps: PrimitiveSet, sym: SymmetrySpec):
    """Minimum over the symmetry angles of the mean cross-entropy.

    ``pred`` holds one probability row per point over ``N_c + 1`` classes, the
    last one being the dust class. Returns ``(loss, best_angle)``.
    """
    P = np.asarray(pred, dtype=np.float64)
    n_c = ps.n_primitives
    cloud = as_points(canonical_cloud)
    if P.shape != (len(cloud), n_c + 1):
        raise MalformedDistribution(f"expected shape {(len(cloud), n_c + 1)}, got {P.shape}")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise MalformedDistribution("rows must be non-negative and sum to 1")
    logp = np.log(np.maximum(P, np.finfo(np.float64).tiny))
    rows = np.arange(len(cloud))
    best, best_theta = np.inf, None
    for theta in sym.angles:
        lab = rotated_labels(cloud, ps, sym, theta)
        loss = float(-logp[rows, lab].mean())
        if loss < best:
            best, best_theta = loss, theta
    return best, best_theta


def flip_labels(labels, n_c: int, noise: LabelNoise) -> np.ndarray:
    """Copy of ``labels`` with each non-dust entry flipped to a uniform wrong label w.p. ``noise.fraction``."""
    labels = np.array(labels, dtype=np.int64)
    if noise.fraction <= 0 or n_c < 2:
        return labels
    rng = np.random.default_rng(noise.seed)
    flip = (rng.random(len(labels)) < noise.fraction) & (labels != DUST)
    offset = rng.integers(1, n_c, size=len(labels))
    labels[flip] = (labels[flip] + offset[flip]) % n_c
    return labels


def oracle_label_observation(
    observed,
    gt: Sim3Transform,
    ps: PrimitiveSet,
    noise: LabelNoise | None = None,
    dust_radius: float = DEFAULT_DUST_RADIUS,
) -> LabeledPointCloud:
    """Label an observation with the ground-truth pose standing in for a segmenter."""
    pts = as_points(observed)
    canonical = gt.inverse().apply(pts)
    labels, dist = _nearest(canonical, ps.centers)
    labels = labels.astype(np.int64)
    labels[dist > dust_radius] = DUST
    if noise is not None:
        labels = flip_labels(labels, ps.n_primitives, noise)
    return LabeledPointCloud(pts.copy(), labels)


def centralize(lc: LabeledPointCloud, min_points: int = 1) -> SemanticCenters:
    """Per-label mean of the non-dust points, labels ascending."""
    keep = lc.valid
    labels = lc.labels[keep]
    pts = lc.points[keep]
    uniq, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inv, pts)
    ok = counts >= min_points
    uniq, sums, counts = uniq[ok], sums[ok], counts[ok]
    if len(uniq) < MIN_LABELS:
        raise TooFewLabels(f"{len(uniq)} distinct labels observed; need {MIN_LABELS}")
    return SemanticCenters(uniq, sums / counts[:, None], counts)
