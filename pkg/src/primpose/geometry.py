"""Similarity transforms and least-squares similarity alignment.

Transforms act as ``x_world = s * R @ x_canonical + t``. The alternative
parameterization ``x_world = s * R @ (x_canonical + t_c)`` (translation
expressed in the canonical frame) is available through
:meth:`Sim3Transform.canonical_translation` and
:meth:`Sim3Transform.from_canonical_translation`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Sim3Transform:
    s: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", float(self.s))
        if not self.s > 0 or not np.isfinite(self.s):
            raise ValueError(f"scale must be positive and finite, got {self.s}")

    @classmethod
    def identity(cls) -> "Sim3Transform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def is_valid(self, tol: float = _ORTHO_TOL) -> bool:
        return (
            np.allclose(self.R.T @ self.R, np.eye(3), atol=tol)
            and abs(np.linalg.det(self.R) - 1.0) <= tol
            and self.s > 0
        )

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.s * self.R
        M[:3, 3] = self.t
        return M

    def apply(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=np.float64)
        return self.s * P @ self.R.T + self.t

    def inverse(self) -> "Sim3Transform":
        Rt = self.R.T
        return Sim3Transform(1.0 / self.s, Rt, -(Rt @ self.t) / self.s)

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        """``self ∘ other``: apply ``other`` first."""
        return Sim3Transform(
            self.s * other.s,
            self.R @ other.R,
            self.s * self.R @ other.t + self.t,
        )

    __matmul__ = compose

    def canonical_translation(self) -> np.ndarray:
        """Translation of the ``s R (x + t_c)`` form."""
        return self.R.T @ self.t / self.s

    @classmethod
    def from_canonical_translation(cls, s, R, t_c) -> "Sim3Transform":
        R = np.asarray(R, dtype=np.float64)
        return cls(s, R, s * R @ np.asarray(t_c, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "scale": self.s,
            "rotation": [float(v) for v in self.R.reshape(-1)],
            "translation": [float(v) for v in self.t],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sim3Transform":
        return cls(d["scale"], np.reshape(d["rotation"], (3, 3)), d["translation"])


def as_points(cloud) -> np.ndarray:
    P = np.asarray(cloud, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {P.shape}")
    return P


def sim3_apply(T: Sim3Transform, cloud) -> np.ndarray:
    return T.apply(as_points(cloud))


def axis_angle_matrix(axis, angle_rad: float) -> np.ndarray:
    """Rotation by ``angle_rad`` about ``axis`` (Rodrigues)."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1.0 - np.cos(angle_rad)) * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation via QR of a Gaussian matrix."""
    Q, Rq = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(Rq))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def rotation_angle_deg(R_a, R_b) -> float:
    """Geodesic distance between two rotations, in degrees.

    Uses atan2 of the sine and cosine parts; arccos of the trace alone loses
    about eight digits near zero.
    """
    M = np.asarray(R_a).T @ np.asarray(R_b)
    v = np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.degrees(np.arctan2(0.5 * np.linalg.norm(v), 0.5 * (np.trace(M) - 1.0))))


def umeyama_align(src, dst, weights=None, rank_tol: float = 1e-10):
    """Least-squares similarity transform mapping ``src`` onto ``dst``.

    Minimizes ``sum_i w_i ||dst_i - s R src_i - t||^2 / sum_i w_i`` with
    ``det(R) = +1``. Planar (rank-2) configurations are accepted.

    Returns ``(transform, residual)`` where residual is the weighted mean
    squared error at the optimum.

    Raises DegenerateConfiguration when ``src`` collapses to a point or the
    cross-covariance has rank <= 1.
    """
    X = as_points(src)
    Y = as_points(dst)
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Y.shape}")
    n = X.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need at least 3 correspondences, got {n}")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(n)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()

    mu_x = w @ X
    mu_y = w @ Y
    Xc = X - mu_x
    Yc = Y - mu_y
    var_x = float(w @ np.einsum("ij,ij->i", Xc, Xc))
    scale_ref = max(float(np.abs(X).max()), 1.0)
    if var_x <= (1e-12 * scale_ref) ** 2:
        raise DegenerateConfiguration("source points are coincident")

    cov = (Yc * w[:, None]).T @ Xc
    U, d, Vt = np.linalg.svd(cov)
    if d[0] <= 0 or d[1] <= rank_tol * d[0]:
        raise DegenerateConfiguration(
            f"cross-covariance rank <= 1 (singular values {d})"
        )
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    s = float((d * S).sum() / var_x)
    t = mu_y - s * R @ mu_x
    T = Sim3Transform(s, R, t)

    resid = Y - T.apply(X)
    residual = float(w @ np.einsum("ij,ij->i", resid, resid))
    return T, residual
