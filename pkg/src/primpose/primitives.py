"""Sphere-primitive shape representation.

A category instance is abstracted as ``N_c`` spheres whose index carries the
same part meaning across instances. This module fits spheres to signed
distance samples, re-indexes fitted sets against a reference, and compresses
a collection of aligned sets into an affine latent basis that plays the role
of the coarse generative decoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    CountMismatch,
    DimensionMismatch,
    InsufficientSamples,
    NonFiniteLoss,
    TooFewInstances,
)

DEFAULT_TRUNCATION = 0.02


@dataclass(frozen=True)
class SpherePrimitive:
    c: np.ndarray
    r: float


@dataclass
class PrimitiveSet:
    """``N_c`` spheres; row ``i`` of ``centers`` is the part with label ``i``."""

    centers: np.ndarray
    radii: np.ndarray
    category: str = ""

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if len(self.centers) != len(self.radii):
            raise CountMismatch("centers and radii differ in length")
        if len(self.centers) == 0:
            raise ValueError("a primitive set needs at least one sphere")
        if np.any(self.radii < 0):
            raise ValueError("radii must be non-negative")

    def __len__(self):
        return len(self.radii)

    @property
    def n_primitives(self) -> int:
        return len(self.radii)

    def __getitem__(self, i) -> SpherePrimitive:
        return SpherePrimitive(self.centers[i].copy(), float(self.radii[i]))

    def packed(self) -> np.ndarray:
        """Flat ``[c_x, c_y, c_z, r]`` per primitive."""
        return np.concatenate([self.centers, self.radii[:, None]], axis=1).reshape(-1)

    @classmethod
    def from_packed(cls, packed, category: str = "") -> "PrimitiveSet":
        P = np.asarray(packed, dtype=np.float64).reshape(-1, 4)
        return cls(P[:, :3], np.maximum(P[:, 3], 0.0), category)

    def permuted(self, perm) -> "PrimitiveSet":
        perm = np.asarray(perm)
        return PrimitiveSet(self.centers[perm], self.radii[perm], self.category)

    def extents(self) -> tuple[np.ndarray, np.ndarray]:
        """Tight axis-aligned bounds ``(lo, hi)`` of the union of spheres."""
        lo = (self.centers - self.radii[:, None]).min(axis=0)
        hi = (self.centers + self.radii[:, None]).max(axis=0)
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "n_primitives": self.n_primitives,
            "spheres": [
                {"c": [float(v) for v in c], "r": float(r)}
                for c, r in zip(self.centers, self.radii)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrimitiveSet":
        spheres = d["spheres"]
        if "n_primitives" in d and d["n_primitives"] != len(spheres):
            raise CountMismatch("n_primitives disagrees with sphere list")
        return cls(
            [s["c"] for s in spheres], [s["r"] for s in spheres], d.get("category", "")
        )


def _distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centers[None, :, :]
    return np.sqrt(np.einsum("nkj,nkj->nk", diff, diff))


def primitive_sdf(x, ps: PrimitiveSet):
    """Signed distance to the union of spheres, ``min_i ||x - c_i|| - r_i``.

    Accepts a single 3-vector (returns a float) or an ``(N, 3)`` array.
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(-1, 3)
    d = (_distances(X, ps.centers) - ps.radii[None, :]).min(axis=1)
    return float(d[0]) if single else d


def truncate_sdf(s, t: float = DEFAULT_TRUNCATION):
    """Fold signed distances deeper than ``t/2`` back outward.

    The result is the distance to a shell of thickness ``t`` under the
    surface, which makes fitted spheres settle on the surface instead of
    filling the interior.
    """
    if not t > 0:
        raise ValueError(f"truncation must be positive, got {t}")
    s = np.asarray(s, dtype=np.float64)
    out = np.where(s >= -t / 2.0, s, -s - t)
    return float(out) if out.ndim == 0 else out


@dataclass
class FitConfig:
    step: float = 1e-2
    iterations: int = 2000
    init_radius: float = 0.02
    # Loss truncation window; None ties it to the SDF truncation value.
    clamp: float | None = None
    min_step: float = 1e-7


@dataclass
class FitResult:
    primitives: PrimitiveSet
    loss: float
    losses: list = field(default_factory=list)


def truncated_l1(d, target, clamp: float) -> float:
    return float(np.mean(np.abs(np.clip(d, -clamp, clamp) - np.clip(target, -clamp, clamp))))


def farthest_point_sampling(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    """Indices of ``k`` greedily farthest-apart points."""
    n = len(points)
    k = min(k, n)
    idx = np.empty(k, dtype=np.int64)
    idx[0] = start
    dist = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, k):
        idx[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(points - points[idx[i]], axis=1))
    return idx


class _NearestSphereLoss:
    """Truncated-L1 loss and subgradient with cached nearest-sphere candidates.

    Each sample keeps its ``k`` nearest spheres from the last full pass plus the
    gap to the first excluded one. A sphere outside the list can only become
    nearest once the parameters have drifted by half that gap, so rows at risk
    are re-evaluated against every sphere and the result stays exact.
    """

    def __init__(self, X, target_c, clamp, k=8):
        self.X = X
        self.xx = np.einsum("nj,nj->n", X, X)
        self.target_c = target_c
        self.clamp = clamp
        self.k = k
        self.ref = None

    def _full_sd(self, rows, centers, radii):
        X = self.X[rows]
        d2 = self.xx[rows, None] - 2.0 * (X @ centers.T) + np.einsum("kj,kj->k", centers, centers)[None, :]
        return np.sqrt(np.maximum(d2, 0.0)) - radii[None, :]

    def _refresh(self, centers, radii):
        n_c = len(radii)
        sd = self._full_sd(slice(None), centers, radii)
        if n_c <= self.k:
            self.cand = np.broadcast_to(np.arange(n_c), sd.shape).copy()
            self.margin = np.full(len(sd), np.inf)
        else:
            part = np.argpartition(sd, self.k, axis=1)
            self.cand = part[:, : self.k]
            rows = np.arange(len(sd))[:, None]
            kth = sd[rows[:, 0], part[:, self.k]]
            self.margin = kth - sd[rows, self.cand].min(axis=1)
        self.ref = (centers.copy(), radii.copy())

    def nearest(self, centers, radii):
        """Nearest sphere index and its signed distance for every sample."""
        if self.ref is None:
            self._refresh(centers, radii)
        drift = np.max(
            np.linalg.norm(centers - self.ref[0], axis=1) + np.abs(radii - self.ref[1])
        )
        stale = self.margin <= 2.0 * drift
        if stale.sum() > len(stale) // 4:
            self._refresh(centers, radii)
            stale[:] = False
        cc = np.einsum("kj,kj->k", centers, centers)
        xc = np.take_along_axis(self.X @ centers.T, self.cand, axis=1)
        d2 = self.xx[:, None] - 2.0 * xc + cc[self.cand]
        sd = np.sqrt(np.maximum(d2, 0.0)) - radii[self.cand]
        j = np.argmin(sd, axis=1)
        rows = np.arange(len(sd))
        k = self.cand[rows, j]
        d = sd[rows, j]
        if stale.any():
            idx = np.flatnonzero(stale)
            full = self._full_sd(idx, centers, radii)
            k[idx] = np.argmin(full, axis=1)
            d[idx] = full[np.arange(len(idx)), k[idx]]
        return k, d

    def __call__(self, centers, radii):
        k, d = self.nearest(centers, radii)
        clamp = self.clamp
        err = np.clip(d, -clamp, clamp) - self.target_c
        loss = float(np.mean(np.abs(err)))

        n_c = len(radii)
        g = np.sign(err) * (np.abs(d) < clamp) / len(d)
        active = g != 0
        k_a = k[active]
        diff = self.X[active] - centers[k_a]
        nrm = np.maximum(np.sqrt(np.einsum("nj,nj->n", diff, diff)), 1e-12)
        w = g[active] / nrm
        g_c = np.empty((n_c, 3))
        for j in range(3):
            g_c[:, j] = -np.bincount(k_a, weights=w * diff[:, j], minlength=n_c)
        g_r = -np.bincount(k_a, weights=g[active], minlength=n_c)
        return loss, g_c, g_r


def fit_primitives(
    x,
    s,
    n_c: int,
    t: float = DEFAULT_TRUNCATION,
    cfg: FitConfig | None = None,
    init: PrimitiveSet | None = None,
    category: str = "",
) -> FitResult:
    """Fit ``n_c`` spheres to SDF samples by subgradient descent.

    Minimizes the mean of ``|clip(d(x, spheres)) - clip(truncate_sdf(s, t))|``.
    Steps that raise the loss are rejected and the step size halved, so the
    recorded loss never increases. Without ``init`` the spheres start at
    farthest-point samples of the samples inside the truncated shell.
    """
    cfg = cfg or FitConfig()
    X = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    S = np.asarray(s, dtype=np.float64).reshape(-1)
    if n_c < 1:
        raise InsufficientSamples("need at least one primitive")
    if len(X) != len(S):
        raise ValueError("positions and distances differ in length")
    if len(X) < 10 * n_c:
        raise InsufficientSamples(f"{len(X)} samples for {n_c} primitives; need {10 * n_c}")
    if not (np.any(S < 0) and np.any(S > 0)):
        raise InsufficientSamples("samples must span both signs of the SDF")

    clamp = t if cfg.clamp is None else cfg.clamp
    target = truncate_sdf(S, t)
    target_c = np.clip(target, -clamp, clamp)

    if init is not None:
        if init.n_primitives != n_c:
            raise CountMismatch("initial set has the wrong primitive count")
        centers = init.centers.copy()
        radii = init.radii.copy()
    else:
        inside = X[target < 0]
        if len(inside) < n_c:
            inside = X[S < 0]
        if len(inside) < n_c:
            raise InsufficientSamples("too few interior samples to seed primitives")
        centers = inside[farthest_point_sampling(inside, n_c)].copy()
        radii = np.full(n_c, cfg.init_radius)

    loss_fn = _NearestSphereLoss(X, target_c, clamp)
    loss, g_c, g_r = loss_fn(centers, radii)
    if not np.isfinite(loss):
        raise NonFiniteLoss("initial loss is not finite")
    losses = [loss]
    step = cfg.step
    for _ in range(cfg.iterations):
        cand_c = centers - step * g_c
        cand_r = np.maximum(radii - step * g_r, 0.0)
        new_loss, new_gc, new_gr = loss_fn(cand_c, cand_r)
        if not np.isfinite(new_loss) or not np.all(np.isfinite(cand_c)):
            raise NonFiniteLoss("loss diverged during primitive fitting")
        if new_loss <= loss:
            centers, radii = cand_c, cand_r
            loss, g_c, g_r = new_loss, new_gc, new_gr
            losses.append(loss)
        else:
            step *= 0.5
            if step < cfg.min_step:
                break
    return FitResult(PrimitiveSet(centers, radii, category), loss, losses)


def brute_force_matching(set_centers: np.ndarray, ref_centers: np.ndarray):
    """Exhaustive minimum-cost matching; only usable for a handful of primitives."""
    from itertools import permutations

    n = len(ref_centers)
    cost = np.linalg.norm(ref_centers[:, None, :] - set_centers[None, :, :], axis=2)
    best, best_perm = np.inf, None
    for perm in permutations(range(n)):
        c = cost[np.arange(n), perm].sum()
        if c < best:
            best, best_perm = c, perm
    return np.array(best_perm), float(best)


def align_primitive_indices(sets, reference: PrimitiveSet):
    """Re-index each set so primitive ``i`` lands nearest reference primitive ``i``.

    Returns ``(aligned_sets, permutations, costs)``; ``aligned[k] ==
    sets[k].permuted(permutations[k])``.
    """
    out, perms, costs = [], [], []
    for ps in sets:
        if ps.n_primitives != reference.n_primitives:
            raise CountMismatch(
                f"set has {ps.n_primitives} primitives, reference {reference.n_primitives}"
            )
        cost = np.linalg.norm(
            reference.centers[:, None, :] - ps.centers[None, :, :], axis=2
        )
        rows, cols = linear_sum_assignment(cost)
        perm = cols[np.argsort(rows)]
        out.append(ps.permuted(perm))
        perms.append(perm)
        costs.append(float(cost[rows, cols].sum()))
    return out, perms, costs


@dataclass
class LinearShapeBasis:
    """Affine decoder ``packed = mean + basis @ z`` over packed sphere parameters.

    ``basis`` has orthonormal directions scaled by the per-direction standard
    deviation of the training set, so ``z ~ N(0, I)`` reproduces the training
    spread. ``directions`` keeps the unscaled orthonormal columns.
    """

    mean: np.ndarray
    directions: np.ndarray
    stddev: np.ndarray
    category: str = ""
    radii_clamped: bool = True

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.stddev = np.asarray(self.stddev, dtype=np.float64).reshape(-1)
        if self.mean.size % 4:
            raise DimensionMismatch("packed mean length must be a multiple of 4")
        if self.directions.shape != (self.mean.size, self.stddev.size):
            raise DimensionMismatch("basis shape disagrees with mean/stddev")

    @property
    def latent_dim(self) -> int:
        return self.stddev.size

    @property
    def n_primitives(self) -> int:
        return self.mean.size // 4

    @property
    def basis(self) -> np.ndarray:
        return self.directions * self.stddev[None, :]

    @property
    def center_jacobian(self) -> np.ndarray:
        """``d(centers)/dz`` as an ``(N_c, 3, D)`` array; constant in ``z``."""
        B = self.basis.reshape(self.n_primitives, 4, self.latent_dim)
        return B[:, :3, :]

    def check_code(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != self.latent_dim:
            raise DimensionMismatch(f"latent code has {z.size} entries, basis expects {self.latent_dim}")
        return z

    def decode_packed(self, z) -> np.ndarray:
        return self.mean + self.basis @ self.check_code(z)

    def decode_centers(self, z) -> np.ndarray:
        return self.decode_packed(z).reshape(-1, 4)[:, :3]

    def project(self, ps: PrimitiveSet) -> np.ndarray:
        """Least-squares latent code of a primitive set (inverse of decode on the span)."""
        if ps.n_primitives != self.n_primitives:
            raise CountMismatch("primitive count differs from basis")
        coeff = self.directions.T @ (ps.packed() - self.mean)
        safe = np.where(self.stddev > 0, self.stddev, 1.0)
        return np.where(self.stddev > 0, coeff / safe, 0.0)

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "latent_dim": self.latent_dim,
            "n_primitives": self.n_primitives,
            "mean": [float(v) for v in self.mean],
            "basis": [[float(v) for v in row] for row in self.basis],
            "directions": [[float(v) for v in row] for row in self.directions],
            "stddev": [float(v) for v in self.stddev],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearShapeBasis":
        mean = np.asarray(d["mean"], dtype=np.float64)
        if "directions" in d:
            return cls(mean, np.asarray(d["directions"]), np.asarray(d["stddev"]), d.get("category", ""))
        # Only the scaled basis is available: recover scales from column norms.
        B = np.asarray(d["basis"], dtype=np.float64).reshape(mean.size, -1)
        std = np.linalg.norm(B, axis=0)
        dirs = np.where(std > 0, B / np.where(std > 0, std, 1.0), 0.0)
        return cls(mean, dirs, std, d.get("category", ""))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "LinearShapeBasis":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def decode(basis: LinearShapeBasis, z) -> PrimitiveSet:
    """Primitive set for latent code ``z``; negative radii are clamped to 0."""
    return PrimitiveSet.from_packed(basis.decode_packed(z), basis.category)


def fit_shape_basis(aligned, latent_dim: int, category: str = "") -> LinearShapeBasis:
    """Principal-component basis of aligned primitive sets."""
    if not aligned:
        raise TooFewInstances("no primitive sets given")
    n_c = aligned[0].n_primitives
    for ps in aligned:
        if ps.n_primitives != n_c:
            raise CountMismatch("aligned sets disagree on primitive count")
    if latent_dim < 1 or latent_dim > 4 * n_c:
        raise TooFewInstances(f"latent dimension {latent_dim} invalid for {n_c} primitives")
    if len(aligned) < latent_dim + 1:
        raise TooFewInstances(f"{len(aligned)} instances cannot support a {latent_dim}-D basis")

    P = np.stack([ps.packed() for ps in aligned])
    mean = P.mean(axis=0)
    Pc = P - mean
    # Full left singular basis so zero-variance directions still get an
    # orthonormal completion.
    _, sv, Vt = np.linalg.svd(Pc, full_matrices=True)
    dirs = Vt[:latent_dim].T.copy()
    sv_full = np.zeros(latent_dim)
    k = min(latent_dim, sv.size)
    sv_full[:k] = sv[:k]
    std = sv_full / np.sqrt(max(len(aligned) - 1, 1))
    std[std < 1e-14 * max(1.0, std.max(initial=0.0))] = 0.0
    # Deterministic sign: largest-magnitude entry of each direction positive.
    for j in range(latent_dim):
        i = np.argmax(np.abs(dirs[:, j]))
        if dirs[i, j] < 0:
            dirs[:, j] = -dirs[:, j]
    return LinearShapeBasis(mean, dirs, std, category or aligned[0].category)
