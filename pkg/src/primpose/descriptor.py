"""Similarity-invariant shape descriptor built from primitive centers.

An atomic descriptor is the cosine between two center difference vectors,
``(c_i - c_j)`` and ``(c_k - c_o)``. It is unchanged by translation, uniform
scaling and rotation of the centers. A shape descriptor concatenates atomic
descriptors over an ordered sample of label quadruples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector, LabelSetTooSmall, LengthMismatch, MissingLabel

EPS = 1e-12


def atomic_descriptor(c_i, c_j, c_k, c_o) -> float:
    u = np.asarray(c_i, dtype=np.float64) - np.asarray(c_j, dtype=np.float64)
    v = np.asarray(c_k, dtype=np.float64) - np.asarray(c_o, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= EPS or nv <= EPS:
        raise DegenerateVector("coincident centers in atomic descriptor")
    return float(np.clip(np.dot(u / nu, v / nv), -1.0, 1.0))


@dataclass(frozen=True)
class QuadrupleSample:
    """Ordered ``(m, 4)`` array of label quadruples ``(i, j, k, o)``."""

    quadruples: np.ndarray
    seed: object = None
    labels: tuple = ()

    def __len__(self):
        return len(self.quadruples)

    def subset(self, idx) -> "QuadrupleSample":
        return QuadrupleSample(self.quadruples[np.asarray(idx)], self.seed, self.labels)


def sample_quadruples(labels, m: int, seed) -> QuadrupleSample:
    """Draw ``m`` quadruples i.i.d. and uniformly from the label set with ``i != j``, ``k != o``.

    Invalid draws are redrawn, so each pair is uniform over ordered pairs of
    distinct labels. Deterministic in ``seed``.
    """
    L = np.unique(np.asarray(labels, dtype=np.int64))
    if len(L) < 2:
        raise LabelSetTooSmall(f"need at least two labels, got {len(L)}")
    rng = np.random.default_rng(seed)
    Q = np.empty((m, 4), dtype=np.int64)
    for cols in ((0, 1), (2, 3)):
        a = rng.integers(0, len(L), size=m)
        b = rng.integers(0, len(L), size=m)
        bad = np.flatnonzero(a == b)
        while bad.size:
            b[bad] = rng.integers(0, len(L), size=bad.size)
            bad = bad[a[bad] == b[bad]]
        Q[:, cols[0]] = L[a]
        Q[:, cols[1]] = L[b]
    return QuadrupleSample(Q, seed, tuple(int(v) for v in L))


def _lookup(centers, labels_needed: np.ndarray):
    """Dense center table indexed by label, from a mapping or an ``(N_c, 3)`` array."""
    if isinstance(centers, dict):
        if not centers:
            raise MissingLabel("empty center map")
        top = max(int(k) for k in centers)
        table = np.full((top + 1, 3), np.nan)
        for k, c in centers.items():
            table[int(k)] = c
    else:
        table = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if labels_needed.size:
        if labels_needed.min() < 0 or labels_needed.max() >= len(table):
            raise MissingLabel("quadruple label outside the center table")
        if np.isnan(table[labels_needed]).any():
            missing = sorted({int(l) for l in labels_needed if np.isnan(table[l]).any()})
            raise MissingLabel(f"labels without a center: {missing[:10]}")
    return table


def _pair_units(table, a, b, Q):
    v = table[a] - table[b]
    n = np.sqrt(np.einsum("mj,mj->m", v, v))
    bad = np.flatnonzero(n <= EPS)
    if bad.size:
        raise DegenerateVector(
            f"degenerate difference vector at quadruple {int(bad[0])}: {Q[bad[0]].tolist()}",
            index=int(bad[0]),
        )
    return v / n[:, None], n


def shape_descriptor(centers, qs: QuadrupleSample) -> np.ndarray:
    """Atomic descriptors over ``qs`` in order; ``centers`` maps label to 3-vector."""
    Q = qs.quadruples
    if len(Q) == 0:
        return np.zeros(0)
    table = _lookup(centers, np.unique(Q))
    u, _ = _pair_units(table, Q[:, 0], Q[:, 1], Q)
    v, _ = _pair_units(table, Q[:, 2], Q[:, 3], Q)
    return np.einsum("mj,mj->m", u, v)


def descriptor_and_vjp(centers, qs: QuadrupleSample, weights) -> tuple[np.ndarray, np.ndarray]:
    """Descriptor values and ``sum_m weights[m] * d(theta_m)/d(centers)``.

    The gradient is returned as an array shaped like the center table
    (labels as rows).
    """
    Q = qs.quadruples
    table = _lookup(centers, np.unique(Q))
    u, nu = _pair_units(table, Q[:, 0], Q[:, 1], Q)
    v, nv = _pair_units(table, Q[:, 2], Q[:, 3], Q)
    theta = np.einsum("mj,mj->m", u, v)
    w = np.asarray(weights, dtype=np.float64)
    # d(u.v)/d(c_i) = (v - (u.v) u) / |c_i - c_j|, and symmetrically for c_k.
    gu = (w / nu)[:, None] * (v - theta[:, None] * u)
    gv = (w / nv)[:, None] * (u - theta[:, None] * v)
    G = np.zeros_like(table)
    n = len(table)
    for j in range(3):
        G[:, j] = (
            np.bincount(Q[:, 0], gu[:, j], n)
            - np.bincount(Q[:, 1], gu[:, j], n)
            + np.bincount(Q[:, 2], gv[:, j], n)
            - np.bincount(Q[:, 3], gv[:, j], n)
        )
    return theta, G


def descriptor_residual(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"descriptor lengths differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
