"""Procedural shape families with analytic signed distance functions.

Every instance is normalized so that its tight bounding box is centered at
the origin with a diagonal of length 1. The y axis is "up"; lathe families are
rotationally symmetric about it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParamsOutOfRange
from .geometry import axis_angle_matrix

Y_AXIS = np.array([0.0, 1.0, 0.0])


def polygon_sdf_2d(P: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Signed distance from 2-D points to a closed simple polygon (negative inside)."""
    n = len(verts)
    d2 = np.full(len(P), np.inf)
    inside = np.zeros(len(P), dtype=bool)
    for i in range(n):
        a = verts[i]
        b = verts[i - 1]
        e = b - a
        w = P - a
        h = np.clip((w @ e) / (e @ e), 0.0, 1.0)
        q = w - h[:, None] * e
        d2 = np.minimum(d2, np.einsum("nj,nj->n", q, q))
        # Crossing-number test against edge (a, b).
        cond = (P[:, 1] >= a[1]) != (P[:, 1] >= b[1])
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = a[0] + (P[:, 1] - a[1]) * e[0] / e[1]
        inside ^= cond & (P[:, 0] < x_cross)
    d = np.sqrt(d2)
    return np.where(inside, -d, d)


def box_sdf(X: np.ndarray, half: np.ndarray) -> np.ndarray:
    q = np.abs(X) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return outside + inside


@dataclass(frozen=True)
class SymmetrySpec:
    """Discrete rotational symmetry about ``axis``; angles in degrees."""

    axis: tuple = (0.0, 1.0, 0.0)
    angles: tuple = (0.0,)

    def __post_init__(self):
        if len(self.angles) == 0 or not any(abs(a) < 1e-12 for a in self.angles):
            raise ValueError("symmetry angle set must contain 0")
        a = np.asarray(self.axis, dtype=np.float64)
        object.__setattr__(self, "axis", tuple(float(v) for v in a / np.linalg.norm(a)))

    @property
    def symmetric(self) -> bool:
        return len(self.angles) > 1

    def to_dict(self) -> dict:
        return {"axis": list(self.axis), "angles": list(self.angles)}

    @classmethod
    def from_dict(cls, d: dict) -> "SymmetrySpec":
        return cls(tuple(d["axis"]), tuple(d["angles"]))


NO_SYMMETRY = SymmetrySpec()
AXIAL_SYMMETRY = SymmetrySpec((0.0, 1.0, 0.0), tuple(60.0 * i for i in range(6)))


@dataclass
class Shape:
    """A normalized shape instance: ``sdf`` takes canonical ``(N, 3)`` points."""

    raw_sdf: object
    lo: np.ndarray
    hi: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def sdf(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
        L = self.scale
        return self.raw_sdf(X * L + self.center) / L


def _lathe(params: dict) -> Shape:
    if "circle_radius" in params:
        r = float(params["circle_radius"])

        def sdf(X):
            return np.linalg.norm(X, axis=1) - r

        return Shape(sdf, np.full(3, -r), np.full(3, r))

    h = params["height"]
    rb = params["base_radius"]
    rt = params["top_radius"]
    f = params["shoulder"]
    y1 = f * h
    y2 = min(f + 0.12, 0.97) * h
    half = [(rb, 0.0), (rb, y1), (rt, y2), (rt, h)]
    verts = np.array(
        [(-x, y) for x, y in reversed(half)] + half, dtype=np.float64
    )

    def sdf(X):
        rho = np.sqrt(X[:, 0] ** 2 + X[:, 2] ** 2)
        return polygon_sdf_2d(np.stack([rho, X[:, 1]], axis=1), verts)

    rmax = max(rb, rt)
    return Shape(sdf, np.array([-rmax, 0.0, -rmax]), np.array([rmax, h, rmax]))


def _laptop(params: dict) -> Shape:
    w, dpt, th = params["width"], params["depth"], params["thickness"]
    sh = params["screen_ratio"] * dpt
    ang = np.radians(params["opening_deg"])
    base_half = np.array([w / 2, th / 2, dpt / 2])
    base_c = np.array([0.0, th / 2, 0.0])
    # Screen hinged at the back top edge (z = -d/2, y = th); opening angle is
    # measured between the base top face and the screen.
    hinge = np.array([0.0, th, -dpt / 2])
    Rs = axis_angle_matrix([1.0, 0.0, 0.0], -ang)
    scr_half = np.array([w / 2, th / 2, sh / 2])
    scr_c_local = np.array([0.0, th / 2, sh / 2])
    scr_c = hinge + Rs @ scr_c_local

    def sdf(X):
        a = box_sdf(X - base_c, base_half)
        b = box_sdf((X - scr_c) @ Rs, scr_half)
        return np.minimum(a, b)

    corners = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                corners.append(base_c + base_half * [sx, sy, sz])
                corners.append(scr_c + Rs @ (scr_half * [sx, sy, sz]))
    corners = np.array(corners)
    return Shape(sdf, corners.min(axis=0), corners.max(axis=0))


def _mug(params: dict) -> Shape:
    rb, h = params["body_radius"], params["height"]
    R = params["handle_radius"] * h
    rr = params["handle_thickness"]
    hc = np.array([rb, h / 2, 0.0])

    def sdf(X):
        rho = np.sqrt(X[:, 0] ** 2 + X[:, 2] ** 2)
        dx = rho - rb
        dy = np.abs(X[:, 1] - h / 2) - h / 2
        cyl = np.minimum(np.maximum(dx, dy), 0.0) + np.hypot(
            np.maximum(dx, 0.0), np.maximum(dy, 0.0)
        )
        # Torus in the x-y plane around the handle center.
        q = X - hc
        ring = np.hypot(q[:, 0], q[:, 1]) - R
        torus = np.hypot(ring, q[:, 2]) - rr
        return np.minimum(cyl, torus)

    lo = np.array([-rb, min(0.0, h / 2 - R - rr), -rb])
    hi = np.array([rb + R + rr, max(h, h / 2 + R + rr), rb])
    return Shape(sdf, lo, hi)


_BUILDERS = {"lathe": _lathe, "laptop": _laptop, "mug": _mug}


@dataclass(frozen=True)
class CategorySpec:
    name: str
    family: str
    ranges: dict = field(default_factory=dict)
    symmetry: SymmetrySpec = NO_SYMMETRY

    def sample_params(self, rng: np.random.Generator) -> dict:
        return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in sorted(self.ranges.items())}

    def check_params(self, params: dict) -> None:
        if self.family == "lathe" and "circle_radius" in params:
            if not params["circle_radius"] > 0:
                raise ParamsOutOfRange("circle radius must be positive")
            return
        for k, (lo, hi) in self.ranges.items():
            if k not in params:
                raise ParamsOutOfRange(f"missing parameter {k!r}")
            v = params[k]
            if not (lo - 1e-12 <= v <= hi + 1e-12):
                raise ParamsOutOfRange(f"{k}={v} outside [{lo}, {hi}]")

    def shape(self, params: dict) -> Shape:
        self.check_params(params)
        return _BUILDERS[self.family](params)


CATEGORIES = {
    "bottle": CategorySpec(
        "bottle",
        "lathe",
        {"height": (0.8, 1.4), "base_radius": (0.18, 0.32), "top_radius": (0.05, 0.12), "shoulder": (0.45, 0.75)},
        AXIAL_SYMMETRY,
    ),
    "can": CategorySpec(
        "can",
        "lathe",
        {"height": (0.6, 1.2), "base_radius": (0.25, 0.4), "top_radius": (0.22, 0.4), "shoulder": (0.75, 0.85)},
        AXIAL_SYMMETRY,
    ),
    "bowl": CategorySpec(
        "bowl",
        "lathe",
        {"height": (0.25, 0.45), "base_radius": (0.15, 0.25), "top_radius": (0.4, 0.55), "shoulder": (0.05, 0.3)},
        AXIAL_SYMMETRY,
    ),
    "laptop": CategorySpec(
        "laptop",
        "laptop",
        {"width": (0.7, 1.0), "depth": (0.5, 0.7), "thickness": (0.03, 0.06), "screen_ratio": (0.8, 1.05), "opening_deg": (75.0, 125.0)},
    ),
    "mug": CategorySpec(
        "mug",
        "mug",
        {"body_radius": (0.25, 0.38), "height": (0.6, 0.95), "handle_radius": (0.2, 0.3), "handle_thickness": (0.04, 0.07)},
    ),
}


def get_category(name: str) -> CategorySpec:
    try:
        return CATEGORIES[name]
    except KeyError:
        raise KeyError(f"unknown category {name!r}; choose from {sorted(CATEGORIES)}") from None
