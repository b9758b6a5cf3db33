"""Synthetic benchmark: category models, posed partial observations, corruption."""

from __future__ import annotations

import hashlib
import inspect
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyView, TooFewInstances
from .evaluation import chamfer
from .geometry import Sim3Transform, random_rotation
from .labeling import LabeledPointCloud, LabelNoise, oracle_label_observation
from .primitives import (
    DEFAULT_TRUNCATION,
    FitConfig,
    LinearShapeBasis,
    PrimitiveSet,
    align_primitive_indices,
    decode,
    farthest_point_sampling,
    fit_primitives,
    fit_shape_basis,
    truncate_sdf,
)
from . import primitives as _primitives, shapes as _shapes
from .shapes import CategorySpec, Shape, SymmetrySpec, get_category

log = logging.getLogger(__name__)

NEAR_BAND = 0.05
N_OBSERVED = 1024


def sample_sdf(spec: CategorySpec, params: dict, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """``n`` SDF samples: half within ``NEAR_BAND`` of the surface, half uniform in the unit box."""
    shape = spec.shape(params)
    return sample_shape_sdf(shape, n, seed)


def sample_shape_sdf(shape: Shape, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    n_near = n // 2
    near_x, near_s = [], []
    got = 0
    while got < n_near:
        X = rng.uniform(-0.5, 0.5, size=(max(4 * n_near, 1024), 3))
        s = shape.sdf(X)
        keep = np.abs(s) <= NEAR_BAND
        near_x.append(X[keep])
        near_s.append(s[keep])
        got += int(keep.sum())
    Xn = np.concatenate(near_x)[:n_near]
    Sn = np.concatenate(near_s)[:n_near]
    Xu = rng.uniform(-0.5, 0.5, size=(n - n_near, 3))
    Su = shape.sdf(Xu)
    return np.concatenate([Xn, Xu]), np.concatenate([Sn, Su])


def warm_start(reference: PrimitiveSet, x, s, t: float, oversample: int = 4) -> PrimitiveSet:
    """Seed a new instance's spheres from a reference fit, keeping index order.

    Candidate seeds are farthest-point samples of the new instance's
    truncated shell; each reference sphere claims a distinct candidate by
    minimum-cost matching, so indices keep their part meaning and every seed
    starts where the loss has a gradient.
    """
    x = np.asarray(x)
    shell = x[truncate_sdf(s, t) < 0]
    n_c = reference.n_primitives
    cand = shell[farthest_point_sampling(shell, min(len(shell), oversample * n_c))]
    if len(cand) < n_c:
        return reference
    cost = np.linalg.norm(reference.centers[:, None, :] - cand[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    centers = cand[cols[np.argsort(rows)]]
    return PrimitiveSet(centers, reference.radii.copy(), reference.category)


@dataclass
class CategoryModel:
    spec: CategorySpec
    instances: list
    basis: LinearShapeBasis
    fit_losses: list
    recon_chamfer: list
    params: list = field(default_factory=list)


    def to_dict(self) -> dict:
        return {
            "category": self.spec.name,
            "basis": self.basis.to_dict(),
            "instances": [ps.to_dict() for ps in self.instances],
            "fit_losses": [float(v) for v in self.fit_losses],
            "recon_chamfer": [float(v) for v in self.recon_chamfer],
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CategoryModel":
        return cls(
            get_category(d["category"]),
            [PrimitiveSet.from_dict(p) for p in d["instances"]],
            LinearShapeBasis.from_dict(d["basis"]),
            list(d["fit_losses"]),
            list(d["recon_chamfer"]),
            list(d["params"]),
        )


def n_sdf_samples(n_c: int) -> int:
    return max(2000, 30 * n_c)


def build_category_model(
    spec: CategorySpec,
    n_instances: int,
    n_c: int,
    latent_dim: int,
    t: float = DEFAULT_TRUNCATION,
    seed: int = 0,
    fit_cfg: FitConfig | None = None,
    params_list: list | None = None,
) -> CategoryModel:
    """Fit spheres to every instance, align indices to instance 0, fit a basis."""
    if n_instances <= latent_dim:
        raise TooFewInstances(f"{n_instances} instances for a {latent_dim}-D latent space")
    rng = np.random.default_rng(seed)
    if params_list is None:
        params_list = [spec.sample_params(rng) for _ in range(n_instances)]
    n = n_sdf_samples(n_c)
    fitted, losses = [], []
    reference = None
    seen = {}
    for k, params in enumerate(params_list):
        key = tuple(sorted(params.items()))
        if key in seen:
            # repeated parameters give the same shape: reuse its fit
            fitted.append(fitted[seen[key]])
            losses.append(losses[seen[key]])
            continue
        seen[key] = k
        x, s = sample_sdf(spec, params, n, seed=(seed, k))
        init = None if reference is None else warm_start(reference, x, s, t)
        res = fit_primitives(x, s, n_c, t, fit_cfg, init=init, category=spec.name)
        if reference is None:
            reference = res.primitives
        fitted.append(res.primitives)
        losses.append(res.loss)
        log.info("%s instance %d: fit loss %.5f", spec.name, k, res.loss)
    aligned, _, _ = align_primitive_indices(fitted, reference)
    basis = fit_shape_basis(aligned, latent_dim, category=spec.name)
    recon = []
    for ps in aligned:
        back = decode(basis, basis.project(ps))
        recon.append(chamfer(ps.centers, back.centers))
    return CategoryModel(spec, aligned, basis, losses, recon, list(params_list))



def _fit_code_digest() -> str:
    h = hashlib.sha1()
    for obj in (_primitives, _shapes, sample_shape_sdf, warm_start, n_sdf_samples, build_category_model):
        h.update(inspect.getsource(obj).encode())
    return h.hexdigest()[:12]


def cached_category_model(spec: CategorySpec, n_instances: int, n_c: int, latent_dim: int,
                          seed: int = 0, cache_dir=None) -> CategoryModel:
    """``build_category_model`` memoized on disk, keyed by configuration and fitting code."""
    if cache_dir is None:
        return build_category_model(spec, n_instances, n_c, latent_dim, seed=seed)
    key = f"{spec.name}_i{n_instances}_c{n_c}_d{latent_dim}_s{seed}_{_fit_code_digest()}"
    path = os.path.join(cache_dir, key + ".json")
    if os.path.exists(path):
        with open(path) as f:
            return CategoryModel.from_dict(json.load(f))
    model = build_category_model(spec, n_instances, n_c, latent_dim, seed=seed)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + f".{os.getpid()}.tmp"
    with open(tmp, "w") as f:
        json.dump(model.to_dict(), f)
    os.replace(tmp, path)
    return model


# --- scenes -----------------------------------------------------------------

SKIN_FACTOR = 0.6
SKIN_MAX = 0.08  # below the dust radius, so every rendered point keeps a label
N_SURFACE = 20_000
DIAMETER_RANGE = (0.1, 0.5)
Z_TRUNCATION = 3.0


@dataclass(frozen=True)
class CameraConfig:
    width: int = 160
    height: int = 120
    f: float = 200.0
    distance_range: tuple = (2.0, 4.0)

    @property
    def principal_point(self):
        return 0.5 * self.width, 0.5 * self.height


@dataclass(frozen=True)
class CorruptionConfig:
    sigma: float = 0.0
    outlier_frac: float = 0.0
    label_noise: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 <= self.outlier_frac < 1:
            raise ValueError("outlier_frac must be in [0, 1)")
        if not 0 <= self.label_noise <= 1:
            raise ValueError("label_noise must be in [0, 1]")

    def to_dict(self):
        return {"sigma": self.sigma, "outlier_frac": self.outlier_frac, "label_noise": self.label_noise}


def skin_radii(ps: PrimitiveSet, factor: float = SKIN_FACTOR, cap: float = SKIN_MAX) -> np.ndarray:
    """Radii used for the rendered surface: at least ``factor`` times the median center spacing.

    The spacing-derived floor is capped at ``cap``; fitted radii are kept as they are.

    Fitted spheres sit on the true surface with small radii and leave gaps
    between them; the inflated skin closes those gaps so the union behaves
    as an opaque surface under the z-buffer.
    """
    c = ps.centers
    if len(c) < 2:
        return ps.radii.copy()
    d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    rho = min(cap, factor * float(np.median(d.min(axis=1))))
    return np.maximum(ps.radii, rho)


def union_surface_points(centers, radii, n: int, seed) -> np.ndarray:
    """``n`` points drawn uniformly from the boundary of a union of spheres."""
    centers = np.asarray(centers, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    rng = np.random.default_rng(seed)
    area = radii ** 2
    if area.sum() <= 0:
        raise ValueError("all radii are zero")
    p = area / area.sum()
    out, got = [], 0
    while got < n:
        k = max(2 * n, 1024)
        idx = rng.choice(len(centers), size=k, p=p)
        u = rng.standard_normal((k, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        X = centers[idx] + radii[idx, None] * u
        d2 = (
            np.einsum("nj,nj->n", X, X)[:, None]
            - 2.0 * X @ centers.T
            + np.einsum("kj,kj->k", centers, centers)[None, :]
        )
        inside = d2 < (radii[None, :] - 1e-9) ** 2
        inside[np.arange(k), idx] = False
        keep = ~inside.any(axis=1)
        out.append(X[keep])
        got += int(keep.sum())
    return np.concatenate(out)[:n]


def look_at_camera(target, rng, cam: CameraConfig, diameter: float) -> Sim3Transform:
    """Camera-to-world pose looking at ``target`` from a random direction and roll.

    The camera frame has x right, y down and z along the viewing direction.
    """
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    dist = rng.uniform(*cam.distance_range) * diameter
    pos = np.asarray(target, float) + dist * d
    fwd = -d
    helper = np.eye(3)[np.argmin(np.abs(fwd))]
    x = np.cross(helper, fwd)
    x /= np.linalg.norm(x)
    y = np.cross(fwd, x)
    roll = rng.uniform(0.0, 2 * np.pi)
    cr, sr = np.cos(roll), np.sin(roll)
    x, y = cr * x + sr * y, -sr * x + cr * y
    return Sim3Transform(1.0, np.stack([x, y, fwd], axis=1), pos)


def visible_indices(cloud, camera_pose: Sim3Transform, cam: CameraConfig = CameraConfig(), near: float = 1e-6,
                    splat: int = 1, depth_tol: float = 3.0) -> np.ndarray:
    """Indices of points that win their pixel in a splatted z-buffer, sorted ascending.

    Every point writes its depth into a ``(2 splat + 1)``-pixel square so sparse
    samples still occlude what lies behind them. A point survives when it is
    within ``depth_tol`` pixel footprints (``z / f``) of the buffer depth and
    is the nearest point inside its own pixel.
    """
    X = camera_pose.inverse().apply(np.asarray(cloud, dtype=np.float64).reshape(-1, 3))
    z = X[:, 2]
    front = np.flatnonzero(z > near)
    if front.size == 0:
        raise EmptyView("no point in front of the camera")
    cx, cy = cam.principal_point
    u = np.floor(cam.f * X[front, 0] / z[front] + cx).astype(np.int64)
    v = np.floor(cam.f * X[front, 1] / z[front] + cy).astype(np.int64)
    inb = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    front, u, v = front[inb], u[inb], v[inb]
    if front.size == 0:
        raise EmptyView("no point projects into the image")
    zf = z[front]
    zbuf = np.full((cam.height, cam.width), np.inf)
    for dv in range(-splat, splat + 1):
        for du in range(-splat, splat + 1):
            uu, vv = u + du, v + dv
            ok = (uu >= 0) & (uu < cam.width) & (vv >= 0) & (vv < cam.height)
            np.minimum.at(zbuf, (vv[ok], uu[ok]), zf[ok])
    keep = zf <= zbuf[v, u] + depth_tol * zf / cam.f
    front, u, v, zf = front[keep], u[keep], v[keep], zf[keep]
    pix = v * cam.width + u
    order = np.lexsort((front, zf, pix))
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix[order][1:] != pix[order][:-1]
    return np.sort(front[order][first])


def partial_view(cloud, camera_pose: Sim3Transform, cam: CameraConfig = CameraConfig()) -> np.ndarray:
    """Points nearest to the camera in each pixel (single-view depth observation)."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    return cloud[visible_indices(cloud, camera_pose, cam)]


def outlier_count(n: int, frac: float) -> int:
    """Number of replaced points: ``frac * n`` rounded half up."""
    return int(np.floor(frac * n + 0.5))


def corrupt(cloud, sigma: float, outlier_frac: float, seed, diameter: float | None = None):
    """Gaussian jitter of ``sigma * diameter`` per axis plus uniform outliers.

    Outliers replace ``outlier_count(n, outlier_frac)`` distinct points with
    uniform draws in the cloud's bounding box inflated 1.5x about its center.
    ``diameter`` defaults to the bounding-box diagonal. Returns
    ``(points, outlier_mask)``.
    """
    if sigma < 0 or not 0 <= outlier_frac < 1:
        raise ValueError("need sigma >= 0 and 0 <= outlier_frac < 1")
    X = np.array(cloud, dtype=np.float64).reshape(-1, 3)
    n = len(X)
    lo, hi = X.min(axis=0), X.max(axis=0)
    if diameter is None:
        diameter = float(np.linalg.norm(hi - lo))
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    if sigma > 0:
        X = X + rng.normal(scale=sigma * diameter, size=X.shape)
    k = outlier_count(n, outlier_frac)
    if k:
        idx = rng.choice(n, size=k, replace=False)
        mid, half = 0.5 * (lo + hi), 0.75 * (hi - lo)
        X[idx] = rng.uniform(mid - half, mid + half, size=(k, 3))
        mask[idx] = True
    return X, mask


@dataclass
class SceneInstance:
    category: str
    gt_z: np.ndarray
    gt_pose: Sim3Transform
    camera_pose: Sim3Transform
    full_cloud: np.ndarray
    partial_cloud: np.ndarray
    observed: LabeledPointCloud
    diameter: float
    symmetry: SymmetrySpec
    noise: dict = field(default_factory=dict)
    outlier_mask: np.ndarray | None = None
    seed: object = None

    @property
    def labels(self) -> np.ndarray:
        return self.observed.labels

    def gt_dict(self) -> dict:
        d = {"category": self.category, "z": [float(v) for v in self.gt_z]}
        d.update(self.gt_pose.to_dict())
        d["symmetry"] = self.symmetry.to_dict()
        d["diameter"] = self.diameter
        d["camera"] = self.camera_pose.to_dict()
        d["noise"] = dict(self.noise)
        return d


def _spawn(seed, n):
    entropy = list(seed) if isinstance(seed, (tuple, list)) else seed
    return np.random.SeedSequence(entropy).spawn(n)


def synth_scene(
    basis: LinearShapeBasis,
    spec: CategorySpec,
    seed,
    cam: CameraConfig = CameraConfig(),
    corrupt_cfg: CorruptionConfig = CorruptionConfig(),
    n_points: int = N_OBSERVED,
    n_surface: int = N_SURFACE,
    gt_z=None,
) -> SceneInstance:
    """One posed, partially observed, optionally corrupted and oracle-labeled instance."""
    s_shape, s_surf, s_pose, s_pick, s_noise, s_label = _spawn(seed, 6)
    rng = np.random.default_rng(s_shape)
    if gt_z is None:
        gt_z = np.clip(rng.standard_normal(basis.latent_dim), -Z_TRUNCATION, Z_TRUNCATION)
    gt_z = basis.check_code(gt_z)
    ps = decode(basis, gt_z)
    canon = union_surface_points(ps.centers, skin_radii(ps), n_surface, s_surf)

    prng = np.random.default_rng(s_pose)
    diameter = float(prng.uniform(*DIAMETER_RANGE))
    extent = np.linalg.norm(canon.max(axis=0) - canon.min(axis=0))
    R = random_rotation(prng)
    t = prng.uniform(-0.5, 0.5, size=3)
    gt_pose = Sim3Transform(diameter / extent, R, t)
    full = gt_pose.apply(canon)
    camera_pose = look_at_camera(t, prng, cam, diameter)

    vis = full[visible_indices(full, camera_pose, cam)]
    pick = np.random.default_rng(s_pick).choice(len(vis), size=n_points, replace=len(vis) < n_points)
    partial = vis[pick]
    noisy, mask = corrupt(partial, corrupt_cfg.sigma, corrupt_cfg.outlier_frac, s_noise, diameter)
    noise = LabelNoise(corrupt_cfg.label_noise, s_label)
    observed = oracle_label_observation(noisy, gt_pose, ps, noise)
    return SceneInstance(
        spec.name, gt_z, gt_pose, camera_pose, full, partial, observed, diameter,
        spec.symmetry, corrupt_cfg.to_dict(), mask, seed,
    )


def synth_scenes(basis, spec, n: int, seed: int = 0, cam=CameraConfig(), corrupt_cfg=CorruptionConfig(), max_redraws: int = 10):
    """``n`` scenes with per-scene seeds ``(seed, i)``; empty views are redrawn."""
    scenes = []
    for i in range(n):
        for attempt in range(max_redraws):
            sub = (seed, i) if attempt == 0 else (seed, i, attempt)
            try:
                scenes.append(synth_scene(basis, spec, sub, cam, corrupt_cfg))
                break
            except EmptyView:
                continue
        else:
            raise EmptyView(f"scene {i}: no visible points after {max_redraws} draws")
    return scenes


# --- shape ambiguity --------------------------------------------------------

@dataclass
class AmbiguityFixture:
    """A partial lathe view with two constructed (z, pose) interpretations.

    ``basis`` is one-dimensional. Its direction moves every observed primitive
    by the similarity ``warp`` and leaves the occluded ones in place, so
    ``(0, gt_pose)`` and ``(1, gt_pose ∘ warp⁻¹)`` place the observed centers
    identically while describing different complete shapes.
    """

    scene: SceneInstance
    basis: LinearShapeBasis
    warp: Sim3Transform
    visible_labels: np.ndarray
    interpretations: list

    @property
    def occluded_labels(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.basis.n_primitives), self.visible_labels)


def _side_camera(target, axis, diameter, dist: float = 3.0) -> Sim3Transform:
    """Camera looking at ``target`` perpendicular to the world-space symmetry ``axis``."""
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    helper = np.eye(3)[np.argmin(np.abs(axis))]
    d = np.cross(axis, helper)
    d /= np.linalg.norm(d)
    fwd = -d
    y = -axis
    x = np.cross(y, fwd)
    return Sim3Transform(1.0, np.stack([x, y, fwd], axis=1), np.asarray(target, float) + dist * diameter * d)


def ambiguity_fixture(basis: LinearShapeBasis, spec: CategorySpec, seed=0, scale: float = 1.2,
                      cam: CameraConfig = CameraConfig()) -> AmbiguityFixture:
    """Mean lathe shape seen from the side, with a warp that only the hidden half can reveal."""
    if not spec.symmetry.symmetric:
        raise ValueError("the ambiguity fixture needs a symmetric (lathe) category")
    s_surf, s_pose, s_pick = _spawn(seed, 3)
    ps = decode(basis, np.zeros(basis.latent_dim))
    canon = union_surface_points(ps.centers, skin_radii(ps), N_SURFACE, s_surf)
    prng = np.random.default_rng(s_pose)
    diameter = float(np.mean(DIAMETER_RANGE))
    extent = np.linalg.norm(canon.max(axis=0) - canon.min(axis=0))
    gt_pose = Sim3Transform(diameter / extent, random_rotation(prng), prng.uniform(-0.5, 0.5, 3))
    full = gt_pose.apply(canon)
    camera_pose = _side_camera(gt_pose.t, gt_pose.R @ np.asarray(spec.symmetry.axis, float), diameter)
    vis = full[visible_indices(full, camera_pose, cam)]
    pick = np.random.default_rng(s_pick).choice(len(vis), size=N_OBSERVED, replace=len(vis) < N_OBSERVED)
    partial = vis[pick]
    observed = oracle_label_observation(partial, gt_pose, ps)
    scene = SceneInstance(spec.name, np.zeros(basis.latent_dim), gt_pose, camera_pose, full, partial,
                          observed, diameter, spec.symmetry, CorruptionConfig().to_dict(),
                          np.zeros(len(partial), dtype=bool), seed)

    visible = np.unique(observed.labels[observed.valid])
    warp = Sim3Transform(scale, np.eye(3), (1.0 - scale) * ps.centers[visible].mean(axis=0))
    step = np.zeros((ps.n_primitives, 4))
    step[visible, :3] = warp.apply(ps.centers[visible]) - ps.centers[visible]
    step[visible, 3] = (scale - 1.0) * ps.radii[visible]
    step = step.reshape(-1)
    norm = float(np.linalg.norm(step))
    fixture_basis = LinearShapeBasis(ps.packed(), (step / norm)[:, None], np.array([norm]),
                                     category=basis.category)
    interpretations = [(np.zeros(1), gt_pose), (np.ones(1), gt_pose.compose(warp.inverse()))]
    return AmbiguityFixture(scene, fixture_basis, warp, visible, interpretations)
