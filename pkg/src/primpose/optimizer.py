"""Latent shape optimization against the invariant descriptor of observed centers."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .descriptor import QuadrupleSample, _lookup, _pair_units, sample_quadruples, shape_descriptor
from .errors import TooFewLabels
from .io import atomic_write_text
from .labeling import MIN_LABELS, SemanticCenters
from .primitives import LinearShapeBasis

Z_NORM_FLOOR = 1e-9


@dataclass(frozen=True)
class RansacConfig:
    rounds: int = 16
    subset_fraction: float = 0.5
    trim_quantile: float = 0.7


@dataclass(frozen=True)
class OptimizerConfig:
    iterations: int = 100
    step: float = 0.02
    momentum: float = 0.9
    eta: float = 1e-4
    m: int = 10_000
    resample_per_iter: bool = False
    ransac: RansacConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if self.m < 1:
            raise ValueError("quadruple count must be >= 1")


@dataclass
class OptimizationTrace:
    objective: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    z_norm: list = field(default_factory=list)
    initial_objective: float = float("nan")
    best_iteration: int = -1
    z_hat: np.ndarray | None = None

    def __len__(self):
        return len(self.objective)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.objective))

    def write_csv(self, path) -> None:
        f = io.StringIO()
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "objective", "residual", "z_norm"])
        for i, (o, r, z) in enumerate(zip(self.objective, self.residual, self.z_norm)):
            w.writerow([i + 1, repr(o), repr(r), repr(z)])
        atomic_write_text(path, f.getvalue())


def _observed_table(obs: SemanticCenters) -> dict:
    return obs.as_map()


def objective(z, basis: LinearShapeBasis, obs: SemanticCenters, qs: QuadrupleSample, eta: float) -> float:
    """Descriptor distance between observed and decoded centers plus ``eta * ||z||``."""
    z = basis.check_code(z)
    obs_desc = shape_descriptor(_observed_table(obs), qs)
    f = shape_descriptor(basis.decode_centers(z), qs)
    return float(np.linalg.norm(f - obs_desc)) + eta * float(np.linalg.norm(z))


def _value_and_grad_fused(z, basis, obs_desc, qs, eta):
    # The VJP weights depend on the residual, so the descriptor geometry is
    # computed once and reused for the backward pass.
    Q = qs.quadruples
    table = _lookup(basis.decode_centers(z), np.unique(Q))
    u, nu = _pair_units(table, Q[:, 0], Q[:, 1], Q)
    v, nv = _pair_units(table, Q[:, 2], Q[:, 3], Q)
    theta = np.einsum("mj,mj->m", u, v)
    r = theta - obs_desc
    res = float(np.linalg.norm(r))
    zn = float(np.linalg.norm(z))
    grad = eta * z / max(zn, Z_NORM_FLOOR)
    if res > 0:
        w = r / res
        gu = (w / nu)[:, None] * (v - theta[:, None] * u)
        gv = (w / nv)[:, None] * (u - theta[:, None] * v)
        n = len(table)
        G = np.empty((n, 3))
        for j in range(3):
            G[:, j] = (
                np.bincount(Q[:, 0], gu[:, j], n)
                - np.bincount(Q[:, 1], gu[:, j], n)
                + np.bincount(Q[:, 2], gv[:, j], n)
                - np.bincount(Q[:, 3], gv[:, j], n)
            )
        grad = grad + np.einsum("lj,ljd->d", G, basis.center_jacobian)
    return res + eta * zn, res, grad


def objective_gradient(z, basis: LinearShapeBasis, obs: SemanticCenters, qs: QuadrupleSample, eta: float) -> np.ndarray:
    """Analytic gradient of :func:`objective` with respect to ``z``."""
    z = basis.check_code(z)
    obs_desc = shape_descriptor(_observed_table(obs), qs)
    return _value_and_grad_fused(z, basis, obs_desc, qs, eta)[2]


def _check_obs(obs: SemanticCenters) -> None:
    if len(obs.labels) < MIN_LABELS:
        raise TooFewLabels(f"{len(obs.labels)} observed labels; need {MIN_LABELS}")


def _run(basis, obs_table, labels, cfg: OptimizerConfig, qs: QuadrupleSample) -> OptimizationTrace:
    z = np.zeros(basis.latent_dim)
    vel = np.zeros_like(z)
    obs_desc = shape_descriptor(obs_table, qs)
    trace = OptimizationTrace()
    val, _, grad = _value_and_grad_fused(z, basis, obs_desc, qs, cfg.eta)
    trace.initial_objective = val
    best_val, best_z = np.inf, z
    for it in range(cfg.iterations):
        vel = cfg.momentum * vel - cfg.step * grad
        z = z + vel
        if cfg.resample_per_iter:
            qs = sample_quadruples(labels, cfg.m, (cfg.seed, it + 1))
            obs_desc = shape_descriptor(obs_table, qs)
        val, res, grad = _value_and_grad_fused(z, basis, obs_desc, qs, cfg.eta)
        trace.objective.append(val)
        trace.residual.append(res)
        trace.z_norm.append(float(np.linalg.norm(z)))
        if val < best_val:
            best_val, best_z = val, z.copy()
            trace.best_iteration = it
    trace.z_hat = best_z
    return trace


def optimize_shape(obs: SemanticCenters, basis: LinearShapeBasis, cfg: OptimizerConfig | None = None, qs: QuadrupleSample | None = None):
    """Momentum gradient descent on the latent code, starting from the mean shape.

    Returns ``(z_hat, trace)`` where ``z_hat`` is the best iterate seen.
    """
    cfg = cfg or OptimizerConfig()
    _check_obs(obs)
    if qs is None:
        qs = sample_quadruples(obs.labels, cfg.m, cfg.seed)
    trace = _run(basis, _observed_table(obs), obs.labels, cfg, qs)
    return trace.z_hat, trace


def trimmed_abs_residual(z, basis, obs_desc, qs, trim_quantile: float) -> float:
    """Mean of the smallest ``trim_quantile`` fraction of absolute descriptor residuals."""
    f = shape_descriptor(basis.decode_centers(z), qs)
    a = np.sort(np.abs(f - obs_desc))
    k = max(1, int(np.ceil(trim_quantile * len(a))))
    return float(a[:k].mean())


def optimize_shape_ransac(obs: SemanticCenters, basis: LinearShapeBasis, cfg: OptimizerConfig):
    """Consensus variant: optimize on random quadruple subsets, keep the best by trimmed residual.

    Candidates are the plain full-sample run, one run per round on an
    independently seeded subset of ``subset_fraction * m`` quadruples, and a
    refinement of the best round restricted to its consensus (the quadruples
    whose residual falls under the trim quantile). All candidates are scored
    by the trimmed mean absolute residual over the full sample; ties keep the
    earlier candidate, so the plain run wins unless something beats it.
    """
    if cfg.ransac is None:
        raise ValueError("config has no RANSAC settings")
    rc = cfg.ransac
    _check_obs(obs)
    table = _observed_table(obs)
    full = sample_quadruples(obs.labels, cfg.m, cfg.seed)
    obs_desc = shape_descriptor(table, full)

    def score(z):
        return trimmed_abs_residual(z, basis, obs_desc, full, rc.trim_quantile)

    plain = _run(basis, table, obs.labels, cfg, full)
    best_trace, best_score = plain, score(plain.z_hat)
    size = max(1, int(np.ceil(rc.subset_fraction * cfg.m)))
    if rc.rounds == 1 and size >= cfg.m:
        return best_trace.z_hat, best_trace

    round_best_trace, round_best_score = None, np.inf
    for r in range(rc.rounds):
        sub = sample_quadruples(obs.labels, size, (cfg.seed, 1, r))
        tr = _run(basis, table, obs.labels, cfg, sub)
        sc = score(tr.z_hat)
        if sc < round_best_score:
            round_best_trace, round_best_score = tr, sc
        if sc < best_score:
            best_trace, best_score = tr, sc

    # Refit on the consensus set of the best round.
    f = shape_descriptor(basis.decode_centers(round_best_trace.z_hat), full)
    a = np.abs(f - obs_desc)
    inliers = np.flatnonzero(a <= np.quantile(a, rc.trim_quantile))
    if len(inliers):
        tr = _run(basis, table, obs.labels, cfg, full.subset(inliers))
        sc = score(tr.z_hat)
        if sc < best_score:
            best_trace, best_score = tr, sc
    return best_trace.z_hat, best_trace
