import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from primpose.errors import DegenerateConfiguration
from primpose.geometry import (
    Sim3Transform,
    axis_angle_matrix,
    random_rotation,
    rotation_angle_deg,
    sim3_apply,
    umeyama_align,
)


def random_sim3(rng, s_lo=0.1, s_hi=10.0, t_max=10.0):
    return Sim3Transform(rng.uniform(s_lo, s_hi), random_rotation(rng), rng.uniform(-t_max, t_max, 3))


seeds = st.integers(0, 2**32 - 1)


def test_identity_apply(rng):
    C = rng.normal(size=(20, 3))
    assert np.array_equal(sim3_apply(Sim3Transform.identity(), C), C)


def test_apply_arithmetic():
    T = Sim3Transform(2.0, np.eye(3), [1, 0, 0])
    assert np.allclose(sim3_apply(T, [[1, 1, 1]]), [[3, 2, 2]])


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_inverse_roundtrip(seed):
    rng = np.random.default_rng(seed)
    T = random_sim3(rng)
    C = rng.normal(size=(30, 3))
    assert np.allclose(sim3_apply(T.inverse(), sim3_apply(T, C)), C, atol=1e-9)
    I = T @ T.inverse()
    assert abs(I.s - 1) <= 1e-9
    assert np.allclose(I.R, np.eye(3), atol=1e-9)
    assert np.allclose(I.t, 0, atol=1e-9)


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_random_rotation_valid(seed):
    R = random_rotation(np.random.default_rng(seed))
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) <= 1e-9


def test_compose_order(rng):
    A, B = random_sim3(rng), random_sim3(rng)
    X = rng.normal(size=(5, 3))
    assert np.allclose((A @ B).apply(X), A.apply(B.apply(X)))


def test_canonical_translation_roundtrip(rng):
    T = random_sim3(rng)
    tc = T.canonical_translation()
    X = rng.normal(size=(6, 3))
    # x_world = s R (x + t_c)
    assert np.allclose(T.s * (X + tc) @ T.R.T, T.apply(X))
    T2 = Sim3Transform.from_canonical_translation(T.s, T.R, tc)
    assert np.allclose(T2.t, T.t)


def test_dict_roundtrip(rng):
    T = random_sim3(rng)
    T2 = Sim3Transform.from_dict(T.to_dict())
    assert T2.s == T.s and np.array_equal(T2.R, T.R) and np.array_equal(T2.t, T.t)


def test_invalid_scale():
    with pytest.raises(ValueError):
        Sim3Transform(0.0, np.eye(3), np.zeros(3))


def test_umeyama_identity(rng):
    X = rng.normal(size=(4, 3))
    T, res = umeyama_align(X, X)
    assert abs(T.s - 1) <= 1e-10
    assert np.allclose(T.R, np.eye(3), atol=1e-10)
    assert np.allclose(T.t, 0, atol=1e-10)
    assert res <= 1e-20


@given(seeds)
@settings(max_examples=100, deadline=None)
def test_umeyama_recovers_constructed(seed):
    rng = np.random.default_rng(seed)
    T = random_sim3(rng)
    X = rng.normal(size=(10, 3))
    E, _ = umeyama_align(X, T.apply(X))
    assert rotation_angle_deg(E.R, T.R) <= 1e-7
    assert abs(E.s - T.s) / T.s <= 1e-10
    assert np.linalg.norm(E.t - T.t) <= 1e-9


def test_umeyama_collinear_rejected():
    X = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfiguration):
        umeyama_align(X, X + 1.0)


def test_umeyama_coincident_rejected():
    X = np.ones((5, 3))
    with pytest.raises(DegenerateConfiguration):
        umeyama_align(X, np.random.default_rng(0).normal(size=(5, 3)))


def test_umeyama_too_few():
    with pytest.raises(DegenerateConfiguration):
        umeyama_align(np.eye(3)[:2], np.eye(3)[:2])


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_umeyama_left_invariance(seed):
    rng = np.random.default_rng(seed)
    T, T0 = random_sim3(rng), random_sim3(rng)
    X = rng.normal(size=(12, 3))
    E, _ = umeyama_align(X, T.apply(T0.apply(X)))
    G = T @ T0
    assert abs(E.s - G.s) <= 1e-8 * G.s
    assert np.allclose(E.R, G.R, atol=1e-8)
    assert np.allclose(E.t, G.t, atol=1e-8 * max(1.0, np.abs(G.t).max()))


def _brute_weighted(X, Y, w):
    # Independent solve: minimize the weighted cost over (s, R, t) with a
    # general-purpose optimizer from a good start, then compare objective values.
    from scipy.optimize import minimize
    from scipy.spatial.transform import Rotation

    def cost(p):
        R = Rotation.from_rotvec(p[:3]).as_matrix()
        r = Y - np.exp(p[3]) * X @ R.T - p[4:]
        return float(w @ (r * r).sum(axis=1)) / w.sum()

    best = None
    for rv in np.random.default_rng(1).normal(size=(8, 3)):
        res = minimize(cost, np.r_[rv, 0.0, Y.mean(0)], method="BFGS", options={"gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    return best.fun


@given(seeds, st.lists(st.integers(1, 4), min_size=5, max_size=6))
@settings(max_examples=20, deadline=None)
def test_weighted_equals_repetition(seed, reps):
    rng = np.random.default_rng(seed)
    n = len(reps)
    X = rng.normal(size=(n, 3))
    Y = random_sim3(rng, 0.5, 2.0, 1.0).apply(X) + 0.1 * rng.normal(size=(n, 3))
    w = np.asarray(reps, float)
    Tw, rw = umeyama_align(X, Y, weights=w)
    Tr, rr = umeyama_align(np.repeat(X, reps, axis=0), np.repeat(Y, reps, axis=0))
    assert abs(Tw.s - Tr.s) <= 1e-10
    assert np.allclose(Tw.R, Tr.R, atol=1e-10)
    assert np.allclose(Tw.t, Tr.t, atol=1e-10)
    assert abs(rw - rr) <= 1e-12
    # the closed form is the global minimizer of the weighted cost
    assert rw <= _brute_weighted(X, Y, w) + 1e-9


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_reflection_guard_planar(seed):
    rng = np.random.default_rng(seed)
    X = np.c_[rng.normal(size=(8, 2)), np.zeros(8)]
    # mirror image target: best proper rotation must still have det +1
    Y = X * np.array([1.0, 1.0, -1.0]) @ random_rotation(rng).T
    Y[:, 2] += 0.01 * rng.normal(size=8)
    T, _ = umeyama_align(X, Y)
    assert abs(np.linalg.det(T.R) - 1) <= 1e-9


def test_axis_angle_matrix():
    R = axis_angle_matrix([0, 0, 1], np.pi / 2)
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0])
    assert abs(rotation_angle_deg(np.eye(3), axis_angle_matrix([1, 2, 3], np.radians(10))) - 10) < 1e-9
