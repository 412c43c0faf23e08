import math

import numpy as np
import pytest

from _oracles import cone_member, sample_cone
from ellcone.cone import (INF, Cone, CounterSlot, LyapunovInfeasible, add_counter, cone_affine, cone_includes,
                          cone_join, counter_increment, lyapunov_base, min_stable_beta, plain, ratio_bound,
                          remove_counter, translation_invariant, widen, widen_partial)
from ellcone.ellipsoid import Ellipsoid


def E1(q, c):
    return Ellipsoid([[q]], [c])


def slot(beta=0.0, delta=(0.0,), lam=0.0, b=True):
    return CounterSlot(beta, np.array(delta, dtype=float), lam, b)


def random_cone(rng, n=2, k=1, lam_max=2):
    B = rng.normal(size=(n, n))
    Q = B @ B.T + 0.5 * np.eye(n)
    Q = 0.5 * (Q + Q.T)
    slots = tuple(CounterSlot(float(rng.random()), rng.normal(size=n), float(rng.integers(0, lam_max + 1)), True)
                  for _ in range(k))
    return Cone(Ellipsoid(Q, rng.normal(size=n)), slots)


# --- data types -------------------------------------------------------------

def test_slot_validation():
    with pytest.raises(ValueError):
        CounterSlot(-1.0, np.zeros(1), 0.0, True)
    with pytest.raises(ValueError):
        CounterSlot(float("nan"), np.zeros(1), 0.0, True)
    s = CounterSlot(INF, np.zeros(1), 0.0, True)
    assert math.isinf(s.beta)


def test_predicate_matches_oracle(rng):
    for _ in range(10):
        C = random_cone(rng, 2, 2)
        xs, ys = sample_cone(C, rng, 200)
        assert C.predicate(xs, ys).all()
        assert cone_member(C, xs, ys).all()
        far = xs + 100.0
        assert np.array_equal(C.predicate(far, ys), cone_member(C, far, ys))


# --- cone_includes ----------------------------------------------------------

def base_cone(beta=1.0, lam=0.0):
    return Cone(E1(1, 0), (slot(beta, (0.0,), lam),))


def test_includes_self_fast_path():
    C = base_cone()
    ok, w, cert = cone_includes(C, C)
    assert ok and len(cert) == 0


def test_includes_larger_slope():
    C = base_cone(1.0)
    D = base_cone(2.0)
    ok, _, cert = cone_includes(C, D)
    assert ok and cert.failures() == []
    # grid oracle over y in 0..10
    for y in range(11):
        assert (1 + 1.0 * y) <= (1 + 2.0 * y)


def test_includes_level_condition():
    C = base_cone(1.0, lam=0.0)
    D = base_cone(1.0, lam=1.0)
    ok, w, _ = cone_includes(C, D)
    assert not ok
    assert w is None or not all(w.level_checks)


def test_includes_shape_mismatch():
    with pytest.raises(ValueError):
        cone_includes(base_cone(), Cone(E1(1, 0), ()))


def test_includes_soundness_sampling(rng):
    certified = 0
    for _ in range(40):
        C = random_cone(rng, 2, 1)
        s = C.counters[0]
        D = Cone(Ellipsoid(C.base.Q / (1 + rng.random()) ** 2, C.base.c + 0.1 * rng.normal(size=2)),
                 (s.replace(beta=s.beta + rng.random(), lam=max(0.0, s.lam - rng.integers(0, 2))),))
        ok, _, cert = cone_includes(C, D)
        if ok:
            certified += 1
            assert cert.failures() == []
            xs, ys = sample_cone(C, rng, 1000)
            assert cone_member(D, xs, ys).all()
    assert certified >= 5


def test_includes_infinite_slope():
    C = base_cone(1.0)
    D = Cone(E1(0.5, 0), (slot(INF),))
    assert cone_includes(C, D)[0]


# --- counters ---------------------------------------------------------------

def test_counter_increment():
    C = base_cone(1.0, 0.0)
    assert counter_increment(C, 0, 1.0).counters[0].lam == 1.0
    C3 = base_cone(1.0, 3.0)
    assert counter_increment(C3, 0, -1.0).counters[0].lam == 2.0
    Cf = base_cone(1.0, 0.1)
    lam = counter_increment(Cf, 0, 0.2).counters[0].lam
    from fractions import Fraction
    assert Fraction(lam) <= Fraction(0.1) + Fraction(0.2)
    assert Fraction(0.1) + Fraction(0.2) - Fraction(lam) < Fraction(1, 2 ** 52)
    with pytest.raises(IndexError):
        counter_increment(C, 1, 1.0)


def test_add_counter():
    C = plain(Ellipsoid(np.eye(2), [1.0, 0.0]))
    D = add_counter(C, 0.0, known_exact=True)
    s = D.counters[0]
    assert (s.beta, s.lam, s.extrapolated) == (0.0, 0.0, False) and np.array_equal(s.delta, [0, 0])
    assert add_counter(C, 0.0, known_exact=False).counters[0].extrapolated
    xs = np.array([[1.0, 0.5], [3.0, 0.0]])
    assert np.array_equal(D.predicate(xs, np.zeros((2, 1))), C.base.contains(xs))


# --- affine -----------------------------------------------------------------

def test_affine_identity():
    C = base_cone(0.5)
    D, cert = cone_affine(C, np.eye(1), np.zeros(1))
    assert cone_includes(C, D)[0]


def test_affine_translation_example():
    C = Cone(E1(1, 0), (slot(0.0, (1.0,)),))
    D, _ = cone_affine(C, [[1.0]], [1.0])
    assert D.base.c[0] == 1.0 and D.counters[0].delta[0] == 1.0
    assert abs(D.base.Q[0, 0] - 1.0) < 1e-3


def test_affine_contraction_volume():
    C = Cone(E1(1, 0), (slot(0.0, (0.0,)),))
    D, _ = cone_affine(C, [[0.5]], [0.0])
    assert abs(D.base.Q[0, 0] - 4.0) < 0.05


def test_affine_sampling(rng):
    for _ in range(20):
        C = random_cone(rng, 2, 1)
        A = rng.normal(size=(2, 2))
        b = rng.normal(size=2)
        D, cert = cone_affine(C, A, b)
        assert cert.failures() == []
        xs, ys = sample_cone(C, rng, 1000)
        assert cone_member(D, xs @ A.T + b, ys).all()


def test_translation_invariant():
    C = Cone(E1(1, 0), (slot(0.0, (0.1,)),))
    ok, cert = translation_invariant(C, 0, [0.1])
    assert ok
    C2 = Cone(E1(1, 0), (slot(0.5, (0.0,)),))
    ok, cert = translation_invariant(C2, 0, [0.4])
    assert ok and cert.failures() == []
    assert not translation_invariant(C2, 0, [0.6])[0]


# --- remove_counter ---------------------------------------------------------

def test_remove_counter_example():
    C = Cone(E1(1, 0), (slot(1.0, (0.0,)),))
    D, cert = remove_counter(C, 0, (0, 2))
    assert D.k == 0
    # slices [-1, 1] and [-3, 3]; the result is about [-3, 3]
    assert abs(D.base.Q[0, 0] - 1 / 9) < 0.01
    assert cert.failures() == []


def test_remove_counter_exact_slice():
    C = Cone(Ellipsoid(np.eye(2), [1.0, 0.0]), (CounterSlot(0.0, np.zeros(2), 3.0, False),))
    D, _ = remove_counter(C, 0, (3, 3))
    assert D.k == 0 and D.base.same_as(C.base)


def test_remove_counter_errors():
    C = base_cone(1.0)
    with pytest.raises(ValueError):
        remove_counter(C, 0, (0, math.inf))
    with pytest.raises(ValueError):
        remove_counter(C, 0, (-1, 2))
    with pytest.raises(ValueError):
        remove_counter(Cone(E1(1, 0), (slot(INF),)), 0, (0, 2))


def test_remove_counter_sampling(rng):
    for _ in range(20):
        C = random_cone(rng, 2, 2, lam_max=0)
        D, cert = remove_counter(C, 0, (0, 10))
        assert cert.failures() == []
        xs, ys = sample_cone(C, rng, 1000)
        assert cone_member(D, xs, ys[:, 1:]).all()


# --- ratio and widening -----------------------------------------------------

def test_ratio_bound_examples():
    r, _ = ratio_bound(np.eye(2), np.eye(2))
    assert r == 1.0
    r, cert = ratio_bound(np.array([[1.0]]), np.array([[4.0]]))
    assert 2.0 <= r < 2.0 + 1e-6 and cert.failures() == []
    r, _ = ratio_bound(np.diag([1.0, 4.0]), np.diag([4.0, 1.0]))
    assert 2.0 <= r < 2.0 + 1e-6


def test_widen_partial_identity():
    C = base_cone(1.0)
    W, _ = widen_partial(C, C)
    assert W.base.same_as(C.base) and W.counters[0].beta >= 1.0


def test_widen_partial_barycenter():
    C = Cone(E1(1, 0), (slot(1.0, (0.0,)),))
    D = Cone(E1(1, 0), (slot(1.0, (2.0,)),))
    W, _ = widen_partial(C, D, check=False)
    s = W.counters[0]
    assert abs(s.delta[0] - 1.0) < 1e-12
    assert 2.0 <= s.beta < 2.0 + 1e-9


def test_widen_partial_exact_slots_untouched():
    C = Cone(E1(1, 0), (CounterSlot(0.0, np.zeros(1), 0.0, False),))
    W, _ = widen_partial(C, C)
    assert W.counters[0].same_as(C.counters[0])


def test_widen_example():
    C = Cone(E1(1, 0), (CounterSlot(0.0, np.zeros(1), 0.0, False),))
    D = Cone(E1(1, 1), (CounterSlot(0.0, np.zeros(1), 1.0, False),))
    W, cert = widen(C, D)
    s = W.counters[0]
    assert W.base.same_as(C.base)
    assert s.extrapolated and s.beta == 0.0 and s.delta[0] == 1.0 and s.lam == 0.0
    assert cone_includes(C, W)[0] and cone_includes(D, W)[0]


def test_widen_same_center():
    C = Cone(E1(1, 0), (CounterSlot(0.0, np.zeros(1), 0.0, False),))
    D = Cone(E1(0.25, 0), (CounterSlot(0.0, np.zeros(1), 1.0, False),))
    W, _ = widen(C, D)
    s = W.counters[0]
    assert s.delta[0] == 0.0
    # radius 2 at level 1: beta about r - 1 = 1
    assert 1.0 <= s.beta < 1.01
    assert cone_includes(D, W)[0]


def test_widen_containment_sampling(rng):
    for _ in range(20):
        C = random_cone(rng, 2, 1, lam_max=0)
        s = C.counters[0]
        D = Cone(Ellipsoid(C.base.Q * (0.5 + rng.random()), C.base.c + rng.normal(size=2)),
                 (s.replace(lam=1.0, beta=float(rng.random())),))
        W, cert = widen(C, D)
        assert cert.failures() == []
        assert cone_includes(C, W)[0] and cone_includes(D, W)[0]
        for X in (C, D):
            xs, ys = sample_cone(X, rng, 500)
            assert cone_member(W, xs, ys).all()


def test_widen_cap_goes_infinite():
    C = Cone(E1(1, 0), (slot(0.0),))
    D = Cone(E1(0.01, 3), (slot(0.0, lam=1.0),))
    W, _ = widen(C, D, cap=True)
    assert math.isinf(W.counters[0].beta) or cone_includes(D, W)[0]


def test_cone_join():
    a = Cone(E1(1, 0), (slot(0.5),))
    b = Cone(E1(1, 2), (slot(0.5),))
    J, cert = cone_join([a, b])
    assert cone_includes(a, J)[0] and cone_includes(b, J)[0]
    with pytest.raises(ValueError):
        cone_join([a, Cone(E1(1, 0), (slot(0.5, lam=1.0),))])


# --- Lyapunov ---------------------------------------------------------------

def test_lyapunov_half_identity():
    Q, eps, cert = lyapunov_base([0.5 * np.eye(2)])
    assert abs(eps - 0.75) < 2e-3
    assert cert.failures() == []
    assert np.allclose(Q / Q[0, 0], np.eye(2), atol=1e-6)


def test_lyapunov_rotation():
    R = 0.9 * np.array([[0.0, -1.0], [1.0, 0.0]])
    Q, eps, _ = lyapunov_base([R])
    assert abs(eps - 0.19) < 2e-3


def test_lyapunov_infeasible():
    with pytest.raises(LyapunovInfeasible):
        lyapunov_base([np.array([[0.0, 2.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [2.0, 0.0]])])


def test_lyapunov_rejects_identity():
    with pytest.raises(ValueError):
        lyapunov_base([np.eye(2)])


def test_lyapunov_certificate_condition(rng):
    As = [np.array([[0.6, 0.3], [0.0, 0.6]]), np.array([[0.6, 0.0], [0.3, 0.6]])]
    Q, eps, cert = lyapunov_base(As)
    assert cert.failures() == []
    for A in As:
        x = rng.normal(size=(500, 2))
        lhs = np.einsum("ij,jk,ik->i", x @ A.T, Q, x @ A.T)
        rhs = (1 - eps) * np.einsum("ij,jk,ik->i", x, Q, x)
        assert (lhs <= rhs * (1 + 1e-9)).all()


def test_min_stable_beta_examples():
    one = np.array([[1.0]])
    assert 0.0 <= min_stable_beta(one, [0.0], [[0.0]], [0.0], [0.0], 0.75) <= 1e-12
    assert 0.0 <= min_stable_beta(one, [2.0], [[0.5]], [1.0], [0.0], 0.75) <= 1e-12
    b0 = min_stable_beta(one, [0.0], [[0.5]], [0.0], [1.0], 0.75)
    assert 1.0 <= b0 <= 1.0 + 1e-6
    with pytest.raises(ValueError):
        min_stable_beta(one, [0.0], [[0.5]], [0.0], [1.0], 1.5)


def test_min_stable_beta_simulation():
    # x <- 0.5 x with cone |x - y| <= 1 + beta y, beta = 1.1, over 1000 steps
    beta = 1.1
    rng = np.random.default_rng(0)
    for x0 in rng.uniform(-1, 1, 50):
        x = x0
        for y in range(1, 1001):
            x = 0.5 * x
            assert abs(x - y) <= 1 + beta * y


def test_lyapunov_invariance_post_fixpoint():
    A = np.array([[0.5, 0.0], [0.0, 0.5]])
    b = np.array([1.0, 0.0])
    Q, eps, _ = lyapunov_base([A])
    c = np.array([2.0, 0.0])
    delta = np.zeros(2)
    b0 = min_stable_beta(Q, c, A, b, delta, eps)
    H = Cone(Ellipsoid(Q, c), (CounterSlot(b0 * 1.01 + 1e-3, delta, 0.0, True),))
    P, _ = cone_affine(H, A, b)
    P = counter_increment(P, 0, 1.0)
    assert cone_includes(P, H)[0]
