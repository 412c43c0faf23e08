import numpy as np
import pytest

from ellcone.config import DEFAULT
from ellcone.ellipsoid import (Ellipsoid, affine_image, corner, homogenize, includes, inflate, join, pack_product,
                               pack_project, verify_affine_image)
from ellcone.interval import check_lmi, IntervalArray


def E1(q, c):
    return Ellipsoid([[q]], [c])


def halfwidth(e):
    return 1.0 / np.sqrt(e.Q[0, 0])


def random_ellipsoid(rng, n, scale=1.0):
    B = rng.normal(size=(n, n))
    Q = B @ B.T + 0.3 * np.eye(n)
    Q = 0.5 * (Q + Q.T) / scale ** 2
    return Ellipsoid(Q, rng.normal(size=n))


# --- homogenize -------------------------------------------------------------

def test_homogenize_examples():
    assert np.array_equal(homogenize(Ellipsoid(np.eye(2), [0, 0])), np.diag([1.0, 1.0, -1.0]))
    assert np.array_equal(homogenize(E1(1, 2)), [[1, -2], [-2, 3]])
    assert np.array_equal(homogenize(Ellipsoid(np.diag([4.0, 1.0]), [1, 0])), [[4, 0, -4], [0, 1, 0], [-4, 0, 3]])
    assert np.array_equal(corner(2), np.diag([0.0, 0.0, 1.0]))


def test_ellipsoid_validation():
    with pytest.raises(ValueError):
        Ellipsoid(np.array([[1.0, 2.0], [2.0, 1.0]]), [0, 0])
    with pytest.raises(ValueError):
        Ellipsoid(np.array([[1.0, 0.5], [0.0, 1.0]]), [0, 0])
    with pytest.raises(ValueError):
        Ellipsoid(np.eye(2), [0, 0, 0])


# --- includes ---------------------------------------------------------------

def test_includes_one_dimensional_witness():
    # oracle: max over x in [-1, 1] of x^2/4 - 1 is -3/4, attained with lambda = 1/4
    ok, w, cert = includes(E1(1, 0), E1(0.25, 0))
    assert ok
    assert abs(w.lam - 0.25) < 1e-4
    assert abs(w.beta + 0.75) < 1e-4
    assert cert.failures() == []


def test_includes_reflexive_after_inflation():
    e = Ellipsoid(np.array([[2.0, 0.3], [0.3, 1.0]]), [0.5, -1.0])
    ok, _, _ = includes(e, e)
    if not ok:
        assert includes(e, inflate(e, 1.0 + 1e-6))[0]


def test_includes_rejects():
    ok, w, cert = includes(E1(0.25, 0), E1(1, 0))
    assert not ok
    assert E1(0.25, 0).contains([2.0])[0] and not E1(1, 0).contains([2.0])[0]


def test_includes_dimension_mismatch():
    with pytest.raises(ValueError):
        includes(E1(1, 0), Ellipsoid(np.eye(2), [0, 0]))


def test_includes_certificate_replays(rng):
    for _ in range(20):
        e = random_ellipsoid(rng, 3)
        big = inflate(e, 1.5)
        ok, _, cert = includes(e, big)
        assert ok and cert.failures() == []


def test_includes_preorder_composed_witness(rng):
    # the witness is the optimum (on the boundary); the certificate holds the strict multipliers
    for _ in range(50):
        n = int(rng.integers(1, 4))
        a = random_ellipsoid(rng, n)
        b = inflate(a, 1.0 + rng.random())
        c = inflate(b, 1.0 + rng.random())
        okab, wab, cab = includes(a, b)
        okbc, wbc, cbc = includes(b, c)
        assert okab and okbc
        assert wab.beta <= 0 and wab.lam >= 0
        beta_ab, lam_ab, _ = cab.steps[-1].multipliers
        beta_bc, lam_bc, _ = cbc.steps[-1].multipliers
        # beta_bc E + lam_bc F_b - F_c > 0 and beta_ab E + lam_ab F_a - F_b > 0 compose
        lam = lam_ab * lam_bc
        beta = beta_bc + lam_bc * beta_ab
        assert check_lmi([corner(n), homogenize(a), homogenize(c)], [beta, lam, -1.0])
        assert beta <= 0 and lam >= 0


def test_inflate_monotone(rng):
    for _ in range(20):
        e = random_ellipsoid(rng, 2)
        f1 = 1.0 + rng.random()
        f2 = f1 * (1.01 + rng.random())
        assert includes(inflate(e, f1), inflate(e, f2))[0]


def test_inflate_examples():
    e = E1(1, 0)
    assert inflate(e, 1.0) is e
    assert inflate(e, 2.0).Q[0, 0] == 0.25
    r = inflate(Ellipsoid(np.diag([4.0, 9.0]), [1, 2]), 3.0)
    assert np.allclose(r.Q, np.diag([4 / 9, 1.0])) and np.array_equal(r.c, [1, 2])
    with pytest.raises(ValueError):
        inflate(e, 0.5)


# --- join -------------------------------------------------------------------

def test_join_one_dimensional_optimum():
    # [-1, 1] and [1, 3]: the smallest enclosing interval is [-1, 3]
    out, _, cert = join([E1(1, 0), E1(1, 2)])
    assert abs(out.c[0] - 1.0) < 0.02
    assert abs(halfwidth(out) - 2.0) / 2.0 < 0.02
    assert cert.failures() == []
    for e in (E1(1, 0), E1(1, 2)):
        assert includes(e, out)[0]


def test_join_singleton():
    e = Ellipsoid(np.array([[2.0, 0.5], [0.5, 1.0]]), [1.0, 0.0])
    out, _, _ = join([e])
    assert includes(e, out)[0]
    # padding factor at most 1 + 1e-4: Q shrinks by at most (1 + 1e-4)^2
    ratio = np.linalg.eigvals(np.linalg.solve(out.Q, e.Q)).real
    assert ratio.max() <= (1 + 1e-4) ** 2 + 1e-9


def test_join_idempotent():
    e = Ellipsoid(np.eye(2), [0, 0])
    out, _, _ = join([e, e])
    assert np.allclose(out.Q, np.eye(2), atol=1e-3) and np.allclose(out.c, 0, atol=1e-3)


def test_join_sampling(rng):
    for _ in range(20):
        n = int(rng.integers(1, 4))
        es = [random_ellipsoid(rng, n) for _ in range(int(rng.integers(2, 4)))]
        out, w, cert = join(es)
        assert all(t >= 0 for t in w.taus)
        assert cert.failures() == []
        for e in es:
            assert out.contains(e.sample(rng, 1000)).all()


def test_join_tiny_inputs():
    a = Ellipsoid.ball([0.0, 0.0], 1e-6)
    b = Ellipsoid.ball([1.0, 0.0], 1e-6)
    out, _, _ = join([a, b])
    assert out.contains(np.array([[0.0, 0.0], [1.0, 0.0]])).all()


# --- affine image -----------------------------------------------------------

def test_affine_rotation():
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    out, cert = affine_image(Ellipsoid(np.eye(2), [0, 0]), R, [0, 0])
    assert np.allclose(out.Q, np.eye(2), atol=1e-3)
    assert np.allclose(out.c, 0)
    assert cert.failures() == []


def test_affine_doubling():
    out, _ = affine_image(E1(1, 0), [[2.0]], [0.0])
    assert abs(out.Q[0, 0] - 0.25) < 1e-3 and out.c[0] == 0


def test_affine_singular_keeps_eps_ball():
    eps = 1e-4
    out, _ = affine_image(E1(1, 0), [[0.0]], [3.0], eps)
    # the ball of radius sqrt(eps) around b is inside the result
    r = np.sqrt(eps)
    assert out.contains(np.array([[3.0 - r], [3.0 + r]])).all()


def test_affine_sampling(rng):
    for _ in range(20):
        n = int(rng.integers(1, 4))
        e = random_ellipsoid(rng, n)
        A = rng.normal(size=(n, n))
        b = rng.normal(size=n)
        out, cert = affine_image(e, A, b)
        assert cert.failures() == []
        pts = e.sample(rng, 1000) @ A.T + b
        assert out.contains(pts).all()


def test_verify_affine_examples():
    e = Ellipsoid(np.eye(2), [0.3, 0.1])
    ok, _ = verify_affine_image(e, np.eye(2), [0, 0], inflate(e, 1.01))
    assert ok
    ok, _ = verify_affine_image(E1(1, 0), [[2.0]], [0.0], E1(0.25 / 1.01, 0))
    assert ok
    ok, _ = verify_affine_image(E1(1, 0), [[2.0]], [0.0], E1(0.5, 0))
    assert not ok


def test_verify_affine_translation_interval():
    # c + b is inexact in binary; the check must still go through
    e = E1(4.0, 0.1)
    ok, _ = verify_affine_image(e, [[1.0]], [0.2], E1(4.0 / 1.0001, 0.1 + 0.2))
    assert ok


# --- packing ----------------------------------------------------------------

def test_pack_project():
    out, _ = pack_project(Ellipsoid(np.eye(2), [0, 0]), 1)
    assert abs(halfwidth(out) - 1.0) < 1e-2
    out, _ = pack_project(Ellipsoid(np.diag([1.0, 100.0]), [0, 0]), 1)
    assert abs(halfwidth(out) - 1.0) < 1e-2
    e = Ellipsoid(np.array([[2.0, 0.3], [0.3, 1.0]]), [1.0, 2.0])
    out, _ = pack_project(e, 2)
    assert out.same_as(e) or includes(e, out)[0]
    with pytest.raises(ValueError):
        pack_project(e, 3)


def test_pack_project_sampling(rng):
    e = random_ellipsoid(rng, 3)
    out, _ = pack_project(e, 2)
    assert out.contains(e.sample(rng, 1000)[:, :2]).all()


def test_pack_product(rng):
    p = pack_product(E1(1, 0), E1(1, 0))
    assert np.array_equal(p.Q, np.diag([0.5, 0.5]))
    assert abs(p.value([1.0, 1.0])[0] - 1.0) < 1e-15
    e = Ellipsoid(np.eye(2), [1, 1])
    assert pack_product(e, Ellipsoid(np.zeros((0, 0)), [])) is e
    e1, e2 = random_ellipsoid(rng, 2), random_ellipsoid(rng, 1)
    prod = pack_product(e1, e2)
    pts = np.hstack([e1.sample(rng, 1000), e2.sample(rng, 1000)])
    assert prod.contains(pts).all()
