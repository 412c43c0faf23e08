"""The ellipsoid abstract domain.

An ellipsoid ``Ell(Q, c) = {x | (x - c)^T Q (x - c) <= 1}``. Every
operation that produces a new ellipsoid asks the SDP layer for a
candidate, then proves the claimed inclusion with an S-procedure LMI
checked in interval arithmetic, inflating the candidate until the check
goes through.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import sdp
from .certificate import Certificate, lmi_step
from .config import DEFAULT, Config
from .interval import IntervalArray, check_lmi, check_psd, exact_sum, imatmul

logger = logging.getLogger(__name__)


class CertificationError(RuntimeError):
    """A candidate could not be certified within the padding budget."""


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    Q: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float)) if np.size(self.Q) else np.zeros((0, 0))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if Q.shape != (c.size, c.size):
            raise ValueError(f"shape matrix {Q.shape} does not match center of size {c.size}")
        if not np.array_equal(Q, Q.T):
            raise ValueError("shape matrix is not symmetric")
        if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(c)):
            raise ValueError("non-finite ellipsoid data")
        if not check_psd(IntervalArray.point(Q)):
            raise ValueError("shape matrix is not certified positive definite")
        Q.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.c.size

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        center = np.asarray(center, dtype=float).reshape(-1)
        return cls(np.eye(center.size) / (radius * radius), center)

    def same_as(self, other: "Ellipsoid") -> bool:
        return np.array_equal(self.Q, other.Q) and np.array_equal(self.c, other.c)

    def value(self, x) -> np.ndarray:
        """``(x - c)^T Q (x - c)`` for one point or a batch of row vectors."""
        d = np.atleast_2d(x) - self.c
        return np.einsum("ij,jk,ik->i", d, self.Q, d)

    def contains(self, x, tol: float = 1e-9) -> np.ndarray:
        return self.value(x) <= 1.0 + tol

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Uniform samples from the ellipsoid."""
        n = self.n
        g = rng.standard_normal((size, n))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = rng.random(size) ** (1.0 / n)
        w, V = np.linalg.eigh(self.Q)
        S = V @ np.diag(w ** -0.5) @ V.T
        return self.c + (g * r[:, None]) @ S.T

    def volume_proxy(self) -> float:
        """``det(Q)^(-1/2)``; proportional to the volume."""
        return float(np.linalg.det(self.Q) ** -0.5)

    def __repr__(self):
        return f"Ellipsoid(Q={self.Q.tolist()}, c={self.c.tolist()})"


@dataclass(frozen=True)
class InclusionWitness:
    lam: float
    beta: float


@dataclass(frozen=True)
class VolumeJoinWitness:
    taus: tuple
    X: np.ndarray
    z: np.ndarray
    t: float


def corner(n: int) -> np.ndarray:
    """``(n+1)x(n+1)`` matrix with a single 1 in the bottom-right corner."""
    E = np.zeros((n + 1, n + 1))
    E[n, n] = 1.0
    return E


def homogenize(e: Ellipsoid) -> np.ndarray:
    Q, c = e.Q, e.c
    Qc = Q @ c
    n = e.n
    F = np.empty((n + 1, n + 1))
    F[:n, :n] = Q
    F[:n, n] = -Qc
    F[n, :n] = -Qc
    F[n, n] = c @ Qc - 1.0
    return F


def homogenize_interval(Q, c) -> IntervalArray:
    """``F(Q, c)`` enclosed in interval arithmetic; ``Q``/``c`` may be intervals."""
    Q = Q if isinstance(Q, IntervalArray) else IntervalArray.point(Q)
    c = c if isinstance(c, IntervalArray) else IntervalArray.point(np.asarray(c, dtype=float))
    n = c.shape[0]
    Qc = imatmul(Q, c)
    cQc = imatmul(c, Qc)
    lo = np.empty((n + 1, n + 1))
    hi = np.empty((n + 1, n + 1))
    lo[:n, :n], hi[:n, :n] = Q.lo, Q.hi
    lo[:n, n], hi[:n, n] = -Qc.hi, -Qc.lo
    lo[n, :n], hi[n, :n] = -Qc.hi, -Qc.lo
    last = cQc - IntervalArray.point(1.0)
    lo[n, n], hi[n, n] = last.lo, last.hi
    return IntervalArray(lo, hi).symmetrized()


_NEIGHBORHOOD = (1e-12, 1e-9, 1e-6)


def certify_inclusion(F_in: IntervalArray, F_out: IntervalArray, cfg: Config = DEFAULT,
                      op: str = "ellipsoid.includes", claim: str = "", beta_max: float = 0.0):
    """Prove ``beta E + lambda F_in - F_out >= 0`` for some ``lambda >= 0, beta <= beta_max``.

    With ``beta_max = 0`` this is the inclusion of ``{x : [x;1]^T F_in [x;1] <= 0}``
    in the matching set of ``F_out``. Returns ``(ok, witness, certificate)``.
    The witness holds the solver's optimal ``(lambda, beta)``; the
    certificate holds the multipliers that actually passed the interval
    check, with the sign of ``lambda`` (and of ``beta`` when ``beta_max``
    is 0) enforced by the checker.
    """
    m = F_in.shape[0]
    E = corner(m - 1)
    # Solve with both sides scaled by powers of two so entries are O(1);
    # multipliers are mapped back before any interval check.
    # The solver also works in the inner set's unit frame: T^T (.) T with
    # T = [[S, c], [0, 1]] fixes E, so multipliers carry over unchanged.
    T = _unit_frame(F_in.mid)
    A_in, A_out = T.T @ F_in.mid @ T, T.T @ F_out.mid @ T
    s_in, s_out = _pow2(A_in), _pow2(A_out)
    A_in, A_out = A_in / s_in, A_out / s_out

    p = sdp.SdpProblem()
    beta = p.scalar("beta")
    lam = p.scalar("lam")
    p.add_psd(beta.scale(E) + lam.scale(A_in) - sdp.Affine(A_out))
    p.add_nonneg(lam)
    p.maximize(-beta)
    sol = sdp.solve(p, cfg.solver)
    cert = Certificate()
    if not sol.status.ok:
        logger.debug("inclusion SDP: %s", sol.status)
        return False, None, cert
    b_star = sol.assignment["beta"] * s_out
    l_star = max(sol.assignment["lam"], 0.0) * (s_out / s_in)
    witness = InclusionWitness(lam=l_star, beta=b_star)
    if not b_star < beta_max:
        return False, witness, cert

    mats = [IntervalArray.point(E), F_in, F_out]

    beta_sign = "-" if beta_max == 0.0 else "*"

    def attempt(b, l):
        if b <= beta_max and l >= 0.0 and check_lmi(mats, [b, l, -1.0]):
            cert.add(lmi_step(op, mats, [b, l, -1.0], beta_sign + "+*", claim))
            return True
        return False

    b_half = beta_max + 0.5 * (b_star - beta_max)
    if attempt(b_half, l_star):
        return True, witness, cert

    # Re-centre lambda inside the feasible set for the relaxed beta.
    scale = max(1.0, float(np.abs(A_out).max()))
    p2 = sdp.SdpProblem()
    lam2 = p2.scalar("lam")
    s = p2.scalar("s")
    p2.add_psd(sdp.Affine((b_half / s_out) * E - A_out) + lam2.scale(A_in) - s.scale(np.eye(m)))
    p2.add_nonneg(lam2)
    p2.add_nonneg(scale - s)
    p2.maximize(s)
    sol2 = sdp.solve(p2, cfg.solver)
    if sol2.status.ok and sol2.assignment["s"] > 0.0:
        l2 = max(sol2.assignment["lam"], 0.0) * (s_out / s_in)
        if attempt(b_half, l2):
            return True, witness, cert

    for eps in _NEIGHBORHOOD:
        for db in (eps, -eps):
            for dl in (eps, -eps):
                if attempt(b_half + db * abs(b_star - beta_max), l_star * (1.0 + dl)):
                    return True, witness, cert
    return False, witness, cert


def _unit_frame(F: np.ndarray) -> np.ndarray:
    """Congruence mapping the unit ball onto the set of ``F`` when its block is positive definite."""
    m = F.shape[0]
    n = m - 1
    T = np.eye(m)
    if n == 0:
        return T
    Q = 0.5 * (F[:n, :n] + F[:n, :n].T)
    try:
        L = np.linalg.cholesky(Q)
        c = np.linalg.solve(Q, -F[:n, n])
        S = np.linalg.inv(L).T
    except np.linalg.LinAlgError:
        return T
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(c))):
        return T
    T[:n, :n] = S
    T[:n, n] = c
    return T


def _pow2(M: np.ndarray) -> float:
    top = float(np.abs(M).max()) if M.size else 0.0
    if not top > 0.0 or not np.isfinite(top):
        return 1.0
    return 2.0 ** round(np.log2(top))


def includes(inner: Ellipsoid, outer: Ellipsoid, cfg: Config = DEFAULT):
    """``(True, witness, certificate)`` only if ``inner`` is certified inside ``outer``.

    ``False`` means the inclusion could not be certified, not that it fails.
    """
    if inner.n != outer.n:
        raise ValueError(f"dimension mismatch: {inner.n} vs {outer.n}")
    if inner.n == 0:
        return True, InclusionWitness(0.0, -1.0), Certificate()
    return certify_inclusion(homogenize_interval(inner.Q, inner.c), homogenize_interval(outer.Q, outer.c),
                             cfg, "ellipsoid.includes", f"Ell(n={inner.n}) inclusion")


def inflate(e: Ellipsoid, factor: float) -> Ellipsoid:
    """Scale the radius by ``factor``: ``Ell(Q / factor^2, c)``."""
    if not factor >= 1.0:
        raise ValueError("inflation factor must be >= 1")
    if factor == 1.0:
        return e
    return Ellipsoid(e.Q / (factor * factor), e.c)


def _pad_schedule(cfg: Config):
    yield 1.0
    for j in range(cfg.pad_max):
        yield 1.0 + cfg.pad_eps * 2.0 ** j


_JOIN_FLOORS = (1e-3, 1e-2, 3e-2, 1e-1)


def _join_candidate(es, n, floor, cfg):
    """Solve the volume-join SDP in normalized coordinates; ``None`` on solver failure."""
    p = sdp.SdpProblem()
    X = p.symmetric("X", n)
    z = p.vector("z", n)
    zero_n = np.zeros((n, n))
    rhs = sdp.bmat([
        [X, -z, zero_n],
        [-z.T, sdp.Affine(-np.ones((1, 1))), z.T],
        [zero_n, z, -X],
    ])
    m0, D, scaled = _normalize(es, floor)
    for i, e in enumerate(scaled):
        tau = p.scalar(f"tau{i}")
        F = homogenize(e)
        # tau_i absorbs any positive scale; normalizing keeps the solver well conditioned.
        F = F / np.abs(F).max()
        big = np.zeros((2 * n + 1, 2 * n + 1))
        big[: n + 1, : n + 1] = F
        p.add_psd(tau.scale(big) - rhs)
        p.add_nonneg(tau)
    vb = sdp.build_volume_block(p, X)
    p.maximize(vb.t)
    sol = sdp.solve(p, cfg.solver)
    if not sol.status.ok:
        logger.debug("join SDP at floor %g: %s", floor, sol.status)
        return None
    Xv = sol.assignment["X"]
    Xv = 0.5 * (Xv + Xv.T)
    zv = sol.assignment["z"]
    try:
        c_star = m0 + D * np.linalg.solve(Xv, zv)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(c_star)):
        return None
    return Xv / (D * D), zv, c_star, sol


def join(es, cfg: Config = DEFAULT, enclosures=None):
    """Near-minimum-volume ellipsoid certified to contain every input.

    ``enclosures`` optionally gives, per input, an interval ``F`` matrix
    whose every member set must be covered; the float ellipsoids then only
    steer the solver. Returns ``(ellipsoid, witness, certificate)``; raises
    :class:`CertificationError` when padding runs out.
    """
    es = list(es)
    if not es:
        raise ValueError("join of an empty family")
    n = es[0].n
    if any(e.n != n for e in es):
        raise ValueError("join inputs differ in dimension")
    if n == 0:
        return es[0], VolumeJoinWitness((), np.zeros((0, 0)), np.zeros(0), 0.0), Certificate()

    if enclosures is None:
        def make(cand):
            return [lambda e=e: includes(e, cand, cfg) for e in es]
    else:
        enclosures = list(enclosures)
        if len(enclosures) != len(es):
            raise ValueError("one enclosure per input")

        def make(cand):
            F_out = homogenize_interval(cand.Q, cand.c)
            return [lambda F=F: certify_inclusion(F, F_out, cfg, "ellipsoid.join", f"join input n={n}")
                    for F in enclosures]

    last = "join SDP failed at every conditioning floor"
    for floor in _JOIN_FLOORS:
        found = _join_candidate(es, n, floor, cfg)
        if found is None:
            continue
        Xv, zv, c_star, sol = found
        witness = VolumeJoinWitness(tuple(sol.assignment[f"tau{i}"] for i in range(len(es))), Xv, zv,
                                    sol.assignment["vol.t"])
        try:
            result, cert = _pad_until(make, Xv, c_star, cfg, "join")
        except CertificationError as exc:
            last = str(exc)
            continue
        return result, witness, cert
    raise CertificationError(last)


def _normalize(es, floor: float = 1e-3):
    """Inputs in coordinates ``u = (x - m) / D`` with spread about 1.

    Any input thinner than ``floor`` is replaced by a superset, which only
    steers the solver; callers still verify the original inputs.
    """
    centers = np.array([e.c for e in es])
    m = centers.mean(axis=0)
    radii = [1.0 / np.sqrt(max(np.linalg.eigvalsh(e.Q)[0], 1e-300)) for e in es]
    D = max(float(np.linalg.norm(e.c - m)) + r for e, r in zip(es, radii))
    if not (np.isfinite(D) and D > 0.0):
        D = 1.0
    out = []
    for e in es:
        w, V = np.linalg.eigh(e.Q * (D * D))
        w = np.minimum(w, 1.0 / (floor * floor))
        Qu = (V * w) @ V.T
        out.append(Ellipsoid(0.5 * (Qu + Qu.T), (e.c - m) / D))
    return m, D, out


def _pad_until(make_checks, Q0: np.ndarray, c0: np.ndarray, cfg: Config, what: str):
    """Inflate ``Ell(Q0, c0)`` along the padding schedule until every check passes.

    ``make_checks(candidate)`` returns zero-argument callables producing
    ``(ok, witness, certificate)``; a check that passed at some padding is
    not repeated at larger paddings, since inflation preserves it.
    """
    pending = None
    certs: dict[int, Certificate] = {}
    for factor in _pad_schedule(cfg):
        try:
            cand = Ellipsoid(Q0 / (factor * factor), c0)
        except ValueError:
            continue
        checks = make_checks(cand)
        if pending is None:
            pending = list(range(len(checks)))
        still = []
        for k in pending:
            ok, _, cert = checks[k]()
            if ok:
                certs[k] = cert
            else:
                still.append(k)
        pending = still
        if not pending:
            total = Certificate()
            for k in sorted(certs):
                total.extend(certs[k])
            return cand, total
    raise CertificationError(f"{what}: certification failed after {cfg.pad_max} paddings")


def _is_identity(A: np.ndarray) -> bool:
    return A.shape[0] == A.shape[1] and np.array_equal(A, np.eye(A.shape[0]))


def affine_image(e: Ellipsoid, A, b, eps: float | None = None, cfg: Config = DEFAULT):
    """Certified ellipsoid containing ``{A x + b | x in e}``.

    ``A`` may be rectangular (``m x n``). The candidate keeps a ball of
    radius ``sqrt(eps)`` so singular maps stay well posed.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    eps = cfg.epsilon if eps is None else eps
    if not eps > 0:
        raise ValueError("eps must be positive")
    m, n = A.shape
    if n != e.n or b.size != m:
        raise ValueError("affine map does not match the ellipsoid dimension")
    if _is_identity(A):
        c_new, exact = exact_sum(e.c, b)
        if exact:
            cert = Certificate()
            return Ellipsoid(e.Q, c_new), cert

    p = sdp.SdpProblem()
    X = p.symmetric("X", m)
    p.add_psd(sdp.Affine(e.Q) - X.congruence(A))
    p.add_psd(sdp.Affine(np.eye(m) / eps) - X)
    vb = sdp.build_volume_block(p, X)
    p.maximize(vb.t)
    sol = sdp.solve(p, cfg.solver)
    if not sol.status.ok:
        raise CertificationError(f"affine image SDP failed: {sol.status.value}")
    Xv = sol.assignment["X"]
    Xv = 0.5 * (Xv + Xv.T)
    c_star = A @ e.c + b

    result, cert = _pad_until(lambda cand: [lambda: _as_triple(verify_affine_image(e, A, b, cand, cfg))],
                              Xv, c_star, cfg, "affine image")
    return result, cert


def _as_triple(pair):
    ok, cert = pair
    return ok, None, cert


def verify_affine_image(e: Ellipsoid, A, b, candidate: Ellipsoid, cfg: Config = DEFAULT):
    """Certify ``{A x + b | x in e}`` inside ``candidate``.

    The translation is folded into the target center ``c* - b`` computed in
    interval arithmetic, so a floating-point ``c*`` is never trusted.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    m, n = A.shape
    if candidate.n != m or e.n != n or b.size != m:
        raise ValueError("dimensions disagree")
    Ai = IntervalArray.point(A)
    Qs = IntervalArray.point(candidate.Q)
    ct = IntervalArray.point(candidate.c) - IntervalArray.point(b)
    AtQ = imatmul(Ai.T, Qs)
    top = imatmul(AtQ, Ai)
    off = -imatmul(AtQ, ct)
    corner_iv = imatmul(ct, imatmul(Qs, ct)) - IntervalArray.point(1.0)
    lo = np.empty((n + 1, n + 1))
    hi = np.empty((n + 1, n + 1))
    lo[:n, :n], hi[:n, :n] = top.lo, top.hi
    lo[:n, n], hi[:n, n] = off.lo, off.hi
    lo[n, :n], hi[n, :n] = off.lo, off.hi
    lo[n, n], hi[n, n] = corner_iv.lo, corner_iv.hi
    G = IntervalArray(lo, hi).symmetrized()
    F_in = homogenize_interval(e.Q, e.c)
    ok, _, cert = certify_inclusion(F_in, G, cfg, "ellipsoid.affine_image", f"affine image n={n}->m={m}")
    return ok, cert


def pack_project(e: Ellipsoid, keep: int, cfg: Config = DEFAULT):
    """Certified ellipsoid over the first ``keep`` coordinates containing the projection."""
    if not 1 <= keep <= e.n:
        raise ValueError("keep must be within 1..n")
    A = np.zeros((keep, e.n))
    A[:, :keep] = np.eye(keep)
    return affine_image(e, A, np.zeros(keep), cfg.epsilon, cfg)


def pack_product(e1: Ellipsoid, e2: Ellipsoid) -> Ellipsoid:
    """Ellipsoid over the concatenated variables containing ``e1 x e2``."""
    if e2.n == 0:
        return e1
    if e1.n == 0:
        return e2
    n1, n2 = e1.n, e2.n
    Q = np.zeros((n1 + n2, n1 + n2))
    Q[:n1, :n1] = e1.Q / 2.0
    Q[n1:, n1:] = e2.Q / 2.0
    return Ellipsoid(Q, np.concatenate([e1.c, e2.c]))
