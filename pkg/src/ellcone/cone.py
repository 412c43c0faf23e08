"""Ellipsoidal cones: an ellipsoid whose center drifts and whose radius grows with loop counters.

``Con((q, c), (beta_i, delta_i, lambda_i, b_i))`` is the set of ``(x, y)``
with ``y_i >= lambda_i``, ``y_i == lambda_i`` unless ``b_i``, and

    q(x - c - sum_i (y_i - lambda_i) delta_i) <= (1 + sum_i beta_i (y_i - lambda_i))^2

A slope of ``+inf`` marks a counter whose cone has been opened to the
whole half-space; it is only ever produced by the widening cap.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg

from . import sdp
from .certificate import Certificate, le_step, lmi_step
from .config import DEFAULT, Config
from .ellipsoid import (CertificationError, Ellipsoid, InclusionWitness, _is_identity, _pad_schedule,
                        affine_image, certify_inclusion, homogenize_interval, join)
from .interval import (Interval, IntervalArray, check_lmi, check_psd, exact_sum, imatmul, quad_form,
                       round_up)

logger = logging.getLogger(__name__)

INF = math.inf


class WideningError(RuntimeError):
    """The widened cone failed its containment post-check."""


class LyapunovInfeasible(RuntimeError):
    """No common quadratic Lyapunov function was found (advisory, not a proof)."""


@dataclass(frozen=True, eq=False)
class CounterSlot:
    beta: float
    delta: np.ndarray
    lam: float
    extrapolated: bool

    def __post_init__(self):
        beta = float(self.beta)
        if math.isnan(beta) or beta < 0.0:
            raise ValueError(f"slope must be >= 0, got {self.beta}")
        lam = float(self.lam)
        if not math.isfinite(lam):
            raise ValueError("base level must be finite")
        d = np.array(self.delta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(d)):
            raise ValueError("drift must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "extrapolated", bool(self.extrapolated))

    def same_as(self, other: "CounterSlot") -> bool:
        return (self.beta == other.beta and self.lam == other.lam and self.extrapolated == other.extrapolated
                and np.array_equal(self.delta, other.delta))

    def replace(self, **kw) -> "CounterSlot":
        d = dict(beta=self.beta, delta=self.delta, lam=self.lam, extrapolated=self.extrapolated)
        d.update(kw)
        return CounterSlot(**d)


@dataclass(frozen=True, eq=False)
class Cone:
    base: Ellipsoid
    counters: tuple = ()

    def __post_init__(self):
        slots = tuple(self.counters)
        for s in slots:
            if s.delta.size != self.base.n:
                raise ValueError(f"drift of size {s.delta.size} in a cone over R^{self.base.n}")
        object.__setattr__(self, "counters", slots)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def k(self) -> int:
        return len(self.counters)

    @property
    def lambdas(self) -> tuple:
        return tuple(s.lam for s in self.counters)

    def same_as(self, other: "Cone") -> bool:
        return (self.k == other.k and self.base.same_as(other.base)
                and all(a.same_as(b) for a, b in zip(self.counters, other.counters)))

    def with_slot(self, i: int, slot: CounterSlot) -> "Cone":
        slots = list(self.counters)
        slots[i] = slot
        return Cone(self.base, tuple(slots))

    def predicate(self, x, y, tol: float = 1e-9) -> np.ndarray:
        """Membership of rows ``x`` (m x n) at counter values ``y`` (m x k), with relative slack."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).reshape(x.shape[0], self.k)
        ok = np.ones(x.shape[0], dtype=bool)
        shift = np.tile(self.base.c, (x.shape[0], 1))
        radius = np.ones(x.shape[0])
        for i, s in enumerate(self.counters):
            t = y[:, i] - s.lam
            ok &= t >= -tol * max(1.0, abs(s.lam))
            if not s.extrapolated:
                ok &= np.abs(t) <= tol * max(1.0, abs(s.lam))
            t = np.maximum(t, 0.0)
            shift = shift + t[:, None] * s.delta
            if math.isinf(s.beta):
                radius = np.where(t > 0, INF, radius)
            else:
                radius = radius + s.beta * t
        d = x - shift
        val = np.einsum("ij,jk,ik->i", d, self.base.Q, d)
        with np.errstate(invalid="ignore"):
            ok &= (val <= radius * radius * (1.0 + tol) + tol) | np.isinf(radius)
        return ok

    def sample(self, rng: np.random.Generator, size: int, span: int = 10):
        """Points ``(x, y)`` of the cone: integer grid ``y`` over ``[lambda, lambda + span]``."""
        y = np.empty((size, self.k))
        for i, s in enumerate(self.counters):
            if s.extrapolated and not math.isinf(s.beta):
                y[:, i] = s.lam + rng.integers(0, span + 1, size)
            else:
                y[:, i] = s.lam
        u = self.base.sample(rng, size) - self.base.c
        radius = np.ones(size)
        x = np.tile(self.base.c, (size, 1))
        for i, s in enumerate(self.counters):
            t = y[:, i] - s.lam
            radius = radius + s.beta * t if s.beta else radius
            x = x + t[:, None] * s.delta
        return x + radius[:, None] * u, y

    def __repr__(self):
        slots = ", ".join(f"(beta={s.beta:.6g}, delta={np.array2string(s.delta, precision=4)}, "
                          f"lam={s.lam:g}, b={s.extrapolated})" for s in self.counters)
        return f"Con({self.base!r}; {slots})"


def plain(e: Ellipsoid) -> Cone:
    return Cone(e, ())


@dataclass(frozen=True)
class ConeInclusionWitness:
    base_witness: InclusionWitness | None
    slope_bounds: tuple = ()
    level_checks: tuple = ()


def _root(iv: Interval) -> Interval:
    """Upward-safe sqrt of a quantity known to be non-negative."""
    return Interval(max(iv.lo, 0.0), max(iv.hi, 0.0)).sqrt()


def _norm_q(Q, v) -> Interval:
    """Enclosure of ``sqrt(v^T Q v)``."""
    return _root(quad_form(Q, v))


def _dist(Q, a, b) -> Interval:
    """Enclosure of ``sqrt(q(a - b))``, exactly zero when ``a`` and ``b`` coincide."""
    if np.array_equal(a, b):
        return Interval.point(0.0)
    return _norm_q(Q, IntervalArray.point(a) - IntervalArray.point(b))


def _down(x: float) -> float:
    return -round_up(-x)


def _check_shapes(C: Cone, D: Cone) -> None:
    if C.n != D.n:
        raise ValueError(f"dimension mismatch: {C.n} vs {D.n}")
    if C.k != D.k:
        raise ValueError(f"counter-count mismatch: {C.k} vs {D.k}")


def cone_includes(C: Cone, D: Cone, cfg: Config = DEFAULT):
    """``(True, witness, certificate)`` only if ``C`` is certified inside ``D``."""
    _check_shapes(C, D)
    cert = Certificate()
    levels = tuple(t.lam <= s.lam and (s.lam == t.lam or t.extrapolated) for s, t in zip(C.counters, D.counters))
    slopes = []
    if not all(levels):
        return False, ConeInclusionWitness(None, (), levels), cert

    same_q = np.array_equal(C.base.Q, D.base.Q)
    for s, t in zip(C.counters, D.counters):
        if not s.extrapolated:
            slopes.append(None)
            continue
        if not t.extrapolated or math.isinf(s.beta) and not math.isinf(t.beta):
            return False, ConeInclusionWitness(None, tuple(slopes), levels), cert
        if math.isinf(t.beta):
            slopes.append(None)
            continue
        ok, bound = _slope_condition(C.base.Q, D.base.Q, s, t, cert, cfg, same_q)
        if not ok:
            return False, ConeInclusionWitness(None, tuple(slopes), levels), cert
        slopes.append(bound)

    ok, bw = _base_condition(C, D, cert, cfg, same_q)
    return ok, ConeInclusionWitness(bw, tuple(slopes), levels), cert


def _slope_condition(Q, Qp, s: CounterSlot, t: CounterSlot, cert: Certificate, cfg: Config, same_q: bool):
    """Check ``t.beta^2 >= max_{q(u)<=1} q'(s.beta u + s.delta - t.delta)``.

    Returns ``(ok, (s_mult, t_mult))``; closed forms report ``None`` for
    the LMI multipliers.
    """
    same_d = np.array_equal(s.delta, t.delta)
    d = IntervalArray.point(s.delta) - IntervalArray.point(t.delta)
    claim = "slope condition"
    if same_q:
        # M = (beta + sqrt(q(d)))^2 exactly when q' = q.
        if same_d:
            return s.beta <= t.beta, None
        bound = Interval.point(s.beta) + _norm_q(Q, d)
        if bound.hi <= t.beta:
            cert.add(le_step("cone.includes", bound, t.beta, claim))
            return True, None
        return False, None
    if s.beta == 0.0:
        if same_d:
            return True, None
        M = quad_form(Qp, d)
        rhs = Interval.point(t.beta) * t.beta
        if M.hi <= rhs.lo:
            cert.add(le_step("cone.includes", M, rhs, claim))
            return True, None
        return False, None
    # Triangle bound: r^2 q >= q' gives sqrt(q'(beta u + d)) <= beta r + sqrt(q'(d)).
    try:
        r, rc = ratio_bound(Q, Qp, cfg)
    except CertificationError:
        r = None
    if r is not None:
        bound = Interval.point(s.beta) * r + (_norm_q(Qp, d) if not same_d else Interval.point(0.0))
        if bound.hi <= t.beta:
            cert.extend(rc)
            cert.add(le_step("cone.includes", bound, t.beta, claim))
            return True, None
    t_cap = _down(((Interval.point(t.beta) * t.beta) - 1.0).lo)
    F_in = homogenize_interval(IntervalArray.point(Q) / (Interval.point(s.beta) * s.beta), np.zeros(Q.shape[0]))
    F_out = homogenize_interval(Qp, IntervalArray.point(t.delta) - IntervalArray.point(s.delta))
    ok, w, sub = certify_inclusion(F_in, F_out, cfg, "cone.includes.slope", claim, beta_max=t_cap)
    if not ok:
        return False, None
    cert.extend(sub)
    lhs = Interval.point(1.0) + t_cap
    rhs = Interval.point(t.beta) * t.beta
    if lhs.hi > rhs.lo:
        return False, None
    cert.add(le_step("cone.includes", lhs, rhs, "1 + t <= beta'^2"))
    return True, (w.lam, w.beta)


def _exact_target(C: Cone, D: Cone):
    """Exact rational ``R`` and target center of condition (ii), or ``None`` if a slope is infinite."""
    R = Fraction(1)
    center = [Fraction(v) for v in D.base.c]
    for s, t in zip(C.counters, D.counters):
        if s.lam == t.lam:
            continue
        gap = Fraction(s.lam) - Fraction(t.lam)
        if math.isinf(t.beta):
            return None
        R += Fraction(t.beta) * gap
        for j, v in enumerate(t.delta):
            if v:
                center[j] += Fraction(v) * gap
    return R, center


def _base_condition(C: Cone, D: Cone, cert: Certificate, cfg: Config, same_q: bool):
    if any(math.isinf(t.beta) and s.lam > t.lam for s, t in zip(C.counters, D.counters)):
        return True, None
    if same_q:
        R, center = _exact_target(C, D)
        if R >= 1 and all(Fraction(v) == w for v, w in zip(C.base.c, center)):
            return True, None
    R = Interval.point(1.0)
    target = IntervalArray.point(D.base.c)
    for s, t in zip(C.counters, D.counters):
        if s.lam == t.lam:
            continue
        gap = Interval.point(s.lam) - t.lam
        if t.beta:
            R = R + gap * t.beta
        if np.any(t.delta):
            target = target + IntervalArray.point(t.delta) * gap
    if R.lo < 1.0 and R.hi < 1.0:
        raise ArithmeticError(f"scaling factor {R} below 1")
    if same_q:
        lhs = _norm_q(C.base.Q, IntervalArray.point(C.base.c) - target) + 1.0
        if lhs.hi <= R.lo:
            cert.add(le_step("cone.includes", lhs, R, "base inclusion, shared shape"))
            return True, None
    F_out = homogenize_interval(IntervalArray.point(D.base.Q) / (R * R), target)
    F_in = homogenize_interval(C.base.Q, C.base.c)
    ok, w, sub = certify_inclusion(F_in, F_out, cfg, "cone.includes.base", "base inclusion")
    if ok:
        cert.extend(sub)
    return ok, w


def counter_increment(C: Cone, i: int, v: float) -> Cone:
    """Shift counter ``i`` (0-based) by ``v``; the level rounds down when inexact."""
    if not 0 <= i < C.k:
        raise IndexError(f"counter {i} out of range for k={C.k}")
    s = C.counters[i]
    lam, exact = exact_sum(s.lam, v)
    lam = float(lam) if exact else (Interval.point(s.lam) + v).lo
    return C.with_slot(i, s.replace(lam=lam))


def add_counter(C: Cone, lambda_new: float = 0.0, known_exact: bool = True) -> Cone:
    slot = CounterSlot(0.0, np.zeros(C.n), lambda_new, not known_exact)
    return Cone(C.base, C.counters + (slot,))


def cone_affine(C: Cone, A, b, cfg: Config = DEFAULT):
    """Certified image of ``C`` under ``x -> A x + b`` with counters untouched."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape != (C.n, C.n):
        raise ValueError(f"expected a {C.n}x{C.n} map, got {A.shape}")
    base, cert = affine_image(C.base, A, b, cfg.epsilon, cfg)
    if _is_identity(A):
        return Cone(base, C.counters), cert
    Ai = IntervalArray.point(A)
    slots = []
    for s in C.counters:
        dn = A @ s.delta
        if not np.any(s.delta) or math.isinf(s.beta):
            slots.append(s.replace(delta=dn))
            continue
        resid = imatmul(Ai, IntervalArray.point(s.delta)) - IntervalArray.point(dn)
        bound = Interval.point(s.beta) + _norm_q(base.Q, resid)
        beta = round_up(bound.hi)
        cert.add(le_step("cone.affine", bound, beta, "slope after affine map"))
        slots.append(s.replace(beta=beta, delta=dn))
    return Cone(base, tuple(slots)), cert


def translation_invariant(C: Cone, i: int, b):
    """Certify ``C`` invariant under ``x -> x + b`` with counter ``i`` stepping by one.

    Any point ``c + sum t_j delta_j + (1 + sum beta_j t_j) u`` moves to
    within ``sqrt(q(b - delta_i))`` of the level ``t + e_i`` ellipsoid's
    scaled copy, so ``beta_i >= sqrt(q(b - delta_i))`` suffices.
    Returns ``(ok, certificate)``.
    """
    if not 0 <= i < C.k:
        raise IndexError(f"counter {i} out of range for k={C.k}")
    b = np.asarray(b, dtype=float).reshape(-1)
    s = C.counters[i]
    cert = Certificate()
    if not s.extrapolated:
        return False, cert
    if math.isinf(s.beta):
        return True, cert
    d = _dist(C.base.Q, b, s.delta)
    if d.hi == 0.0:
        return True, cert
    if d.hi <= s.beta:
        cert.add(le_step("cone.translation", d, s.beta, "translation step within slope"))
        return True, cert
    return False, cert


def remove_counter(C: Cone, i: int, bounds, cfg: Config = DEFAULT):
    """Project counter ``i`` away, knowing ``y_i`` stays within ``bounds = (a, M)``."""
    if not 0 <= i < C.k:
        raise IndexError(f"counter {i} out of range for k={C.k}")
    s = C.counters[i]
    a, M = (float(v) for v in bounds)
    if not math.isfinite(M):
        raise ValueError("remove_counter needs a finite upper bound")
    if a < s.lam or M < a:
        raise ValueError(f"bounds [{a}, {M}] do not lie above the level {s.lam}")
    if not s.extrapolated:
        a = M = s.lam
    if M > s.lam and math.isinf(s.beta):
        raise ValueError("cannot project a counter with unbounded slope")
    rest = C.counters[:i] + C.counters[i + 1:]
    if M == s.lam:
        return Cone(C.base, rest), Certificate()

    mids, encs = [], []
    for y in sorted({a, M}):
        gap = Interval.point(y) - s.lam
        scale = Interval.point(1.0) + gap * s.beta
        Qy = IntervalArray.point(C.base.Q) / (scale * scale)
        cy = IntervalArray.point(C.base.c) + IntervalArray.point(s.delta) * gap
        encs.append(homogenize_interval(Qy, cy))
        Qm = C.base.Q / (scale.mid * scale.mid)
        mids.append(Ellipsoid(0.5 * (Qm + Qm.T), cy.mid))
    base, _, cert = join(mids, cfg, enclosures=encs)
    # every slice holds a translate of the old unit ball, so the remaining
    # slopes can be measured against the larger base: r^2 q_old >= q_new
    if any(t.extrapolated and 0.0 < t.beta < INF for t in rest):
        try:
            r, rc = ratio_bound(C.base.Q, base.Q, cfg)
        except CertificationError:
            r = 1.0
        if r < 1.0:
            cert.extend(rc)
            rest = tuple(t.replace(beta=round_up(t.beta * r))
                         if t.extrapolated and 0.0 < t.beta < INF else t for t in rest)
    return Cone(base, rest), cert


def ratio_bound(q_from, q_to, cfg: Config = DEFAULT):
    """``(r, certificate)`` with ``r^2 q_from - q_to`` certified positive definite."""
    q_from = np.asarray(q_from, dtype=float)
    q_to = np.asarray(q_to, dtype=float)
    if q_from.shape != q_to.shape:
        raise ValueError("shape mismatch")
    cert = Certificate()
    if np.array_equal(q_from, q_to):
        return 1.0, cert
    try:
        top = float(scipy.linalg.eigh(q_to, q_from, eigvals_only=True)[-1])
    except (np.linalg.LinAlgError, ValueError):
        top = float(np.linalg.norm(q_to, 2) * np.linalg.norm(np.linalg.inv(q_from), 2))
    top = max(top, 1e-300)
    tries = [top * (1.0 + 1e-9 * 4.0 ** j) for j in range(12)]
    tries += [top * 2.0 ** j for j in range(1, 40)]
    for m in tries:
        if check_lmi([q_from, q_to], [m, -1.0]):
            cert.add(lmi_step("cone.ratio", [q_from, q_to], [m, -1.0], "+*", "r^2 q_from - q_to > 0"))
            return round_up(math.sqrt(m)), cert
    raise CertificationError("ratio bound could not be certified")


def widen_partial(C: Cone, D: Cone, cfg: Config = DEFAULT, check: bool = True):
    """Cone on ``C``'s base whose slopes cover both arguments' slopes.

    ``D``'s levels must sit at or above ``C``'s. With ``check`` the result
    is post-checked to contain both arguments.
    """
    _check_shapes(C, D)
    if any(t.lam < s.lam for s, t in zip(C.counters, D.counters)):
        raise ValueError("right argument below the left one")
    Q = C.base.Q
    cert = Certificate()
    r = None
    slots = []
    for s, t in zip(C.counters, D.counters):
        if not (s.extrapolated or t.extrapolated or s.lam < t.lam):
            slots.append(s)
            continue
        if not t.extrapolated:
            slots.append(s.replace(extrapolated=True))
            continue
        if math.isinf(t.beta) or math.isinf(s.beta) and s.extrapolated:
            slots.append(s.replace(beta=INF, extrapolated=True))
            continue
        # q'-slopes measured in q: r^2 q' >= q, so sup_{q'(u)<=1} sqrt(q(u)) <= r.
        if t.beta == 0.0:
            rb = Interval.point(0.0)
        else:
            if r is None:
                r, rc = ratio_bound(D.base.Q, Q, cfg)
                cert.extend(rc)
            rb = Interval.point(r) * t.beta
        if not s.extrapolated:
            beta = t.beta if r in (None, 1.0) else round_up(rb.hi)
            slots.append(CounterSlot(beta, t.delta, s.lam, True))
            continue
        if np.array_equal(s.delta, t.delta):
            beta = max(s.beta, rb.hi if rb.width == 0.0 else round_up(rb.hi))
            slots.append(s.replace(beta=beta))
            continue
        d = _norm_q(Q, IntervalArray.point(s.delta) - IntervalArray.point(t.delta))
        dm = d.mid
        mu = min(1.0, max(0.0, (s.beta + dm - rb.mid) / (2.0 * dm))) if dm > 0 else 1.0
        delta = mu * s.delta + (1.0 - mu) * t.delta
        b1 = Interval.point(s.beta) + _dist(Q, s.delta, delta)
        b2 = rb + _dist(Q, t.delta, delta)
        slots.append(CounterSlot(round_up(max(b1.hi, b2.hi)), delta, s.lam, True))
    out = Cone(C.base, tuple(slots))
    if check:
        cert.extend(_post_check(C, D, out, cfg))
    return out, cert


def _post_check(C: Cone, D: Cone, W: Cone, cfg: Config) -> Certificate:
    cert = Certificate()
    for X in (C, D):
        ok, _, c = cone_includes(X, W, cfg)
        if not ok:
            raise WideningError("widened cone does not contain its argument")
        cert.extend(c)
    return cert


def _relax(W: Cone, C: Cone, extra: float, cap: bool) -> Cone:
    """Loosen the slopes ``W`` opened relative to ``C``."""
    slots = []
    for w, s in zip(W.counters, C.counters):
        if w.extrapolated and not math.isinf(w.beta):
            if cap:
                w = w.replace(beta=INF)
            elif extra > 0.0:
                w = w.replace(beta=round_up(w.beta * (1.0 + extra) + extra * 1e-3))
        slots.append(w)
    return Cone(W.base, tuple(slots))


def widen(C: Cone, D: Cone, cfg: Config = DEFAULT, slack: float = 0.0, cap: bool = False):
    """``(C nabla_p C+) nabla_p D`` with ``C+`` bridging ``C`` to ``D``.

    ``slack`` loosens the opened slopes relatively; ``cap`` sends them to
    ``+inf``. Returns ``(cone, certificate)``; the result is certified to
    contain both arguments or :class:`WideningError` is raised.
    """
    _check_shapes(C, D)
    if any(t.lam < s.lam for s, t in zip(C.counters, D.counters)):
        raise ValueError("widening needs every level of the right argument at or above the left")
    moved = [i for i, (s, t) in enumerate(zip(C.counters, D.counters)) if s.lam < t.lam]
    if not moved:
        raise ValueError("widening needs at least one counter that moved")
    gaps = {i: Interval.point(D.counters[i].lam) - C.counters[i].lam for i in moved}
    total = Interval.point(0.0)
    for i in moved:
        total = total + gaps[i]
    shift = D.base.c - C.base.c
    cert = Certificate()
    drift = {i: shift / total.mid for i in moved}
    implied = IntervalArray.point(np.zeros(C.n))
    for i in moved:
        implied = implied + IntervalArray.point(drift[i]) * gaps[i]
    resid = IntervalArray.point(D.base.c) - IntervalArray.point(C.base.c) - implied
    r, rc = ratio_bound(D.base.Q, C.base.Q, cfg)
    cert.extend(rc)
    if np.array_equal(shift, np.zeros(C.n)) or all(np.array_equal(drift[i], shift) for i in moved) and total.mid == 1.0:
        bound = Interval.point(r)
    else:
        bound = _norm_q(C.base.Q, resid) + r
    R = max(1.0, bound.hi if bound.width == 0.0 else round_up(bound.hi))
    slots = []
    for i, s in enumerate(C.counters):
        if i in drift:
            beta = 0.0 if R == 1.0 else round_up(((Interval.point(R) - 1.0) / total).hi)
            slots.append(CounterSlot(beta, drift[i], s.lam, True))
        else:
            slots.append(CounterSlot(0.0, np.zeros(C.n), s.lam, False))
    bridge = Cone(C.base, tuple(slots))
    X, c1 = widen_partial(C, bridge, cfg, check=False)
    Y, c2 = widen_partial(X, D, cfg, check=False)
    cert.extend(c1)
    cert.extend(c2)
    extras = [slack] + [slack + cfg.pad_eps * 2.0 ** j for j in range(cfg.pad_max)]
    for extra in extras:
        W = _relax(Y, C, extra, cap)
        try:
            sub = _post_check(C, D, W, cfg)
        except WideningError:
            if cap:
                break
            continue
        cert.extend(sub)
        return W, cert
    raise WideningError("widening post-check failed after padding")


def cone_join(cones, cfg: Config = DEFAULT):
    """Certified cone containing every input; inputs must share counter levels."""
    cones = list(cones)
    if not cones:
        raise ValueError("join of an empty family")
    first = cones[0]
    for D in cones[1:]:
        _check_shapes(first, D)
        if D.lambdas != first.lambdas:
            raise ValueError("cone join needs identical counter levels")
    if len(cones) == 1:
        return first, Certificate()
    if all(D.base.same_as(first.base) for D in cones[1:]):
        base, cert = first.base, Certificate()
    else:
        base, _, cert = join([D.base for D in cones], cfg)
    ratios = {}

    def rho(D):
        key = id(D)
        if key not in ratios:
            r, rc = ratio_bound(D.base.Q, base.Q, cfg)
            cert.extend(rc)
            ratios[key] = r
        return ratios[key]

    slots = []
    for i in range(first.k):
        ext = [D for D in cones if D.counters[i].extrapolated]
        if not ext:
            slots.append(first.counters[i])
            continue
        if any(math.isinf(D.counters[i].beta) for D in ext):
            slots.append(first.counters[i].replace(beta=INF, extrapolated=True))
            continue
        d0 = ext[0].counters[i].delta
        if all(np.array_equal(D.counters[i].delta, d0) for D in ext):
            delta = d0
        else:
            delta = np.mean([D.counters[i].delta for D in ext], axis=0)
        exact = True
        beta = 0.0
        bounds = []
        for D in ext:
            s = D.counters[i]
            r = rho(D)
            if r == 1.0 and np.array_equal(s.delta, delta):
                beta = max(beta, s.beta)
                continue
            if s.beta == 0.0 and np.array_equal(s.delta, delta):
                continue
            exact = False
            bound = Interval.point(r) * s.beta + _dist(base.Q, s.delta, delta)
            bounds.append(bound)
            beta = max(beta, bound.hi)
        if not exact:
            beta = round_up(beta)
            for bound in bounds:
                cert.add(le_step("cone.join", bound, beta, "joined slope bound"))
        slots.append(CounterSlot(beta, delta, first.counters[i].lam, True))
    return Cone(base, tuple(slots)), cert


def _lyapunov_sdp(As, m: float, cfg: Config, margin: bool):
    n = As[0].shape[0]
    p = sdp.SdpProblem()
    Q = p.symmetric("Q", n)
    I = np.eye(n)
    p.add_psd(Q - sdp.Affine(I))
    if margin:
        s = p.scalar("s")
        for A in As:
            p.add_psd(Q * m - Q.congruence(A) - s.scale(I))
        p.add_psd(sdp.Affine(1e6 * I) - Q)
        p.add_nonneg(1.0 - s)
        p.maximize(s)
    else:
        for A in As:
            p.add_psd(Q * m - Q.congruence(A))
        tr = Q[0, 0]
        for j in range(1, n):
            tr = tr + Q[j, j]
        p.maximize(-tr)
    sol = sdp.solve(p, cfg.solver)
    if not sol.status.ok:
        return None
    Qv = sol.assignment["Q"]
    return 0.5 * (Qv + Qv.T)


def lyapunov_base(As, cfg: Config = DEFAULT):
    """Common quadratic Lyapunov function: ``(Q, eps, certificate)`` with ``q(A x) <= (1 - eps) q(x)``.

    Raises :class:`LyapunovInfeasible` when none is found.
    """
    As = [np.atleast_2d(np.asarray(A, dtype=float)) for A in As]
    if not As:
        raise ValueError("need at least one matrix")
    n = As[0].shape[0]
    for A in As:
        if A.shape != (n, n):
            raise ValueError("matrices must be square and of equal size")
        if _is_identity(A):
            raise ValueError("the identity is not a stable matrix")
    top = 1.0 - 1e-7
    if _lyapunov_sdp(As, top, cfg, False) is None:
        raise LyapunovInfeasible("no common Lyapunov function at rate 1")
    lo, hi = 0.0, top
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if _lyapunov_sdp(As, mid, cfg, False) is None:
            lo = mid
        else:
            hi = mid
    for frac in (1e-3, 1e-2, 0.1, 0.5):
        m = hi + frac * (1.0 - hi)
        Qv = _lyapunov_sdp(As, m, cfg, True)
        if Qv is not None:
            # The conditions are homogeneous in Q; bring the smallest eigenvalue back to about 1.
            Qv = Qv / np.linalg.eigvalsh(Qv)[0]
            Qv = 0.5 * (Qv + Qv.T)
        if Qv is None or not check_psd(IntervalArray.point(Qv)):
            continue
        cert = Certificate()
        Qi = IntervalArray.point(Qv)
        for A in As:
            Ai = IntervalArray.point(A)
            AQA = imatmul(imatmul(Ai.T, Qi), Ai).symmetrized()
            if not check_lmi([Qi, AQA], [m, -1.0]):
                break
            cert.add(lmi_step("cone.lyapunov", [Qi, AQA], [m, -1.0], "**", "(1 - eps) Q - A^T Q A > 0"))
        else:
            eps = (Interval.point(1.0) - m).lo
            return Qv, eps, cert
    raise LyapunovInfeasible("Lyapunov candidate could not be certified")


def min_stable_beta(Q, c, A, b, delta, eps: float) -> float:
    """Upper bound on the smallest slope making the cone invariant under ``x -> A x + b``."""
    if not 0.0 < eps < 1.0:
        raise ValueError("Lyapunov margin must lie in (0, 1)")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    A = np.atleast_2d(np.asarray(A, dtype=float))
    AmI = IntervalArray.point(A) - IntervalArray.point(np.eye(n))
    c = IntervalArray.point(np.asarray(c, dtype=float).reshape(-1))
    b = IntervalArray.point(np.asarray(b, dtype=float).reshape(-1))
    d = IntervalArray.point(np.asarray(delta, dtype=float).reshape(-1))
    M = imatmul(AmI, c) + b - d
    first = _norm_q(Q, M)
    eta = Interval.point(1.0) - (Interval.point(1.0) - eps).sqrt()
    if not eta.lo > 0.0:
        raise ValueError("Lyapunov margin too small to bound")
    second = _norm_q(Q, imatmul(AmI, d)) / eta
    return max(first.hi, second.hi)
