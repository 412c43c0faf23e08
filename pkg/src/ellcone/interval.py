"""Outward-rounded interval arithmetic and the interval LMI checker.

This is the trusted core: every soundness claim made elsewhere in the
package reduces to :func:`check_lmi` (or :func:`check_le`) returning a
positive verdict. Rounding is handled by widening each endpoint by one
unit in the last place after every IEEE operation, which is sound because
the basic operations are correctly rounded; no rounding-mode state is
touched.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_INF = math.inf


class IntervalDomainError(ValueError):
    """Raised for division by an interval containing zero or sqrt of negatives."""


class NotPositiveDefinite(ArithmeticError):
    """Interval LDL^T could not certify a positive pivot."""

    def __init__(self, pivot: int, interval: "Interval"):
        super().__init__(f"pivot {pivot} interval {interval} is not strictly positive")
        self.pivot = pivot
        self.interval = interval


class Verdict(enum.Enum):
    CERTIFIED = "certified"
    UNKNOWN = "unknown"

    def __bool__(self) -> bool:
        return self is Verdict.CERTIFIED


def _down(x):
    return np.nextafter(x, -_INF)


def _up(x):
    return np.nextafter(x, _INF)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoint is NaN")
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, x: float) -> "Interval":
        x = float(x)
        return cls(x, x)

    @property
    def mid(self) -> float:
        return 0.5 * self.lo + 0.5 * self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __contains__(self, x) -> bool:
        return self.lo <= x <= self.hi

    def __add__(self, other):
        return interval_op(self, _as_interval(other), "+")

    __radd__ = __add__

    def __sub__(self, other):
        return interval_op(self, _as_interval(other), "-")

    def __rsub__(self, other):
        return interval_op(_as_interval(other), self, "-")

    def __mul__(self, other):
        return interval_op(self, _as_interval(other), "*")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return interval_op(self, _as_interval(other), "/")

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def sqrt(self) -> "Interval":
        return interval_op(self, self, "sqrt")

    def __repr__(self):
        return f"[{self.lo!r}, {self.hi!r}]"


def _as_interval(x) -> Interval:
    return x if isinstance(x, Interval) else Interval.point(x)


def interval_op(a: Interval, b: Interval, op: str) -> Interval:
    """Apply ``op`` (one of ``+ - * / sqrt``) with outward rounding.

    For ``sqrt`` the second operand is ignored.
    """
    if op == "+":
        return Interval(float(_down(a.lo + b.lo)), float(_up(a.hi + b.hi)))
    if op == "-":
        return Interval(float(_down(a.lo - b.hi)), float(_up(a.hi - b.lo)))
    if op == "*":
        ps = (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
        return Interval(float(_down(min(ps))), float(_up(max(ps))))
    if op == "/":
        if b.lo <= 0.0 <= b.hi:
            raise IntervalDomainError(f"division by interval {b} containing 0")
        qs = (a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi)
        return Interval(float(_down(min(qs))), float(_up(max(qs))))
    if op == "sqrt":
        if a.lo < 0.0:
            raise IntervalDomainError(f"sqrt of interval {a} with negative part")
        lo = float(_down(math.sqrt(a.lo))) if a.lo > 0 else 0.0
        return Interval(max(lo, 0.0), float(_up(math.sqrt(a.hi))))
    raise ValueError(f"unknown interval operation {op!r}")


class IntervalArray:
    """Dense array of intervals stored as two float64 arrays."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo = np.array(lo, dtype=float)
        hi = lo.copy() if hi is None else np.array(hi, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("endpoint arrays differ in shape")
        if np.isnan(lo).any() or np.isnan(hi).any():
            raise ValueError("interval endpoint is NaN")
        if (lo > hi).any():
            raise ValueError("interval with lo > hi")
        self.lo = lo
        self.hi = hi

    @classmethod
    def point(cls, x) -> "IntervalArray":
        return cls(x)

    @classmethod
    def from_intervals(cls, rows) -> "IntervalArray":
        arr = np.asarray(rows, dtype=object)
        lo = np.vectorize(lambda iv: _as_interval(iv).lo, otypes=[float])(arr)
        hi = np.vectorize(lambda iv: _as_interval(iv).hi, otypes=[float])(arr)
        return cls(lo, hi)

    @property
    def shape(self):
        return self.lo.shape

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * self.lo + 0.5 * self.hi

    @property
    def T(self) -> "IntervalArray":
        return IntervalArray(self.lo.T, self.hi.T)

    @property
    def is_point(self) -> bool:
        return bool(np.array_equal(self.lo, self.hi))

    def __getitem__(self, idx):
        lo, hi = self.lo[idx], self.hi[idx]
        if np.ndim(lo) == 0:
            return Interval(float(lo), float(hi))
        return IntervalArray(lo, hi)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.lo <= x) and np.all(x <= self.hi))

    def __add__(self, other):
        o = _as_array(other)
        return IntervalArray(_down(self.lo + o.lo), _up(self.hi + o.hi))

    __radd__ = __add__

    def __sub__(self, other):
        o = _as_array(other)
        return IntervalArray(_down(self.lo - o.hi), _up(self.hi - o.lo))

    def __rsub__(self, other):
        return _as_array(other) - self

    def __neg__(self):
        return IntervalArray(-self.hi, -self.lo)

    def __mul__(self, other):
        o = _as_array(other)
        ps = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        return IntervalArray(_down(np.minimum.reduce(ps)), _up(np.maximum.reduce(ps)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _as_array(other)
        if np.any((o.lo <= 0.0) & (o.hi >= 0.0)):
            raise IntervalDomainError("division by interval containing 0")
        qs = (self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi)
        return IntervalArray(_down(np.minimum.reduce(qs)), _up(np.maximum.reduce(qs)))

    def sqrt(self) -> "IntervalArray":
        if np.any(self.lo < 0.0):
            raise IntervalDomainError("sqrt of interval with negative part")
        lo = np.maximum(_down(np.sqrt(self.lo)), 0.0)
        return IntervalArray(lo, _up(np.sqrt(self.hi)))

    def __matmul__(self, other):
        return imatmul(self, _as_array(other))

    def __rmatmul__(self, other):
        return imatmul(_as_array(other), self)

    def sum(self) -> Interval:
        acc = Interval.point(0.0)
        for lo, hi in zip(self.lo.ravel(), self.hi.ravel()):
            acc = acc + Interval(float(lo), float(hi))
        return acc

    def hull(self, other: "IntervalArray") -> "IntervalArray":
        return IntervalArray(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def symmetrized(self) -> "IntervalArray":
        """Hull of the matrix with its transpose (sound for symmetric truths)."""
        return self.hull(self.T)

    def __repr__(self):
        return f"IntervalArray(lo={self.lo!r}, hi={self.hi!r})"


# A symmetric square IntervalArray is what the checker consumes.
IntervalMatrix = IntervalArray


def _as_array(x) -> IntervalArray:
    if isinstance(x, IntervalArray):
        return x
    if isinstance(x, Interval):
        return IntervalArray(x.lo, x.hi)
    return IntervalArray.point(x)


def imatmul(a: IntervalArray, b: IntervalArray) -> IntervalArray:
    """Interval matrix product, accumulating one rank-1 term at a time."""
    alo, ahi, blo, bhi = a.lo, a.hi, b.lo, b.hi
    vec_a = alo.ndim == 1
    vec_b = blo.ndim == 1
    if vec_a:
        alo, ahi = alo[None, :], ahi[None, :]
    if vec_b:
        blo, bhi = blo[:, None], bhi[:, None]
    if alo.shape[1] != blo.shape[0]:
        raise ValueError(f"shape mismatch {alo.shape} @ {blo.shape}")
    m, p = alo.shape[0], blo.shape[1]
    acc_lo = np.zeros((m, p))
    acc_hi = np.zeros((m, p))
    for k in range(alo.shape[1]):
        x_lo, x_hi = alo[:, k:k + 1], ahi[:, k:k + 1]
        y_lo, y_hi = blo[k:k + 1, :], bhi[k:k + 1, :]
        ps = (x_lo * y_lo, x_lo * y_hi, x_hi * y_lo, x_hi * y_hi)
        t_lo = _down(np.minimum.reduce(ps))
        t_hi = _up(np.maximum.reduce(ps))
        if k == 0:
            acc_lo, acc_hi = t_lo, t_hi
        else:
            acc_lo = _down(acc_lo + t_lo)
            acc_hi = _up(acc_hi + t_hi)
    if vec_a and vec_b:
        return IntervalArray(acc_lo[0, 0], acc_hi[0, 0])
    if vec_a:
        return IntervalArray(acc_lo[0], acc_hi[0])
    if vec_b:
        return IntervalArray(acc_lo[:, 0], acc_hi[:, 0])
    return IntervalArray(acc_lo, acc_hi)


def quad_form(Q, v) -> Interval:
    """Enclosure of ``v^T Q v`` for interval or point ``Q`` and ``v``."""
    Q, v = _as_array(Q), _as_array(v)
    r = imatmul(imatmul(v, Q), v)
    return Interval(float(r.lo), float(r.hi))


@dataclass(frozen=True)
class LdltResult:
    """``L`` is the midpoint unit-lower factor; ``L_enclosure`` the interval one."""

    L: np.ndarray
    D: tuple
    L_enclosure: IntervalArray


def _check_symmetric(A: IntervalArray) -> None:
    if A.lo.ndim != 2 or A.lo.shape[0] != A.lo.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not (np.array_equal(A.lo, A.lo.T) and np.array_equal(A.hi, A.hi.T)):
        raise ValueError("interval matrix is not structurally symmetric")


def ldlt_interval(A: IntervalArray) -> LdltResult:
    """Interval LDL^T without pivoting.

    Every point matrix inside ``A`` follows an elimination whose
    intermediate quantities lie in the computed enclosures, so strictly
    positive pivot intervals prove every such matrix positive definite.
    Raises :class:`NotPositiveDefinite` on the first non-positive pivot.
    """
    _check_symmetric(A)
    n = A.shape[0]
    S_lo, S_hi = A.lo.copy(), A.hi.copy()
    L_lo, L_hi = np.eye(n), np.eye(n)
    D = []
    for j in range(n):
        d = Interval(float(S_lo[j, j]), float(S_hi[j, j]))
        if not d.lo > 0.0:
            raise NotPositiveDefinite(j, d)
        D.append(d)
        if j == n - 1:
            break
        col = IntervalArray(S_lo[j + 1:, j], S_hi[j + 1:, j])
        lcol = col / IntervalArray(d.lo, d.hi)
        L_lo[j + 1:, j], L_hi[j + 1:, j] = lcol.lo, lcol.hi
        # Schur update on the trailing block, lower products only, then
        # symmetrize so later columns see one consistent enclosure.
        upd = IntervalArray(lcol.lo[:, None], lcol.hi[:, None]) * IntervalArray(col.lo[None, :], col.hi[None, :])
        block = IntervalArray(S_lo[j + 1:, j + 1:], S_hi[j + 1:, j + 1:]) - upd
        block = block.symmetrized()
        S_lo[j + 1:, j + 1:], S_hi[j + 1:, j + 1:] = block.lo, block.hi
    L_enc = IntervalArray(L_lo, L_hi)
    return LdltResult(L=L_enc.mid, D=tuple(D), L_enclosure=L_enc)


def check_psd(A: IntervalArray) -> Verdict:
    """Certify that every symmetric matrix enclosed by ``A`` is positive definite."""
    _check_symmetric(A)
    if A.shape[0] == 0:
        return Verdict.CERTIFIED
    try:
        res = ldlt_interval(A)
    except NotPositiveDefinite:
        return Verdict.UNKNOWN
    return Verdict.CERTIFIED if all(d.lo > 0.0 for d in res.D) else Verdict.UNKNOWN


def lmi_sum(matrices: Sequence, multipliers: Sequence[float]) -> IntervalArray:
    """``sum_i alpha_i A_i`` evaluated in interval arithmetic."""
    if len(matrices) != len(multipliers):
        raise ValueError(f"{len(matrices)} matrices but {len(multipliers)} multipliers")
    if not matrices:
        raise ValueError("empty LMI")
    mats = [_as_array(m) for m in matrices]
    shape = mats[0].shape
    for m in mats:
        if m.shape != shape:
            raise ValueError(f"dimension mismatch: {m.shape} vs {shape}")
    total = None
    for m, a in zip(mats, multipliers):
        term = m * IntervalArray.point(float(a))
        total = term if total is None else total + term
    return total.symmetrized()


def check_lmi(matrices: Sequence, multipliers: Sequence[float]) -> Verdict:
    """Certify ``sum_i alpha_i A_i`` positive definite for every enclosed ``A_i``."""
    if not all(math.isfinite(float(a)) for a in multipliers):
        return Verdict.UNKNOWN
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            total = lmi_sum(matrices, multipliers)
        except ValueError:
            if len(matrices) != len(multipliers) or len({_as_array(m).shape for m in matrices}) > 1:
                raise
            return Verdict.UNKNOWN
        if not (np.all(np.isfinite(total.lo)) and np.all(np.isfinite(total.hi))):
            return Verdict.UNKNOWN
        return check_psd(total)


def check_le(lhs, rhs) -> Verdict:
    """Certify ``lhs <= rhs`` for every real enclosed by the two intervals."""
    lhs, rhs = _as_interval(lhs), _as_interval(rhs)
    return Verdict.CERTIFIED if lhs.hi <= rhs.lo else Verdict.UNKNOWN


def exact_sum(a, b):
    """``a + b`` in floating point, plus a flag telling whether it was exact."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, bool(np.all(err == 0.0) and np.all(np.isfinite(s)))


def round_up(x: float, ulps: int = 4) -> float:
    """Step ``x`` upward by a few ulps; used to make closed-form bounds strict."""
    for _ in range(ulps):
        x = math.nextafter(x, _INF)
    return x
