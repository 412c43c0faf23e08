"""Certificates: replayable LMI witnesses and their text serialization.

This module depends only on :mod:`ellcone.interval`, so a checker built
on it never links the solver.

File layout (one record per line, hexadecimal floats throughout)::

    ellcone-certificate 1
    note <free text>
    step lmi <op-tag>
    claim <free text>
    alpha <sign> <hex>          # sign is + (>= 0), - (<= 0) or * (free)
    matrix <rows> <cols>
    <entry> ...                 # entry is <hex> or <lo-hex>:<hi-hex>
    end
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .interval import IntervalArray, Verdict, check_le, check_lmi

FORMAT_HEADER = "ellcone-certificate"
FORMAT_VERSION = 1


class CertificateFormatError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


@dataclass(frozen=True)
class Step:
    """One replayable fact.

    ``kind == "lmi"``: ``sum alpha_i * matrices[i]`` is positive definite and
    every multiplier satisfies its sign flag.
    ``kind == "le"``: the 1x1 interval ``matrices[0]`` lies below ``matrices[1]``.
    """

    op: str
    kind: str
    matrices: tuple
    multipliers: tuple = ()
    signs: str = ""
    claim: str = ""

    def __post_init__(self):
        if self.kind not in ("lmi", "le"):
            raise ValueError(f"unknown step kind {self.kind!r}")
        if self.kind == "lmi" and len(self.signs) != len(self.multipliers):
            raise ValueError("one sign flag per multiplier")

    def verify(self) -> Verdict:
        if self.kind == "le":
            if len(self.matrices) != 2 or any(m.shape != (1, 1) for m in self.matrices):
                return Verdict.UNKNOWN
            return check_le(self.matrices[0][0, 0], self.matrices[1][0, 0])
        for a, s in zip(self.multipliers, self.signs):
            if (s == "+" and not a >= 0.0) or (s == "-" and not a <= 0.0):
                return Verdict.UNKNOWN
        try:
            return check_lmi(list(self.matrices), list(self.multipliers))
        except ValueError:
            return Verdict.UNKNOWN


def lmi_step(op, matrices, multipliers, signs, claim="") -> Step:
    mats = tuple(m if isinstance(m, IntervalArray) else IntervalArray.point(m) for m in matrices)
    return Step(op, "lmi", mats, tuple(float(a) for a in multipliers), signs, claim)


def le_step(op, lhs, rhs, claim="") -> Step:
    def one(x):
        if isinstance(x, IntervalArray):
            return IntervalArray(np.reshape(x.lo, (1, 1)), np.reshape(x.hi, (1, 1)))
        lo, hi = (x.lo, x.hi) if hasattr(x, "lo") else (float(x), float(x))
        return IntervalArray([[lo]], [[hi]])

    return Step(op, "le", (one(lhs), one(rhs)), (), "", claim)


@dataclass
class Certificate:
    steps: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def add(self, step: Step) -> None:
        self.steps.append(step)

    def extend(self, other: "Certificate | Iterable[Step]") -> None:
        if isinstance(other, Certificate):
            self.steps.extend(other.steps)
            for n in other.notes:
                if n not in self.notes:
                    self.notes.append(n)
        else:
            self.steps.extend(other)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def failures(self) -> list[int]:
        """Indices of steps that do not replay."""
        return [i for i, s in enumerate(self.steps) if not s.verify()]

    def dumps(self) -> str:
        out = [f"{FORMAT_HEADER} {FORMAT_VERSION}"]
        for n in self.notes:
            out.append(f"note {_one_line(n)}")
        for s in self.steps:
            out.append(f"step {s.kind} {s.op}")
            out.append(f"claim {_one_line(s.claim)}")
            for a, sg in zip(s.multipliers, s.signs):
                out.append(f"alpha {sg} {float(a).hex()}")
            for m in s.matrices:
                lo, hi = np.atleast_2d(m.lo), np.atleast_2d(m.hi)
                out.append(f"matrix {lo.shape[0]} {lo.shape[1]}")
                for i in range(lo.shape[0]):
                    out.append(" ".join(_entry(lo[i, j], hi[i, j]) for j in range(lo.shape[1])))
            out.append("end")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Certificate":
        lines = text.splitlines()
        if not lines:
            raise CertificateFormatError("empty file")
        head = lines[0].split()
        if len(head) != 2 or head[0] != FORMAT_HEADER:
            raise CertificateFormatError("missing header", 1)
        if head[1] != str(FORMAT_VERSION):
            raise CertificateFormatError(f"unsupported version {head[1]}", 1)
        cert = cls()
        i = 1
        while i < len(lines):
            line = lines[i]
            lineno = i + 1
            if line.startswith("note "):
                cert.notes.append(line[5:])
                i += 1
                continue
            if not line.strip():
                i += 1
                continue
            parts = line.split()
            if parts[0] != "step" or len(parts) != 3:
                raise CertificateFormatError(f"expected 'step', got {line!r}", lineno)
            kind, op = parts[1], parts[2]
            i += 1
            if i >= len(lines) or not lines[i].startswith("claim"):
                raise CertificateFormatError("expected 'claim'", i + 1)
            claim = lines[i][6:] if len(lines[i]) > 6 else ""
            i += 1
            alphas, signs, mats = [], [], []
            while True:
                if i >= len(lines):
                    raise CertificateFormatError("unterminated step", i)
                parts = lines[i].split()
                if not parts:
                    raise CertificateFormatError("blank line inside step", i + 1)
                if parts[0] == "end":
                    i += 1
                    break
                if parts[0] == "alpha":
                    if len(parts) != 3 or parts[1] not in "+-*":
                        raise CertificateFormatError("bad alpha record", i + 1)
                    signs.append(parts[1])
                    alphas.append(_hex(parts[2], i + 1))
                    i += 1
                elif parts[0] == "matrix":
                    try:
                        r, c = int(parts[1]), int(parts[2])
                    except (IndexError, ValueError):
                        raise CertificateFormatError("bad matrix header", i + 1) from None
                    lo = np.zeros((r, c))
                    hi = np.zeros((r, c))
                    for row in range(r):
                        i += 1
                        if i >= len(lines):
                            raise CertificateFormatError("truncated matrix", i)
                        toks = lines[i].split()
                        if len(toks) != c:
                            raise CertificateFormatError(f"expected {c} entries", i + 1)
                        for col, tok in enumerate(toks):
                            a, _, b = tok.partition(":")
                            lo[row, col] = _hex(a, i + 1)
                            hi[row, col] = _hex(b, i + 1) if b else lo[row, col]
                    # a NaN or inverted entry encloses nothing useful: widen it so replay says Unknown
                    bad = np.isnan(lo) | np.isnan(hi) | (lo > hi)
                    lo[bad], hi[bad] = -np.inf, np.inf
                    try:
                        mats.append(IntervalArray(lo, hi))
                    except ValueError as exc:
                        raise CertificateFormatError(str(exc), i + 1) from None
                    i += 1
                else:
                    raise CertificateFormatError(f"unexpected record {parts[0]!r}", i + 1)
            try:
                cert.steps.append(Step(op, kind, tuple(mats), tuple(alphas), "".join(signs), claim))
            except ValueError as exc:
                raise CertificateFormatError(str(exc), i) from None
        return cert


def _one_line(s: str) -> str:
    return " ".join(str(s).split())


def _entry(lo: float, hi: float) -> str:
    if lo == hi and (lo != 0.0 or np.signbit(lo) == np.signbit(hi)):
        return float(lo).hex()
    return f"{float(lo).hex()}:{float(hi).hex()}"


def _hex(tok: str, line: int) -> float:
    try:
        v = float.fromhex(tok)
    except ValueError:
        raise CertificateFormatError(f"bad hex float {tok!r}", line) from None
    return v
