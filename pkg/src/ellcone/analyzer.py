"""Fixpoint engine: drives the cone domain through a parsed program.

Each loop gets a fresh counter. The loop-head invariant ``H`` starts from a
base-selection policy, then every affine path ``p`` of the body is checked
with ``cone_includes(post_p(H), H)``; paths that escape are absorbed by
widening. A point where a certification step fails becomes top (``None``).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .certificate import Certificate
from .cone import (Cone, CounterSlot, LyapunovInfeasible, WideningError, add_counter, cone_affine,
                   cone_includes, cone_join, counter_increment, lyapunov_base, min_stable_beta,
                   ratio_bound, remove_counter, translation_invariant, widen)
from .config import DEFAULT, Config
from .ellipsoid import CertificationError, Ellipsoid, _is_identity, _pad_schedule, affine_image, includes, join
from .interval import Interval, IntervalArray, IntervalDomainError, quad_form, round_up
from .lang import Assign, Choose, Loop, Nop, Program, flat_paths

logger = logging.getLogger(__name__)

# Failures that turn a program point into top rather than aborting the run.
DOMAIN_ERRORS = (CertificationError, WideningError, LyapunovInfeasible, ArithmeticError, IntervalDomainError)

SNAP = 2.0 ** -20


@dataclass
class LoopReport:
    counter: str
    policy: str
    iterations: int = 0
    widenings: int = 0
    capped: bool = False
    stable: bool = False
    bounds: tuple = (0, 0)
    horizon_relative: bool = False
    lyapunov_eps: float | None = None
    bootstrap_volume: float | None = None
    error: str | None = None


@dataclass
class _LoopData:
    head: Cone
    paths: list | None
    body: tuple
    index: int
    counters: tuple


@dataclass
class AnalysisResult:
    program: Program
    cfg: Config
    points: dict = field(default_factory=dict)
    counters_at: dict = field(default_factory=dict)
    sidecar: dict = field(default_factory=dict)
    certificate: Certificate = field(default_factory=Certificate)
    loops: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    loop_data: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return any(v is None for v in self.points.values())

    @property
    def final(self) -> Cone | None:
        return self.points.get("end")

    def contains(self, point: str, x, y=()) -> bool:
        C = self.points[point]
        if C is None:
            return True
        return bool(C.predicate(np.atleast_2d(x), np.atleast_2d(np.asarray(y, dtype=float)).reshape(1, -1))[0])


def counter_intervals(p: Program, cfg: Config = DEFAULT) -> dict:
    """``{counter: (lo, hi, horizon_relative)}`` from the loop syntax alone."""
    out = {}
    for lp in p.loops():
        if lp.bound is None:
            out[lp.counter] = (0, cfg.horizon, True)
        else:
            out[lp.counter] = (0, lp.bound, False)
    return out


def initial_ellipsoid(p: Program, cfg: Config = DEFAULT) -> Ellipsoid:
    """A point becomes a ball of radius ``epsilon``; a box its circumscribed axis-aligned ellipsoid."""
    n = p.n
    lo, hi = p.init.lo, p.init.hi
    c = 0.5 * lo + 0.5 * hi
    h = np.maximum(0.5 * (hi - lo), cfg.epsilon)
    # sum_i (x_i - c_i)^2 / (n h_i^2) <= 1 holds on every corner; pad so rounding cannot cut one off.
    return Ellipsoid(np.diag(1.0 / (n * h * h * (1.0 + 1e-9))), c)


class _Analyzer:
    def __init__(self, prog: Program, cfg: Config):
        self.prog = prog
        self.cfg = cfg
        self.res = AnalysisResult(prog, cfg)
        self.res.sidecar = counter_intervals(prog, cfg)

    def run(self) -> AnalysisResult:
        t0 = time.perf_counter()
        calls0 = sdp.solve_calls
        C = Cone(initial_ellipsoid(self.prog, self.cfg), ())
        C = self.block(self.prog.body, C, ())
        self.res.points["end"] = C
        self.res.counters_at["end"] = ()
        self.res.stats.update(seconds=time.perf_counter() - t0, solver_calls=sdp.solve_calls - calls0,
                              iterations=sum(lp.iterations for lp in self.res.loops),
                              widenings=sum(lp.widenings for lp in self.res.loops))
        return self.res

    def block(self, stmts, C, counters):
        for s in stmts:
            C = self.stmt(s, C, counters)
        return C

    def top_inside(self, s, counters):
        for lp in _loops_in(s):
            self.res.points[f"head:{lp.counter}"] = None
            self.res.points[f"exit:{lp.counter}"] = None
            self.res.counters_at[f"head:{lp.counter}"] = counters + (lp.counter,)
            self.res.counters_at[f"exit:{lp.counter}"] = counters

    def stmt(self, s, C, counters):
        if C is None:
            self.top_inside(s, counters)
            return None
        try:
            if isinstance(s, Nop):
                return C
            if isinstance(s, Assign):
                out, cert = cone_affine(C, s.A, s.b, self.cfg)
                self.res.certificate.extend(cert)
                return out
            if isinstance(s, Choose):
                outs = [self.block(br, C, counters) for br in s.branches]
                if any(o is None for o in outs):
                    return None
                out, cert = cone_join(outs, self.cfg)
                self.res.certificate.extend(cert)
                return out
            if isinstance(s, Loop):
                return self.loop(s, C, counters)
        except DOMAIN_ERRORS as exc:
            msg = f"line {getattr(s, 'line', '?')}: {type(exc).__name__}: {exc}"
            logger.info("top at %s", msg)
            self.res.errors.append(msg)
            self.top_inside(s, counters)
            return None
        raise TypeError(f"unknown statement {s!r}")

    # -- loops ---------------------------------------------------------------

    def posts(self, H, data: _LoopData):
        """Images of ``H`` after one more iteration, one per path."""
        out = []
        if data.paths is not None:
            for A, b in data.paths:
                P, cert = cone_affine(H, A, b, self.cfg)
                out.append((counter_increment(P, data.index, 1.0), cert))
            return out
        P = self.block(data.body, H, data.counters)
        if P is None:
            raise CertificationError("loop body lost all information")
        return [(counter_increment(P, data.index, 1.0), Certificate())]

    def check_paths(self, H, data: _LoopData):
        """``(certificate, escaping posts)`` for one abstract iteration from ``H``."""
        cert = Certificate()
        failing = []
        if data.paths is not None:
            rest = []
            for A, b in data.paths:
                if _is_identity(A):
                    ok, c = translation_invariant(H, data.index, b)
                    if ok:
                        cert.extend(c)
                        continue
                rest.append((A, b))
            data = _LoopData(data.head, rest, data.body, data.index, data.counters)
        for P, c in self.posts(H, data):
            ok, _, ci = cone_includes(P, H, self.cfg)
            if ok:
                cert.extend(c)
                cert.extend(ci)
            else:
                failing.append(P)
        return cert, failing

    def loop(self, s: Loop, C_in: Cone, counters):
        cfg = self.cfg
        counters = counters + (s.counter,)
        idx = C_in.k
        C0 = add_counter(C_in, 0.0, known_exact=True)
        paths = flat_paths(s.body, C_in.n, cfg.max_paths)
        if paths is not None:
            paths = _unique(paths)
        data = _LoopData(C0, paths, s.body, idx, counters)
        report = LoopReport(s.counter, "generic")
        self.res.loops[:] = [r for r in self.res.loops if r.counter != s.counter]
        self.res.loops.append(report)
        head_key, exit_key = f"head:{s.counter}", f"exit:{s.counter}"
        self.res.counters_at[head_key] = counters
        self.res.counters_at[exit_key] = counters[:-1]
        try:
            H = self.initial(C0, paths, report, data)
            for it in range(1, cfg.beta_cap + 3):
                report.iterations = it
                cert, failing = self.check_paths(H, data)
                if not failing:
                    report.stable = True
                    self.res.certificate.extend(cert)
                    break
                cap = report.widenings >= cfg.beta_cap
                slack = 0.0 if report.widenings < cfg.widen_delay else cfg.slope_slack
                for P in failing:
                    H, wc = widen(H, P, cfg, slack=slack, cap=cap)
                    self.res.certificate.extend(wc)
                report.widenings += 1
                report.capped = report.capped or cap
            if not report.stable:
                raise WideningError(f"loop {s.counter} did not stabilize")
        except DOMAIN_ERRORS as exc:
            report.error = f"{type(exc).__name__}: {exc}"
            raise
        self.res.points[head_key] = H
        self.res.loop_data[s.counter] = _LoopData(H, paths, s.body, idx, counters)

        lo, hi, rel = self.res.sidecar[s.counter]
        slot = H.counters[idx]
        a = max(float(lo), slot.lam)
        report.bounds = (a, float(hi))
        report.horizon_relative = rel
        if rel:
            note = f"counter {s.counter} bounded by the analysis horizon {hi} (horizon-relative)"
            if note not in self.res.certificate.notes:
                self.res.certificate.notes.append(note)
        if not slot.extrapolated:
            a = hi = slot.lam
        elif math.isinf(slot.beta):
            self.res.points[exit_key] = None
            self.res.errors.append(f"line {s.line}: loop {s.counter} widened to an unbounded slope")
            return None
        out, cert = remove_counter(H, idx, (a, float(hi)), cfg)
        self.res.certificate.extend(cert)
        self.res.points[exit_key] = out
        return out

    def initial(self, C0: Cone, paths, report: LoopReport, data=None) -> Cone:
        """Starting loop-head candidate, certified to contain the entry cone ``C0``."""
        cfg = self.cfg
        if paths is None:
            return self.generic_initial(C0, data, report)
        idx = C0.k - 1
        entry = C0.base
        B = self.bootstrap(entry, paths)
        report.bootstrap_volume = B.volume_proxy()
        moving = [(A, b) for A, b in paths if not _is_identity(A)]
        shifts = [b for A, b in paths if _is_identity(A)]
        if moving:
            report.policy = "lyapunov"
            As = _unique_matrices([A for A, _ in moving])
            Q, eps, lc = lyapunov_base(As, cfg)
            report.lyapunov_eps = eps
            self.res.certificate.extend(lc)
            r, rc = ratio_bound(B.Q, Q, cfg)
            base = self.enclosing(entry, Q / (r * r), B.c)
            delta = np.zeros(C0.n)
            beta = 0.0
            for A, b in moving:
                beta = max(beta, min_stable_beta(base.Q, base.c, A, b, delta, eps))
        else:
            report.policy = "bootstrap"
            base = B
            delta = np.mean(shifts, axis=0) if shifts else np.zeros(C0.n)
            beta = 0.0
        for b in shifts:
            if not np.array_equal(b, delta):
                d = IntervalArray.point(b) - IntervalArray.point(delta)
                q = quad_form(base.Q, d)
                beta = max(beta, Interval(max(q.lo, 0.0), max(q.hi, 0.0)).sqrt().hi)
        if beta > 0.0:
            beta = round_up(beta * (1.0 + cfg.slope_slack) + cfg.slope_slack * 1e-3)
        slots = C0.counters[:idx] + (CounterSlot(beta, delta, 0.0, True),)
        H = Cone(base, slots)
        ok, _, cert = cone_includes(C0, H, cfg)
        if not ok:
            logger.info("policy candidate misses the entry; starting from the entry cone")
            report.policy += "+entry"
            return C0
        self.res.certificate.extend(cert)
        return H

    def generic_initial(self, C0: Cone, data: _LoopData, report: LoopReport) -> Cone:
        """Candidate for a body with nested loops: one abstract pass fixes the drift and base."""
        idx = C0.k - 1
        errors = list(self.res.errors)
        try:
            P = self.block(data.body, C0, data.counters)
        finally:
            self.res.errors[:] = errors
        if P is None:
            return C0
        entry = C0.base
        delta = P.base.c - entry.c
        back = Ellipsoid(P.base.Q, entry.c + (P.base.c - entry.c - delta))
        B = join([entry, back], self.cfg)[0]
        base = self.enclosing(entry, B.Q, np.round(B.c / SNAP) * SNAP)
        H = Cone(base, C0.counters[:idx] + (CounterSlot(0.0, delta, 0.0, True),))
        ok, _, cert = cone_includes(C0, H, self.cfg)
        if not ok:
            return C0
        report.policy = "bootstrap"
        self.res.certificate.extend(cert)
        return H

    def bootstrap(self, entry: Ellipsoid, paths) -> Ellipsoid:
        """Join of the entry and a few abstract iterates, center snapped to a dyadic grid."""
        cfg = self.cfg
        seen = [entry]
        cur = entry
        for _ in range(cfg.bootstrap_iters):
            imgs = [affine_image(cur, A, b, cfg.epsilon, cfg)[0] for A, b in paths]
            cur = imgs[0] if len(imgs) == 1 else join(imgs, cfg)[0]
            seen.append(cur)
        B = join(seen, cfg)[0] if len(seen) > 1 else entry
        return self.enclosing(entry, B.Q, np.round(B.c / SNAP) * SNAP)

    def enclosing(self, entry: Ellipsoid, Q, c) -> Ellipsoid:
        Q = 0.5 * (Q + Q.T)
        for f in _pad_schedule(self.cfg):
            cand = Ellipsoid(Q / (f * f), c)
            ok, _, _ = includes(entry, cand, self.cfg)
            if ok:
                return cand
        for j in range(1, 30):
            f = 2.0 ** j
            cand = Ellipsoid(Q / (f * f), c)
            if includes(entry, cand, self.cfg)[0]:
                return cand
        raise CertificationError("no enclosing base for the loop entry")


def _loops_in(s):
    if isinstance(s, Loop):
        yield s
        for t in s.body:
            yield from _loops_in(t)
    elif isinstance(s, Choose):
        for br in s.branches:
            for t in br:
                yield from _loops_in(t)


def _unique(paths):
    out = []
    for A, b in paths:
        if not any(np.array_equal(A, A2) and np.array_equal(b, b2) for A2, b2 in out):
            out.append((A, b))
    return out


def _unique_matrices(As):
    out = []
    for A in As:
        if not any(np.array_equal(A, A2) for A2 in out):
            out.append(A)
    return out


def analyze(p: Program, cfg: Config = DEFAULT) -> AnalysisResult:
    return _Analyzer(p, cfg).run()


def post_fixpoint_check(res: AnalysisResult) -> dict:
    """Re-run one abstract iteration from every loop-head invariant.

    Returns ``{counter: bool}``; independent of how the invariant was found.
    """
    out = {}
    an = _Analyzer(res.program, res.cfg)
    for name, data in res.loop_data.items():
        try:
            _, failing = an.check_paths(data.head, data)
            out[name] = not failing
        except DOMAIN_ERRORS:
            out[name] = False
    return out


def simulate(p: Program, rng: np.random.Generator, steps: int = 100):
    """One random concrete execution; returns ``[(point, x, counter_values), ...]``.

    Unbounded loops run a uniformly random number of iterations in ``[0, steps]``.
    """
    trace = []
    lo, hi = p.init.lo, p.init.hi
    x = lo + (hi - lo) * rng.random(p.n)

    def run(stmts, x, ys):
        for s in stmts:
            if isinstance(s, Assign):
                x = s.A @ x + s.b
            elif isinstance(s, Choose):
                x = run(s.branches[rng.integers(len(s.branches))], x, ys)
            elif isinstance(s, Loop):
                N = s.bound if s.bound is not None else int(rng.integers(0, steps + 1))
                for y in range(N + 1):
                    trace.append((f"head:{s.counter}", x.copy(), ys + (y,)))
                    if y == N:
                        break
                    x = run(s.body, x, ys + (y,))
                trace.append((f"exit:{s.counter}", x.copy(), ys))
        return x

    x = run(p.body, x, ())
    trace.append(("end", x.copy(), ()))
    return trace


def monte_carlo(res: AnalysisResult, runs: int = 1000, steps: int = 100, seed: int = 0) -> list:
    """Concrete states (from ``runs`` random executions) that escape the reported invariants."""
    rng = np.random.default_rng(seed)
    escapes = []
    for _ in range(runs):
        for point, x, ys in simulate(res.program, rng, steps):
            C = res.points.get(point)
            if C is None:
                continue
            if not C.predicate(x[None, :], np.asarray(ys, dtype=float)[None, :])[0]:
                escapes.append((point, x, ys))
    return escapes
