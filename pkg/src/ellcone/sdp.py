"""Small dense SDP modelling layer and solver front end.

Nothing here is trusted: results are candidates that callers re-check
with :mod:`ellcone.interval`. Problems are written with :class:`Affine`
matrix expressions over named unknowns and handed to cvxopt's
primal-dual interior-point ``sdp`` routine.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Running count of solver invocations, read by the analyzer's statistics.
solve_calls = 0


class Status(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"

    @property
    def ok(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-8
    max_iterations: int = 200


class Affine:
    """Affine matrix expression ``const + sum_j x_j * coeffs[j]``."""

    __slots__ = ("const", "coeffs")

    def __init__(self, const, coeffs=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.coeffs = coeffs or {}

    @property
    def shape(self):
        return self.const.shape

    @classmethod
    def constant(cls, m) -> "Affine":
        return cls(m)

    def __add__(self, other):
        other = _lift(other, self.shape)
        coeffs = dict(self.coeffs)
        for j, c in other.coeffs.items():
            coeffs[j] = coeffs[j] + c if j in coeffs else c
        return Affine(self.const + other.const, coeffs)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, {j: -c for j, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-_lift(other, self.shape))

    def __rsub__(self, other):
        return _lift(other, self.shape) - self

    def __mul__(self, s):
        s = float(s)
        return Affine(self.const * s, {j: c * s for j, c in self.coeffs.items()})

    __rmul__ = __mul__

    def scale(self, M) -> "Affine":
        """Scalar expression times a constant matrix."""
        if self.shape != (1, 1):
            raise ValueError("scale() needs a scalar expression")
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Affine(self.const[0, 0] * M, {j: c[0, 0] * M for j, c in self.coeffs.items()})

    def congruence(self, A) -> "Affine":
        """``A^T (self) A`` for a constant matrix ``A``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return Affine(A.T @ self.const @ A, {j: A.T @ c @ A for j, c in self.coeffs.items()})

    def __getitem__(self, idx) -> "Affine":
        i, j = idx
        return Affine(self.const[i:i + 1, j:j + 1] if isinstance(i, int) else self.const[i, j],
                      {k: (c[i:i + 1, j:j + 1] if isinstance(i, int) else c[i, j]) for k, c in self.coeffs.items()})

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, {j: c.T for j, c in self.coeffs.items()})

    def value(self, x: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for j, c in self.coeffs.items():
            out = out + x[j] * c
        return out


def _lift(x, shape) -> Affine:
    if isinstance(x, Affine):
        if x.shape != shape:
            raise ValueError(f"shape mismatch {x.shape} vs {shape}")
        return x
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(shape, float(arr))
    return Affine(arr)


def bmat(blocks) -> Affine:
    """Assemble a block matrix of Affine / constant / None (zero) entries."""
    rows = len(blocks)
    cols = len(blocks[0])
    heights = [None] * rows
    widths = [None] * cols
    for i in range(rows):
        for j in range(cols):
            b = blocks[i][j]
            if b is None:
                continue
            shp = b.shape if isinstance(b, Affine) else np.atleast_2d(np.asarray(b)).shape
            heights[i] = shp[0]
            widths[j] = shp[1]
    if None in heights or None in widths:
        raise ValueError("every block row/column needs one sized entry")
    H, W = sum(heights), sum(widths)
    const = np.zeros((H, W))
    coeffs: dict[int, np.ndarray] = {}
    r0 = 0
    for i in range(rows):
        c0 = 0
        for j in range(cols):
            b = blocks[i][j]
            h, w = heights[i], widths[j]
            if b is not None:
                b = _lift(b, (h, w)) if not isinstance(b, Affine) else b
                const[r0:r0 + h, c0:c0 + w] = b.const
                for k, c in b.coeffs.items():
                    if k not in coeffs:
                        coeffs[k] = np.zeros((H, W))
                    coeffs[k][r0:r0 + h, c0:c0 + w] = c
            c0 += w
        r0 += h
    return Affine(const, coeffs)


@dataclass
class SdpSolution:
    status: Status
    assignment: dict = field(default_factory=dict)
    objective_value: float = float("nan")
    iterations: int = 0


class SdpProblem:
    """Maximize a scalar affine objective subject to ``expr >= 0`` (PSD) constraints."""

    def __init__(self):
        self._n = 0
        self._vars: dict[str, tuple] = {}
        self.constraints: list[Affine] = []
        self.equalities: list[Affine] = []
        self.objective: Affine | None = None

    @property
    def num_unknowns(self) -> int:
        return self._n

    def _fresh(self, name: str, count: int) -> range:
        if name in self._vars:
            raise ValueError(f"unknown {name!r} declared twice")
        idx = range(self._n, self._n + count)
        self._n += count
        return idx

    def scalar(self, name: str) -> Affine:
        (j,) = self._fresh(name, 1)
        self._vars[name] = ("scalar", j)
        return Affine(np.zeros((1, 1)), {j: np.ones((1, 1))})

    def symmetric(self, name: str, n: int) -> Affine:
        idx = iter(self._fresh(name, n * (n + 1) // 2))
        coeffs = {}
        layout = []
        for i in range(n):
            for k in range(i + 1):
                j = next(idx)
                E = np.zeros((n, n))
                E[i, k] = E[k, i] = 1.0
                coeffs[j] = E
                layout.append((i, k, j))
        self._vars[name] = ("symmetric", n, layout)
        return Affine(np.zeros((n, n)), coeffs)

    def lower_triangular(self, name: str, n: int) -> Affine:
        idx = iter(self._fresh(name, n * (n + 1) // 2))
        coeffs = {}
        layout = []
        for i in range(n):
            for k in range(i + 1):
                j = next(idx)
                E = np.zeros((n, n))
                E[i, k] = 1.0
                coeffs[j] = E
                layout.append((i, k, j))
        self._vars[name] = ("lower", n, layout)
        return Affine(np.zeros((n, n)), coeffs)

    def vector(self, name: str, n: int) -> Affine:
        idx = list(self._fresh(name, n))
        coeffs = {}
        for i, j in enumerate(idx):
            e = np.zeros((n, 1))
            e[i, 0] = 1.0
            coeffs[j] = e
        self._vars[name] = ("vector", n, idx)
        return Affine(np.zeros((n, 1)), coeffs)

    def add_psd(self, expr: Affine) -> None:
        if expr.shape[0] != expr.shape[1]:
            raise ValueError("PSD constraint must be square")
        self.constraints.append(expr)

    def add_nonneg(self, expr: Affine) -> None:
        if expr.shape != (1, 1):
            raise ValueError("nonnegativity needs a scalar expression")
        self.constraints.append(expr)

    def add_equal(self, lhs: Affine, rhs) -> None:
        self.equalities.append(lhs - rhs)

    def maximize(self, expr: Affine) -> None:
        if expr.shape != (1, 1):
            raise ValueError("objective must be scalar")
        self.objective = expr

    def unpack(self, x: np.ndarray) -> dict:
        out = {}
        for name, spec in self._vars.items():
            kind = spec[0]
            if kind == "scalar":
                out[name] = float(x[spec[1]])
            elif kind == "vector":
                out[name] = np.array([x[j] for j in spec[2]])
            else:
                M = np.zeros((spec[1], spec[1]))
                for i, k, j in spec[2]:
                    M[i, k] = x[j]
                    if kind == "symmetric":
                        M[k, i] = x[j]
                out[name] = M
        return out


def solve(p: SdpProblem, cfg: SolverConfig = SolverConfig()) -> SdpSolution:
    """Solve with cvxopt. No soundness contract; callers must certify."""
    global solve_calls
    from cvxopt import matrix, solvers

    solve_calls += 1

    m = p.num_unknowns
    c = np.zeros(m)
    if p.objective is not None:
        for j, coef in p.objective.coeffs.items():
            c[j] = -coef[0, 0]

    lin_rows, lin_h = [], []
    Gs, hs = [], []
    for expr in p.constraints:
        k = expr.shape[0]
        if k == 1:
            row = np.zeros(m)
            for j, coef in expr.coeffs.items():
                row[j] = -coef[0, 0]
            lin_rows.append(row)
            lin_h.append(expr.const[0, 0])
            continue
        G = np.zeros((k * k, m))
        for j, coef in expr.coeffs.items():
            G[:, j] = -coef.ravel(order="F")
        Gs.append(matrix(G))
        hs.append(matrix(np.ascontiguousarray(expr.const)))

    kwargs = {}
    if lin_rows:
        kwargs["Gl"] = matrix(np.array(lin_rows))
        kwargs["hl"] = matrix(np.array(lin_h, dtype=float))
    if p.equalities:
        A = np.zeros((len(p.equalities), m))
        b = np.zeros(len(p.equalities))
        for r, e in enumerate(p.equalities):
            for j, coef in e.coeffs.items():
                A[r, j] = coef[0, 0]
            b[r] = -e.const[0, 0]
        kwargs["A"] = matrix(A)
        kwargs["b"] = matrix(b)

    options = {
        "show_progress": False,
        "maxiters": int(cfg.max_iterations),
        "abstol": cfg.tolerance,
        "reltol": cfg.tolerance,
        "feastol": min(1e-7, cfg.tolerance * 10),
    }
    try:
        res = solvers.sdp(matrix(c), Gs=Gs or None, hs=hs or None, options=options, **kwargs)
    except (ArithmeticError, ValueError) as exc:
        logger.debug("cvxopt raised %s", exc)
        return SdpSolution(Status.NUMERICAL_FAILURE)

    status = res["status"]
    iters = int(res.get("iterations", 0) or 0)
    if status == "primal infeasible":
        return SdpSolution(Status.INFEASIBLE, iterations=iters)
    if res["x"] is None:
        return SdpSolution(Status.NUMERICAL_FAILURE, iterations=iters)
    x = np.array(res["x"]).ravel()
    if status == "optimal":
        st = Status.OPTIMAL
    elif status == "unknown" and iters < cfg.max_iterations and _max_violation(p, x) <= 1e-6:
        st = Status.FEASIBLE
    else:
        return SdpSolution(Status.NUMERICAL_FAILURE, iterations=iters)
    obj = float(p.objective.value(x)[0, 0]) if p.objective is not None else 0.0
    return SdpSolution(st, p.unpack(x), obj, iters)


def _max_violation(p: SdpProblem, x: np.ndarray) -> float:
    worst = 0.0
    for e in p.constraints:
        M = e.value(x)
        worst = max(worst, -float(np.linalg.eigvalsh(0.5 * (M + M.T)).min()))
    for e in p.equalities:
        worst = max(worst, abs(float(e.value(x)[0, 0])))
    return worst


def min_constraint_eigenvalue(p: SdpProblem, sol: SdpSolution) -> float:
    """Smallest eigenvalue over all PSD constraints at the returned assignment."""
    x = np.zeros(p.num_unknowns)
    for name, spec in p._vars.items():
        val = sol.assignment[name]
        kind = spec[0]
        if kind == "scalar":
            x[spec[1]] = val
        elif kind == "vector":
            for i, j in enumerate(spec[2]):
                x[j] = val[i]
        else:
            for i, k, j in spec[2]:
                x[j] = val[i, k]
    return min(float(np.linalg.eigvalsh(0.5 * (e.value(x) + e.value(x).T)).min()) for e in p.constraints)


def volume_tree_depth(n: int) -> int:
    """Smallest ``l`` with ``n <= 2**l``; ``n == 1`` uses ``l = 1`` so the root block has two leaves."""
    if n < 1:
        raise ValueError("dimension must be positive")
    l = max(1, (n - 1).bit_length())
    return l


@dataclass
class VolumeBlock:
    t: Affine
    delta: Affine
    u: list
    depth: int


def build_volume_block(p: SdpProblem, X: Affine, prefix: str = "vol") -> VolumeBlock:
    """Add the log-det surrogate for ``X`` and return the objective term ``t``.

    With leaves ``u`` bound to the diagonal of a lower-triangular ``Delta``
    (padded with ones), the binary tree of 2x2 blocks forces
    ``t <= (prod diag Delta) ** (1 / 2**l) <= det(X) ** (1 / 2**l)``.
    """
    n = X.shape[0]
    l = volume_tree_depth(n)
    delta = p.lower_triangular(f"{prefix}.Delta", n)
    diag = Affine(np.zeros((n, n)), {j: np.diag(np.diag(c)) for j, c in delta.coeffs.items()})
    p.add_psd(bmat([[X, delta], [delta.T, diag]]))
    t = p.scalar(f"{prefix}.t")
    n_u = 2 ** (l + 1) - 2
    first_leaf = 2 ** l - 1
    u: list = [None]
    for i in range(1, n_u + 1):
        if i >= first_leaf:
            k = i - first_leaf
            if k < n:
                u.append(delta[k, k])
            else:
                u.append(Affine(np.ones((1, 1))))
        else:
            u.append(p.scalar(f"{prefix}.u{i}"))
    p.add_psd(bmat([[u[1], t], [t, u[2]]]))
    for i in range(1, 2 ** l - 1):
        p.add_psd(bmat([[u[2 * i + 1], u[i]], [u[i], u[2 * i + 2]]]))
    return VolumeBlock(t=t, delta=delta, u=u[1:], depth=l)
