from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .sdp import SolverConfig


@dataclass(frozen=True)
class Config:
    """Tunable knobs shared by the domains, the analyzer and the CLI.

    ``epsilon`` is the radius-squared of the ball every affine image is
    forced to contain; ``pad_eps``/``pad_max`` drive the geometric ratio
    padding; ``slope_slack`` is the relative extrapolation added by the
    widening once ``widen_delay`` exact upper bounds have been tried.
    """

    epsilon: float = 1e-4
    pad_eps: float = 1e-6
    pad_max: int = 10
    solver_tol: float = 1e-8
    max_iterations: int = 200
    widen_delay: int = 2
    beta_cap: int = 6
    bootstrap_iters: int = 3
    horizon: int = 1000
    slope_slack: float = 1e-3
    max_paths: int = 64

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(tolerance=self.solver_tol, max_iterations=self.max_iterations)

    def with_(self, **kw) -> "Config":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT = Config()
