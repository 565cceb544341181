"""Full Newton-Raphson driver over the four stages.

Each iteration evaluates the residual, checks the infinity-norm mismatch,
then refreshes the Jacobian, solves J * dy = -g and applies the full step
(no damping or line search).  Per-stage wall times are accumulated into
the result.  Non-convergence is an outcome, not an error; only a singular
Jacobian raises.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .jacobian import JacobianWorkspace, evaluate_jacobian, symbolic_pattern
from .linear_solver import make_solver
from .residual import ResidualWorkspace, evaluate_residual
from .system_model import PowerSystem, StateVector
from .workflow import WorkflowConfig, workflow_config

_DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-8            # infinity-norm mismatch threshold
    max_iter: int = 20
    workflow: WorkflowConfig = field(default_factory=lambda: workflow_config(1))

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SolveResult:
    converged: bool
    iterations: int
    final_mismatch: float
    y: StateVector
    timings: dict[str, float]    # seconds per stage
    diverged: bool = False


def newton_solve(sys: PowerSystem, y0: StateVector, opts: NewtonOptions,
                 solver=None,
                 residual_ws: ResidualWorkspace | None = None,
                 jacobian_ws: JacobianWorkspace | None = None) -> SolveResult:
    """Iterate y <- y + dy with J dy = -g until the mismatch meets tol.

    Returns converged=False with the last state on hitting max_iter, and
    additionally diverged=True when the state goes non-finite or the
    mismatch blows past the divergence guard.  Workspaces may be passed in
    to reuse allocations across repeated solves.
    """
    if y0.shape != (sys.n_var,):
        raise ValueError(f"y0 has shape {y0.shape}, expected ({sys.n_var},)")
    if not np.all(np.isfinite(y0)):
        raise ValueError("y0 contains non-finite entries")
    handle = solver if solver is not None else make_solver()
    res_ws = residual_ws if residual_ws is not None else ResidualWorkspace(sys)
    jac_ws = jacobian_ws if jacobian_ws is not None else symbolic_pattern(sys)
    cfg = opts.workflow

    y = y0.copy()
    g = res_ws.residual
    rhs = np.zeros_like(g)
    scratch = np.zeros_like(g)
    timings = {"residual": 0.0, "jacobian": 0.0, "linear": 0.0, "update": 0.0}
    iterations = 0
    converged = False
    diverged = False
    mismatch = np.inf

    while True:
        t0 = time.perf_counter()
        evaluate_residual(sys, y, cfg, g, res_ws)
        timings["residual"] += time.perf_counter() - t0

        np.abs(g, out=scratch)
        mismatch = float(scratch.max()) if scratch.shape[0] else 0.0
        if not np.isfinite(mismatch) or mismatch > _DIVERGENCE_LIMIT \
                or not np.all(np.isfinite(y)):
            diverged = True
            break
        if mismatch <= opts.tol:
            converged = True
            break
        if iterations >= opts.max_iter:
            break

        t0 = time.perf_counter()
        jac = evaluate_jacobian(sys, y, cfg, jac_ws)
        timings["jacobian"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        np.negative(g, out=rhs)
        dy = handle.solve(jac, rhs)
        timings["linear"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        y += dy
        timings["update"] += time.perf_counter() - t0
        iterations += 1

    return SolveResult(converged=converged, iterations=iterations,
                       final_mismatch=mismatch, y=y, timings=timings,
                       diverged=diverged)
