"""Command-line interface: ``pflow {solve|bench|check} <case> [flags]``.

Exit codes: 0 success/converged, 1 input or configuration error,
2 non-convergence, 3 verification tolerance breach.
"""

from __future__ import annotations

import json
import sys as _sys

import click
import numpy as np

from .case_io import CaseFormatError, parse_case_file, validate_case
from .system_model import build_system, flat_start
from .workflow import WorkflowConfigError, set_worker_count, workflow_config

_WORKFLOW_IDS = list(range(1, 7))


def _load_system(case_path: str):
    try:
        raw = parse_case_file(case_path)
    except FileNotFoundError:
        raise click.ClickException(f"{case_path}: file not found")
    except CaseFormatError as e:
        raise click.ClickException(f"{case_path}:{e.line}: {e}")
    violations = validate_case(raw)
    if violations:
        detail = "\n".join(f"  {v.code} (row {v.row}): {v.message}" for v in violations)
        raise click.ClickException(f"{case_path}: case fails validation\n{detail}")
    return build_system(raw)


@click.group()
def main() -> None:
    """Newton power flow with per-model parallel evaluation workflows."""


@main.command()
@click.argument("case", type=str)
@click.option("--workflow", type=click.IntRange(1, 6), default=1, show_default=True,
              help="Evaluation workflow id.")
@click.option("--tol", type=float, default=1e-8, show_default=True)
@click.option("--max-iter", type=int, default=20, show_default=True)
@click.option("--solver", type=click.Choice(["builtin", "dense", "external"]),
              default="builtin", show_default=True)
@click.option("--threads", type=int, default=None, help="Worker pool size.")
@click.option("--format", "fmt", type=click.Choice(["human", "json"]), default="human")
@click.option("--dump-jacobian", type=str, default=None,
              help="Write the final-state Jacobian in MatrixMarket format.")
def solve(case, workflow, tol, max_iter, solver, threads, fmt, dump_jacobian):
    """Solve a case from flat start and report convergence."""
    from .linear_solver import make_solver
    from .newton import NewtonOptions, newton_solve

    if threads is not None:
        set_worker_count(threads)
    sys = _load_system(case)
    try:
        cfg = workflow_config(workflow)
        opts = NewtonOptions(tol=tol, max_iter=max_iter, workflow=cfg)
        result = newton_solve(sys, flat_start(sys), opts, solver=make_solver(solver))
    except WorkflowConfigError as e:
        raise click.ClickException(str(e))

    if dump_jacobian:
        from .jacobian import evaluate_jacobian, export_matrix_market, symbolic_pattern

        ws = symbolic_pattern(sys)
        evaluate_jacobian(sys, result.y, cfg, ws)
        export_matrix_market(ws, dump_jacobian)

    if fmt == "json":
        click.echo(json.dumps({
            "case": sys.name, "converged": result.converged,
            "diverged": result.diverged, "iterations": result.iterations,
            "final_mismatch": result.final_mismatch,
            "timings_ms": {k: 1e3 * v for k, v in result.timings.items()},
            "workflow": workflow,
        }, indent=2))
    else:
        status = "converged" if result.converged else (
            "diverged" if result.diverged else "did not converge")
        click.echo(f"{sys.name}: {status} in {result.iterations} iterations, "
                   f"max mismatch {result.final_mismatch:.3e}")
        for stage, seconds in result.timings.items():
            click.echo(f"  {stage:<9} {1e3 * seconds:8.3f} ms")
    if not result.converged:
        _sys.exit(2)


@main.command()
@click.argument("case", type=str)
@click.option("--workflows", type=str, default="1,2,3,4,5,6", show_default=True,
              help="Comma-separated workflow ids.")
@click.option("--repeat", type=int, default=5, show_default=True,
              help="Runs per measurement; the first is warm-up.")
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "json"]),
              default="table", show_default=True)
@click.option("--tol", type=float, default=1e-8, show_default=True)
@click.option("--max-iter", type=int, default=20, show_default=True)
@click.option("--solver", type=click.Choice(["builtin", "dense", "external"]),
              default="builtin", show_default=True)
@click.option("--threads", type=int, default=None, help="Worker pool size.")
def bench(case, workflows, repeat, fmt, tol, max_iter, solver, threads):
    """Benchmark evaluation workflows on a case."""
    from .bench import render, run_bench

    try:
        ids = [int(tok) for tok in workflows.split(",") if tok.strip()]
    except ValueError:
        raise click.ClickException(f"invalid workflow list {workflows!r}")
    bad = [i for i in ids if i not in _WORKFLOW_IDS]
    if bad or not ids:
        raise click.ClickException(f"invalid workflow ids {bad or workflows!r}")
    if repeat < 2:
        raise click.ClickException("--repeat must be >= 2 (first run is warm-up)")
    sys = _load_system(case)
    try:
        report = run_bench(sys, ids, repeat=repeat, tol=tol, max_iter=max_iter,
                           solver=solver, threads=threads)
    except WorkflowConfigError as e:
        raise click.ClickException(str(e))
    click.echo(render(report, fmt), nl=False)


@main.command()
@click.argument("case", type=str)
@click.option("--fd-step", type=float, default=None,
              help="Finite-difference step (default 1e-6*max(1,|y|)).")
@click.option("--states", type=int, default=3, show_default=True,
              help="Random states checked in addition to flat start.")
@click.option("--seed", type=int, default=0, show_default=True)
def check(case, fd_step, states, seed):
    """Verify analytic Jacobians against finite differences and
    cross-workflow equivalence; exit 3 on tolerance breach."""
    import os

    from .jacobian import evaluate_jacobian, finite_difference_jacobian, symbolic_pattern
    from .residual import ResidualWorkspace, evaluate_residual
    from .workflow import all_workflows

    sys = _load_system(case)
    if sys.n_var > 2000:
        raise click.ClickException(
            f"check is guarded to n_var <= 2000 (case has {sys.n_var})")
    set_worker_count(max(6, os.cpu_count() or 1))

    rng = np.random.default_rng(seed)
    y0 = flat_start(sys)
    test_states = [y0]
    for _ in range(states):
        y = y0.copy()
        y[:sys.n_bus] += rng.uniform(-0.3, 0.3, sys.n_bus)
        y[sys.n_bus:2 * sys.n_bus] *= rng.uniform(0.95, 1.05, sys.n_bus)
        y[2 * sys.n_bus:] += rng.uniform(-0.5, 0.5, y.shape[0] - 2 * sys.n_bus)
        test_states.append(y)

    jac_ws = symbolic_pattern(sys)
    serial = workflow_config(1)
    worst = (0.0, -1, -1, 0.0, 0.0)  # rel_err, row, col, analytic, fd
    for y in test_states:
        analytic = evaluate_jacobian(sys, y, serial, jac_ws).toarray()
        fd = finite_difference_jacobian(sys, y, step=fd_step)
        scale = np.maximum(np.abs(fd), 1.0)
        rel = np.abs(analytic - fd) / scale
        i, j = np.unravel_index(int(np.argmax(rel)), rel.shape)
        if rel[i, j] > worst[0]:
            worst = (float(rel[i, j]), int(i), int(j), float(analytic[i, j]), float(fd[i, j]))
    click.echo(f"jacobian vs finite differences: worst relative error {worst[0]:.3e} "
               f"at (row {worst[1]}, col {worst[2]})")
    fd_ok = worst[0] < 1e-6
    if not fd_ok:
        click.echo(f"  analytic {worst[3]:.15e}  fd {worst[4]:.15e}")

    res_ws = ResidualWorkspace(sys)
    g_ref = np.zeros(sys.n_eq)
    g_cfg = np.zeros(sys.n_eq)
    wf_ok = True
    worst_wf = 0.0
    for y in test_states:
        evaluate_residual(sys, y, serial, g_ref, res_ws)
        ref_jac = evaluate_jacobian(sys, y, serial, jac_ws).copy()
        ref_scale = max(1.0, float(np.abs(g_ref).max()))
        jac_scale = max(1.0, float(np.abs(ref_jac.data).max()) if ref_jac.nnz else 1.0)
        for cfg in all_workflows():
            if cfg.id == 1:
                continue
            evaluate_residual(sys, y, cfg, g_cfg, res_ws)
            dev = float(np.abs(g_cfg - g_ref).max()) / ref_scale
            jac = evaluate_jacobian(sys, y, cfg, jac_ws)
            dev_j = float(np.abs(jac.data - ref_jac.data).max()) / jac_scale
            worst_wf = max(worst_wf, dev, dev_j)
    wf_ok = worst_wf <= 1e-12
    click.echo(f"cross-workflow equivalence: worst relative deviation {worst_wf:.3e}")

    if fd_ok and wf_ok:
        click.echo("check passed")
    else:
        click.echo("check FAILED")
        _sys.exit(3)


if __name__ == "__main__":
    main()
