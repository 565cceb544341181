"""Benchmark harness: per-workflow and per-model timing reports.

Residual and Jacobian micro-timings run at a fixed flat-start state with
pre-bound workspaces, so only kernel time is measured; the full solve is
timed end to end from flat start.  The first repeat of every measurement
is warm-up (JIT compilation, cache fill) and never enters the statistics;
medians are reported, minima kept for dispersion.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .jacobian import symbolic_pattern
from .newton import NewtonOptions, SolveResult, newton_solve
from .residual import ResidualWorkspace
from .system_model import PowerSystem, flat_start
from .workflow import (WorkflowConfig, per_model_timing, set_worker_count,
                       worker_count, workflow_config)


@dataclass
class WorkflowRecord:
    workflow: int
    inter: str
    intra: str
    residual_ms: float
    residual_min_ms: float
    jacobian_ms: float
    jacobian_min_ms: float
    per_model_us: dict[str, float]
    solve_ms: float
    iterations: int
    converged: bool


@dataclass
class BenchReport:
    case: str
    n_bus: int
    n_line: int
    n_var: int
    threads: int
    simd_width: int
    repeat: int
    records: list[WorkflowRecord] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "BenchReport":
        payload = json.loads(text)
        records = [WorkflowRecord(**r) for r in payload.pop("records")]
        return BenchReport(records=records, **payload)


def detect_simd_width() -> int:
    """Widest vector unit the JIT targets on this host, in bits."""
    try:
        import llvmlite.binding as llvm

        features = llvm.get_host_cpu_features()
        if features.get("avx512f"):
            return 512
        if features.get("avx2") or features.get("avx"):
            return 256
        if features.get("sse2"):
            return 128
    except Exception:
        pass
    return 128 if os.uname().machine in ("x86_64", "aarch64") else 64


def _timed(fn, repeat: int) -> tuple[float, float]:
    """Median and min of repeat-1 timed runs after one warm-up run."""
    fn()
    samples = []
    for _ in range(repeat - 1):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples)), float(min(samples))


def run_bench(sys: PowerSystem, workflow_ids: list[int], repeat: int = 5,
              tol: float = 1e-8, max_iter: int = 20, solver: str = "builtin",
              threads: int | None = None) -> BenchReport:
    """Measure residual, Jacobian and full-solve time per workflow."""
    if repeat < 2:
        raise ValueError("repeat must be >= 2 (first run is warm-up)")
    if threads is not None:
        set_worker_count(threads)
    report = BenchReport(
        case=sys.name, n_bus=sys.n_bus, n_line=len(sys.lines), n_var=sys.n_var,
        threads=worker_count(), simd_width=detect_simd_width(), repeat=repeat)

    y = flat_start(sys)
    res_ws = ResidualWorkspace(sys)
    jac_ws = symbolic_pattern(sys)
    from .linear_solver import make_solver

    for wid in workflow_ids:
        cfg = workflow_config(wid)
        res_med, res_min = _timed(lambda: res_ws.run(y, cfg), repeat)
        jac_med, jac_min = _timed(lambda: jac_ws.run(y, cfg), repeat)
        per_model = per_model_timing(sys, y, cfg, repeats=max(1, repeat - 1),
                                     workspace=res_ws)

        opts = NewtonOptions(tol=tol, max_iter=max_iter, workflow=cfg)
        handle = make_solver(solver)
        last: SolveResult | None = None
        solve_samples = []
        for r in range(repeat):
            y0 = flat_start(sys)
            t0 = time.perf_counter()
            last = newton_solve(sys, y0, opts, solver=handle,
                                residual_ws=res_ws, jacobian_ws=jac_ws)
            if r > 0:
                solve_samples.append(time.perf_counter() - t0)

        report.records.append(WorkflowRecord(
            workflow=wid, inter=cfg.inter, intra=cfg.intra.kind,
            residual_ms=1e3 * res_med, residual_min_ms=1e3 * res_min,
            jacobian_ms=1e3 * jac_med, jacobian_min_ms=1e3 * jac_min,
            per_model_us=per_model,
            solve_ms=1e3 * float(np.median(solve_samples)),
            iterations=last.iterations, converged=last.converged))
    return report


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_CSV_HEADER = ["workflow", "phase", "time_ms", "model", "threads"]


def render_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(_CSV_HEADER)
    for rec in report.records:
        writer.writerow([rec.workflow, "residual", f"{rec.residual_ms:.6f}", "", report.threads])
        writer.writerow([rec.workflow, "jacobian", f"{rec.jacobian_ms:.6f}", "", report.threads])
        writer.writerow([rec.workflow, "solve", f"{rec.solve_ms:.6f}", "", report.threads])
        for model, us in rec.per_model_us.items():
            writer.writerow([rec.workflow, "model", f"{us / 1e3:.6f}", model, report.threads])
    return buf.getvalue()


def render_table(report: BenchReport) -> str:
    """Human-readable report: residual/jacobian grid plus model breakdown."""
    by_id = {r.workflow: r for r in report.records}
    lines = [
        f"case {report.case}: {report.n_bus} buses, {report.n_line} lines, "
        f"{report.n_var} variables",
        f"threads={report.threads}  simd={report.simd_width}-bit  "
        f"repeat={report.repeat} (first run discarded)",
        "",
        "residual / jacobian time (ms), median of repeats",
        f"{'intra-model':<14} {'inter: serial':>22} {'inter: threaded':>22}",
    ]
    grid = {"serial": (1, 2), "threaded": (3, 4), "simd": (5, 6)}
    for intra, (serial_id, threaded_id) in grid.items():
        cells = []
        for wid in (serial_id, threaded_id):
            rec = by_id.get(wid)
            cells.append(f"({wid}) {rec.residual_ms:.3f} / {rec.jacobian_ms:.3f}"
                         if rec else "-")
        lines.append(f"{intra:<14} {cells[0]:>22} {cells[1]:>22}")

    lines.append("")
    lines.append("equation time by model (us), median")
    models = ["pq", "pv", "slack", "line", "shunt", "join"]
    header = f"{'workflow':<10}" + "".join(f"{m:>12}" for m in models)
    lines.append(header)
    for rec in report.records:
        row = f"{rec.workflow:<10}" + "".join(
            f"{rec.per_model_us.get(m, float('nan')):>12.2f}" for m in models)
        lines.append(row)

    lines.append("")
    lines.append(f"{'workflow':<10}{'solve_ms':>12}{'iters':>8}{'converged':>11}")
    for rec in report.records:
        lines.append(f"{rec.workflow:<10}{rec.solve_ms:>12.2f}"
                     f"{rec.iterations:>8}{str(rec.converged):>11}")
    if 1 in by_id and 5 in by_id:
        lines.append("")
        lines.append(f"residual speedup, workflow (5) over (1): "
                     f"{by_id[1].residual_ms / by_id[5].residual_ms:.2f}x")
    return "\n".join(lines) + "\n"


def render(report: BenchReport, fmt: str) -> str:
    if fmt == "csv":
        return render_csv(report)
    if fmt == "json":
        return report.to_json() + "\n"
    if fmt == "table":
        return render_table(report)
    raise ValueError(f"unknown format {fmt!r}")
