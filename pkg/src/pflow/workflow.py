"""Execution workflows: inter-model x intra-model parallelism.

A *model task* wraps one device model's kernel calls for one phase
(residual or Jacobian) with all argument tuples prebuilt by a workspace,
so dispatching a task is allocation-free.  The six workflow ids combine

    inter-model: serial (fixed order: PQ, PV, Slack, Line, Shunt)
                 or one concurrent task per model
    intra-model: serial scalar loop, chunked scalar loops on the worker
                 pool, or the single-call packed-SIMD kernels

as

    ==  ===========  ==========
    id  inter-model  intra-model
    ==  ===========  ==========
    1   serial       serial
    2   threaded     serial
    3   serial       threaded
    4   threaded     threaded    (nested; needs a pool > model count)
    5   serial       vectorized
    6   threaded     vectorized
    ==  ===========  ==========

One process-wide worker pool serves both levels; the nested workflow (4)
deliberately shares it, so its inter-model tasks occupy workers while
their intra-model chunks queue behind them.  That oversubscription cost
is part of what the benchmark measures, not something to engineer away.

The pool size defaults to the hardware thread count and can be capped
with the ``PFLOW_THREADS`` environment variable or
:func:`set_worker_count`.
"""

from __future__ import annotations

import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field


class WorkflowConfigError(ValueError):
    """Invalid workflow selection (bad id, or pool too small to nest)."""


@dataclass(frozen=True)
class IntraStrategy:
    """How the independent per-device equations within one model run."""

    kind: str            # "serial" | "threaded" | "simd"
    n_threads: int = 1

    def __post_init__(self):
        if self.kind not in ("serial", "threaded", "simd"):
            raise WorkflowConfigError(f"unknown intra-model strategy {self.kind!r}")
        if self.n_threads < 1:
            raise WorkflowConfigError("n_threads must be >= 1")

    @staticmethod
    def serial() -> "IntraStrategy":
        return IntraStrategy("serial")

    @staticmethod
    def threaded(n_threads: int) -> "IntraStrategy":
        return IntraStrategy("threaded", n_threads)

    @staticmethod
    def vectorized() -> "IntraStrategy":
        return IntraStrategy("simd")


@dataclass(frozen=True)
class WorkflowConfig:
    id: int
    inter: str           # "serial" | "threaded"
    intra: IntraStrategy


#: workflow id -> (inter-model, intra-model kind)
WORKFLOW_TABLE = {
    1: ("serial", "serial"),
    2: ("threaded", "serial"),
    3: ("serial", "threaded"),
    4: ("threaded", "threaded"),
    5: ("serial", "simd"),
    6: ("threaded", "simd"),
}

MODEL_ORDER = ("pq", "pv", "slack", "line", "shunt")


def workflow_config(workflow_id: int, n_threads: int | None = None) -> WorkflowConfig:
    """Build the configuration for one of the six workflow ids."""
    try:
        inter, intra_kind = WORKFLOW_TABLE[workflow_id]
    except KeyError:
        raise WorkflowConfigError(
            f"workflow id must be 1..6, got {workflow_id}") from None
    n = n_threads if n_threads is not None else worker_count()
    intra = IntraStrategy(intra_kind, n if intra_kind == "threaded" else 1)
    return WorkflowConfig(workflow_id, inter, intra)


def all_workflows(n_threads: int | None = None) -> list[WorkflowConfig]:
    return [workflow_config(i, n_threads) for i in sorted(WORKFLOW_TABLE)]


# ---------------------------------------------------------------------------
# Worker pool
# ---------------------------------------------------------------------------

_pool: ThreadPoolExecutor | None = None
_pool_size = 0
_pool_lock = threading.Lock()


def _default_size() -> int:
    env = os.environ.get("PFLOW_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise WorkflowConfigError(f"PFLOW_THREADS must be positive, got {env}")
        return n
    return os.cpu_count() or 1


def worker_count() -> int:
    """Current worker pool size (without forcing pool creation)."""
    return _pool_size if _pool is not None else _default_size()


def set_worker_count(n: int) -> None:
    """Resize the process-wide pool (benchmarks pin this before timing)."""
    global _pool, _pool_size
    if n < 1:
        raise WorkflowConfigError("worker count must be >= 1")
    with _pool_lock:
        if _pool is not None and _pool_size == n:
            return
        if _pool is not None:
            _pool.shutdown(wait=True)
        _pool = ThreadPoolExecutor(max_workers=n, thread_name_prefix="pflow")
        _pool_size = n


def get_pool() -> ThreadPoolExecutor:
    global _pool, _pool_size
    if _pool is None:
        with _pool_lock:
            if _pool is None:
                _pool_size = _default_size()
                _pool = ThreadPoolExecutor(max_workers=_pool_size,
                                           thread_name_prefix="pflow")
    return _pool


# ---------------------------------------------------------------------------
# Model tasks
# ---------------------------------------------------------------------------

@dataclass
class ModelTask:
    """Prebuilt kernel calls for one model in one phase.

    ``steps_scalar``/``steps_simd`` run the whole device range; a step is
    a ``(kernel, args)`` pair and steps run in order (the vectorized line
    path is gather then arithmetic).  ``chunks_scalar`` holds one step
    list per chunk; chunks are write-disjoint contiguous device ranges.
    """

    name: str
    steps_scalar: list = field(default_factory=list)
    steps_simd: list = field(default_factory=list)
    chunks_scalar: list = field(default_factory=list)
    seq: int = 0         # completion counter for barrier checks


def _run_steps(steps) -> None:
    for fn, args in steps:
        fn(*args)


def run_task(task: ModelTask, intra: IntraStrategy, pool=None) -> None:
    """Execute one model task under an intra-model strategy."""
    if intra.kind == "serial":
        _run_steps(task.steps_scalar)
    elif intra.kind == "simd":
        _run_steps(task.steps_simd)
    else:
        pool = pool or get_pool()
        futures = [pool.submit(_run_steps, chunk) for chunk in task.chunks_scalar]
        wait(futures)
        for f in futures:
            f.result()
    task.seq += 1


def run_model_set(tasks, cfg: WorkflowConfig, barrier_task: ModelTask | None = None) -> None:
    """Run all model tasks under ``cfg``, then the barrier task (join).

    The barrier task only starts after every model task finished; under
    threaded inter-model execution the total stage time is therefore set
    by the slowest model.
    """
    if cfg.inter == "threaded":
        pool = get_pool()
        if cfg.intra.kind == "threaded" and _pool_size < len(tasks) + 1:
            raise WorkflowConfigError(
                f"nested workflow needs more than {len(tasks)} workers, "
                f"pool has {_pool_size}; raise PFLOW_THREADS or --threads")
        futures = [pool.submit(run_task, t, cfg.intra, pool) for t in tasks]
        wait(futures)
        for f in futures:
            f.result()
    else:
        for t in tasks:
            run_task(t, cfg.intra)
    if barrier_task is not None:
        run_task(barrier_task, cfg.intra)


def run_models(sys, y, cfg: WorkflowConfig, phase: str, workspace) -> None:
    """Spec-shaped entry: run one phase's models plus its join/assembly.

    ``workspace`` is a ResidualWorkspace for phase "residual" or a
    JacobianWorkspace for phase "jacobian"; it must already be sized for
    ``sys``.
    """
    if phase not in ("residual", "jacobian"):
        raise ValueError(f"phase must be 'residual' or 'jacobian', got {phase!r}")
    workspace.run(y, cfg)


def per_model_timing(sys, y, cfg: WorkflowConfig, repeats: int,
                     workspace=None) -> dict[str, float]:
    """Median wall time (microseconds) of each model's residual kernels.

    Times each model task in isolation under ``cfg.intra``; the join stage
    is reported under the pseudo-model name ``"join"``.
    """
    from .residual import ResidualWorkspace

    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    ws = workspace if workspace is not None else ResidualWorkspace(sys)
    out = ws.residual
    ws.bind(y, out, cfg)
    if cfg.intra.kind == "threaded":
        get_pool()
    samples: dict[str, list[float]] = {t.name: [] for t in ws.tasks}
    samples["join"] = []
    for _ in range(repeats):
        for t in ws.tasks:
            t0 = time.perf_counter()
            run_task(t, cfg.intra)
            samples[t.name].append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        run_task(ws.join_task, cfg.intra)
        samples["join"].append(time.perf_counter() - t0)
    def median(xs):
        xs = sorted(xs)
        mid = len(xs) // 2
        return xs[mid] if len(xs) % 2 else 0.5 * (xs[mid - 1] + xs[mid])
    return {name: 1e6 * median(ts) for name, ts in samples.items()}
