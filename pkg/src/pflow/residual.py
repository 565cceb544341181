"""Residual evaluation: per-model kernels plus join-by-summation.

Every model writes its per-device contributions into fixed slots of one
contiguous *contribution pool*; after all models finish (the barrier), a
precomputed row-wise gather sums each equation's slots into the output
vector.  Line flows enter their rows negated (flows leave the bus), all
other contributions are emitted already signed by their kernels, so the
join needs only a per-row split point instead of a sign array.

The gather join makes the summation order a fixed property of the system,
independent of strategy and thread count, so all six workflows agree to
reassociation-level tolerance.

A :class:`ResidualWorkspace` preallocates the pool, the line scratch and
the join index arrays once, and prebuilds kernel argument tuples bound to
a concrete ``(y, out)`` pair; steady-state calls then allocate nothing.
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels as K
from .system_model import PowerSystem, StateVector
from .workflow import (IntraStrategy, ModelTask, WorkflowConfig, get_pool,
                       run_model_set, run_task)

_IDX = np.int32


def _chunk_bounds(n: int, k: int) -> list[tuple[int, int]]:
    """k contiguous ranges covering [0, n), sizes differing by at most 1."""
    k = max(1, min(k, n)) if n else 1
    base, extra = divmod(n, k)
    bounds = []
    lo = 0
    for c in range(k):
        hi = lo + base + (1 if c < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


class ResidualWorkspace:
    """Preallocated buffers and prebuilt kernel plans for one system."""

    def __init__(self, sys: PowerSystem):
        self.sys = sys
        L, P, V, S, H = (len(sys.lines), len(sys.pq), len(sys.pv),
                         len(sys.slack), len(sys.shunts))
        self.n_eq = sys.n_eq
        self.residual = np.zeros(self.n_eq)

        # contribution pool segments, line flows first (they join negated)
        sizes = [L, L, L, L, P, P, V, V, V, S, S, S, S, H, H]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.pool = np.zeros(int(offsets[-1]))
        seg = [self.pool[offsets[i]:offsets[i + 1]] for i in range(len(sizes))]
        (self._ph, self._pk, self._qh, self._qk,
         self._pq_p, self._pq_q,
         self._pv_p, self._pv_q, self._pv_v,
         self._sl_p, self._sl_q, self._sl_v, self._sl_th,
         self._sh_p, self._sh_q) = seg

        self._thk = np.zeros(L)
        self._vh = np.zeros(L)
        self._vk = np.zeros(L)
        self._qg_addr_pv = sys.addr.qg_of_gen[sys.pv.qg]
        self._qg_addr_sl = sys.addr.qg_of_gen[sys.slack.qg]
        self._ps_addr_sl = sys.addr.ps_of_slack[sys.slack.ps]

        self._build_join(offsets)
        self.tasks: list[ModelTask] = []
        self.join_task: ModelTask | None = None
        self._bound: tuple | None = None

    def _build_join(self, off) -> None:
        sys = self.sys
        addr = sys.addr
        minus: list[list[int]] = [[] for _ in range(self.n_eq)]
        plus: list[list[int]] = [[] for _ in range(self.n_eq)]
        gp, gq = addr.gp_of_bus, addr.gq_of_bus
        for i in range(len(sys.lines)):
            h, k = sys.lines.bus_h[i], sys.lines.bus_k[i]
            minus[gp[h]].append(int(off[0]) + i)
            minus[gp[k]].append(int(off[1]) + i)
            minus[gq[h]].append(int(off[2]) + i)
            minus[gq[k]].append(int(off[3]) + i)
        for j in range(len(sys.pq)):
            b = sys.pq.bus[j]
            plus[gp[b]].append(int(off[4]) + j)
            plus[gq[b]].append(int(off[5]) + j)
        for i in range(len(sys.pv)):
            b = sys.pv.bus[i]
            plus[gp[b]].append(int(off[6]) + i)
            plus[gq[b]].append(int(off[7]) + i)
            plus[addr.gv_of_gen[sys.pv.qg[i]]].append(int(off[8]) + i)
        for s in range(len(sys.slack)):
            b = sys.slack.bus[s]
            plus[gp[b]].append(int(off[9]) + s)
            plus[gq[b]].append(int(off[10]) + s)
            plus[addr.gv_of_gen[sys.slack.qg[s]]].append(int(off[11]) + s)
            plus[addr.gtheta_of_slack[sys.slack.ps[s]]].append(int(off[12]) + s)
        for j in range(len(sys.shunts)):
            b = sys.shunts.bus[j]
            plus[gp[b]].append(int(off[13]) + j)
            plus[gq[b]].append(int(off[14]) + j)

        ptr = np.zeros(self.n_eq + 1, dtype=_IDX)
        split = np.zeros(self.n_eq, dtype=_IDX)
        idx_parts = []
        pos = 0
        for r in range(self.n_eq):
            m = sorted(minus[r])
            p = sorted(plus[r])
            idx_parts.append(m)
            idx_parts.append(p)
            split[r] = pos + len(m)
            pos += len(m) + len(p)
            ptr[r + 1] = pos
        self._join_ptr = ptr
        self._join_split = split
        self._join_idx = np.array([j for part in idx_parts for j in part], dtype=_IDX)

    # -- binding -----------------------------------------------------------

    def bind(self, y: StateVector, out: np.ndarray | None, cfg: WorkflowConfig) -> np.ndarray:
        """Point the prebuilt kernel plans at a concrete state and output.

        Rebinding only happens when the buffers or the chunk count change;
        repeated calls with the same buffers are allocation-free.
        """
        if out is None:
            out = self.residual
        n_chunks = cfg.intra.n_threads if cfg.intra.kind == "threaded" else 1
        key = (id(y), id(out), n_chunks)
        if self._bound == key:
            return out
        if y.shape != (self.sys.n_var,):
            raise ValueError(f"state vector has shape {y.shape}, expected ({self.sys.n_var},)")
        if out.shape != (self.n_eq,):
            raise ValueError(f"residual vector has shape {out.shape}, expected ({self.n_eq},)")

        sys = self.sys
        ln = sys.lines
        nb = sys.n_bus
        line_full = (ln.bus_h, ln.bus_k, ln.gl, ln.bl, ln.gl2, ln.bl2,
                     ln.g_self_h, ln.b_self_h, ln.g_self_k, ln.b_self_k,
                     y, nb, self._ph, self._pk, self._qh, self._qk)
        line_task = ModelTask(
            "line",
            steps_scalar=[(K.line_res_scalar, line_full)],
            steps_simd=[
                (K.line_gather, (ln.bus_h, ln.bus_k, y, nb, self._thk, self._vh, self._vk)),
                (K.line_res_simd, (self._thk, self._vh, self._vk,
                                   ln.gl, ln.bl, ln.gl2, ln.bl2,
                                   ln.g_self_h, ln.b_self_h, ln.g_self_k, ln.b_self_k,
                                   self._ph, self._pk, self._qh, self._qk)),
            ],
            chunks_scalar=[
                [(K.line_res_scalar,
                  (ln.bus_h[lo:hi], ln.bus_k[lo:hi], ln.gl[lo:hi], ln.bl[lo:hi],
                   ln.gl2[lo:hi], ln.bl2[lo:hi], ln.g_self_h[lo:hi], ln.b_self_h[lo:hi],
                   ln.g_self_k[lo:hi], ln.b_self_k[lo:hi], y, nb,
                   self._ph[lo:hi], self._pk[lo:hi], self._qh[lo:hi], self._qk[lo:hi]))]
                for lo, hi in _chunk_bounds(len(ln), n_chunks)
            ],
        )

        pq = sys.pq
        pq_full = (pq.p0, pq.q0, self._pq_p, self._pq_q)
        pq_task = ModelTask(
            "pq",
            steps_scalar=[(K.pq_res_scalar, pq_full)],
            steps_simd=[(K.pq_res_simd, pq_full)],
            chunks_scalar=[
                [(K.pq_res_scalar,
                  (pq.p0[lo:hi], pq.q0[lo:hi], self._pq_p[lo:hi], self._pq_q[lo:hi]))]
                for lo, hi in _chunk_bounds(len(pq), n_chunks)
            ],
        )

        pv = sys.pv
        pv_full = (pv.bus, pv.p0, pv.v0, self._qg_addr_pv, y, nb,
                   self._pv_p, self._pv_q, self._pv_v)
        pv_task = ModelTask(
            "pv",
            steps_scalar=[(K.pv_res_scalar, pv_full)],
            steps_simd=[(K.pv_res_simd, pv_full)],
            chunks_scalar=[
                [(K.pv_res_scalar,
                  (pv.bus[lo:hi], pv.p0[lo:hi], pv.v0[lo:hi], self._qg_addr_pv[lo:hi],
                   y, nb, self._pv_p[lo:hi], self._pv_q[lo:hi], self._pv_v[lo:hi]))]
                for lo, hi in _chunk_bounds(len(pv), n_chunks)
            ],
        )

        sl = sys.slack
        sl_full = (sl.bus, sl.v0, sl.theta0, self._qg_addr_sl, self._ps_addr_sl,
                   y, nb, self._sl_p, self._sl_q, self._sl_v, self._sl_th)
        slack_task = ModelTask(
            "slack",
            steps_scalar=[(K.slack_res_scalar, sl_full)],
            steps_simd=[(K.slack_res_simd, sl_full)],
            chunks_scalar=[[(K.slack_res_scalar, sl_full)]],  # a handful of devices
        )

        sh = sys.shunts
        sh_full = (sh.bus, sh.g, sh.b, y, nb, self._sh_p, self._sh_q)
        shunt_task = ModelTask(
            "shunt",
            steps_scalar=[(K.shunt_res_scalar, sh_full)],
            steps_simd=[(K.shunt_res_simd, sh_full)],
            chunks_scalar=[
                [(K.shunt_res_scalar,
                  (sh.bus[lo:hi], sh.g[lo:hi], sh.b[lo:hi], y, nb,
                   self._sh_p[lo:hi], self._sh_q[lo:hi]))]
                for lo, hi in _chunk_bounds(len(sh), n_chunks)
            ],
        )

        join_full = (self._join_ptr, self._join_split, self._join_idx, self.pool, out)
        join_task = ModelTask(
            "join",
            steps_scalar=[(K.join_rows_scalar, join_full)],
            steps_simd=[(K.join_rows_simd, join_full)],
            chunks_scalar=[
                [(K.join_rows_scalar,
                  (self._join_ptr[lo:hi + 1], self._join_split[lo:hi],
                   self._join_idx, self.pool, out[lo:hi]))]
                for lo, hi in _chunk_bounds(self.n_eq, n_chunks)
            ],
        )

        # serial inter-model order: PQ, PV, Slack, Line, Shunt
        self.tasks = [pq_task, pv_task, slack_task, line_task, shunt_task]
        self.join_task = join_task
        self._out = out
        self._bound = key
        return out

    def run(self, y: StateVector, cfg: WorkflowConfig) -> np.ndarray:
        out = self.bind(y, getattr(self, "_out", None), cfg)
        if _debug_barrier():
            before = [t.seq for t in self.tasks]
            run_model_set(self.tasks, cfg)
            after = [t.seq for t in self.tasks]
            assert all(b + 1 == a for b, a in zip(before, after)), \
                "join would run before every model completed"
            run_task(self.join_task, cfg.intra)
        else:
            run_model_set(self.tasks, cfg, barrier_task=self.join_task)
        return out


def _debug_barrier() -> bool:
    return os.environ.get("PFLOW_DEBUG_BARRIER", "") not in ("", "0")


def evaluate_residual(sys: PowerSystem, y: StateVector, cfg: WorkflowConfig,
                      out: np.ndarray | None = None,
                      workspace: ResidualWorkspace | None = None) -> np.ndarray:
    """Evaluate the full mismatch vector g(y) under a workflow config.

    Passing a reused ``workspace`` (and fixed ``y``/``out`` buffers) makes
    steady-state calls allocation-free; without one, a workspace is built
    on the fly.  All workflows produce the same result up to reassociation
    tolerance.
    """
    ws = workspace if workspace is not None else ResidualWorkspace(sys)
    ws.bind(y, out, cfg)
    return ws.run(y, cfg)


# ---------------------------------------------------------------------------
# Direct per-model operations (write into fresh arrays / group scratch)
# ---------------------------------------------------------------------------

def _dispatch(strategy: IntraStrategy, scalar_steps, simd_steps, chunk_steps) -> None:
    task = ModelTask("adhoc", steps_scalar=scalar_steps, steps_simd=simd_steps,
                     chunks_scalar=chunk_steps)
    run_task(task, strategy, get_pool() if strategy.kind == "threaded" else None)


def line_injections(sys: PowerSystem, y: StateVector,
                    strategy: IntraStrategy = IntraStrategy.serial()) -> None:
    """Compute per-line terminal injections into the group's scratch arrays.

    After the call ``sys.lines.ph[i]``/``pk[i]`` hold the active power
    entering line ``i`` from each terminal and ``qh``/``qk`` the reactive
    counterparts.  The scratch belongs to the caller for the duration.
    """
    ln = sys.lines
    nb = sys.n_bus
    n = len(ln)
    full = (ln.bus_h, ln.bus_k, ln.gl, ln.bl, ln.gl2, ln.bl2,
            ln.g_self_h, ln.b_self_h, ln.g_self_k, ln.b_self_k,
            y, nb, ln.ph, ln.pk, ln.qh, ln.qk)
    thk, vh, vk = np.zeros(n), np.zeros(n), np.zeros(n)
    simd = [(K.line_gather, (ln.bus_h, ln.bus_k, y, nb, thk, vh, vk)),
            (K.line_res_simd, (thk, vh, vk, ln.gl, ln.bl, ln.gl2, ln.bl2,
                               ln.g_self_h, ln.b_self_h, ln.g_self_k, ln.b_self_k,
                               ln.ph, ln.pk, ln.qh, ln.qk))]
    chunks = [
        [(K.line_res_scalar,
          (ln.bus_h[lo:hi], ln.bus_k[lo:hi], ln.gl[lo:hi], ln.bl[lo:hi],
           ln.gl2[lo:hi], ln.bl2[lo:hi], ln.g_self_h[lo:hi], ln.b_self_h[lo:hi],
           ln.g_self_k[lo:hi], ln.b_self_k[lo:hi], y, nb,
           ln.ph[lo:hi], ln.pk[lo:hi], ln.qh[lo:hi], ln.qk[lo:hi]))]
        for lo, hi in _chunk_bounds(n, strategy.n_threads)
    ]
    _dispatch(strategy, [(K.line_res_scalar, full)], simd, chunks)


def pq_injections(sys: PowerSystem, y: StateVector,
                  strategy: IntraStrategy = IntraStrategy.serial()):
    """Fixed-power contributions to (g_p, g_q), one slot per PQ device."""
    n = len(sys.pq)
    p, q = np.zeros(n), np.zeros(n)
    args = (sys.pq.p0, sys.pq.q0, p, q)
    _dispatch(strategy, [(K.pq_res_scalar, args)], [(K.pq_res_simd, args)],
              [[(K.pq_res_scalar, args)]])
    return p, q


def pv_injections(sys: PowerSystem, y: StateVector,
                  strategy: IntraStrategy = IntraStrategy.serial()):
    """PV contributions: (g_p, g_q) slots and the g_V row values."""
    n = len(sys.pv)
    p, q, verr = np.zeros(n), np.zeros(n), np.zeros(n)
    qg_addr = sys.addr.qg_of_gen[sys.pv.qg]
    args = (sys.pv.bus, sys.pv.p0, sys.pv.v0, qg_addr, y, sys.n_bus, p, q, verr)
    _dispatch(strategy, [(K.pv_res_scalar, args)], [(K.pv_res_simd, args)],
              [[(K.pv_res_scalar, args)]])
    return p, q, verr


def slack_injections(sys: PowerSystem, y: StateVector,
                     strategy: IntraStrategy = IntraStrategy.serial()):
    """Slack contributions: (g_p, g_q) slots, g_V and g_theta row values."""
    n = len(sys.slack)
    p, q, verr, therr = np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n)
    qg_addr = sys.addr.qg_of_gen[sys.slack.qg]
    ps_addr = sys.addr.ps_of_slack[sys.slack.ps]
    args = (sys.slack.bus, sys.slack.v0, sys.slack.theta0, qg_addr, ps_addr,
            y, sys.n_bus, p, q, verr, therr)
    _dispatch(strategy, [(K.slack_res_scalar, args)], [(K.slack_res_simd, args)],
              [[(K.slack_res_scalar, args)]])
    return p, q, verr, therr


def shunt_injections(sys: PowerSystem, y: StateVector,
                     strategy: IntraStrategy = IntraStrategy.serial()):
    """Shunt contributions to (g_p, g_q): -g v^2 and +b v^2."""
    n = len(sys.shunts)
    p, q = np.zeros(n), np.zeros(n)
    args = (sys.shunts.bus, sys.shunts.g, sys.shunts.b, y, sys.n_bus, p, q)
    _dispatch(strategy, [(K.shunt_res_scalar, args)], [(K.shunt_res_simd, args)],
              [[(K.shunt_res_scalar, args)]])
    return p, q
