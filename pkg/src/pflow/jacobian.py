"""Jacobian evaluation against a fixed symbolic pattern.

The sparsity pattern is state-independent: per line 16 triplet slots
(rows g_p/g_q at both terminals x columns theta/V at both terminals), per
shunt 2, per PV generator 2 constant slots, per slack generator 4
constant slots, and none for PQ loads.  ``symbolic_pattern`` enumerates
the slots once, deduplicates (row, col) pairs into a CSC structure and
precomputes the slot-to-CSC gather, after which ``evaluate_jacobian``
only refreshes values: kernels rewrite the slot array in place and the
assembly gather sums duplicate slots (parallel lines, several machines on
one bus) into the CSC data array.  Steady-state evaluation therefore
allocates nothing.

Slot values are derivatives of the *residual* rows, i.e. negated flow
derivatives, matching the residual module's sign convention.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import kernels as K
from .system_model import PowerSystem, StateVector
from .workflow import ModelTask, WorkflowConfig, run_model_set, workflow_config
from .residual import ResidualWorkspace, evaluate_residual, _chunk_bounds

_IDX = np.int32

#: per-line slot sections in kernel argument order: (row kind, col kind)
_LINE_SECTIONS = [
    ("gp_h", "th_h"), ("gp_h", "th_k"), ("gp_h", "v_h"), ("gp_h", "v_k"),
    ("gq_h", "th_h"), ("gq_h", "th_k"), ("gq_h", "v_h"), ("gq_h", "v_k"),
    ("gp_k", "th_h"), ("gp_k", "th_k"), ("gp_k", "v_h"), ("gp_k", "v_k"),
    ("gq_k", "th_h"), ("gq_k", "th_k"), ("gq_k", "v_h"), ("gq_k", "v_k"),
]


class JacobianWorkspace:
    """Fixed pattern, per-device value slots and the assembled CSC matrix."""

    def __init__(self, sys: PowerSystem):
        self.sys = sys
        rows, cols, sections = _enumerate_slots(sys)
        self.rows = rows
        self.cols = cols
        self.vals = np.zeros(rows.shape[0])
        self._sections = {name: self.vals[lo:hi] for name, lo, hi in sections}

        # dedupe (col, row) -> CSC; slots sorted by position give the
        # assembly gather for free
        order = np.lexsort((rows, cols)).astype(_IDX)
        r_sorted = rows[order]
        c_sorted = cols[order]
        if order.shape[0]:
            new_pos = np.empty(order.shape[0], dtype=bool)
            new_pos[0] = True
            new_pos[1:] = (r_sorted[1:] != r_sorted[:-1]) | (c_sorted[1:] != c_sorted[:-1])
            nnz = int(new_pos.sum())
            first = np.flatnonzero(new_pos)
        else:
            nnz, first = 0, np.empty(0, dtype=np.int64)
        self.nnz = nnz
        self.slot_to_csc = order  # slots grouped by CSC position
        self._gather_ptr = np.concatenate(
            [first, [order.shape[0]]]).astype(_IDX)

        n = sys.n_var
        indices = r_sorted[first].astype(_IDX)
        col_of_pos = c_sorted[first]
        indptr = np.searchsorted(col_of_pos, np.arange(n + 1)).astype(_IDX)
        self.csc = sp.csc_matrix((np.zeros(nnz), indices, indptr), shape=(n, n))

        L = len(sys.lines)
        self._thk = np.zeros(L)
        self._vh = np.zeros(L)
        self._vk = np.zeros(L)
        self.tasks: list[ModelTask] = []
        self.assemble_task: ModelTask | None = None
        self._bound: tuple | None = None

    # -- binding -----------------------------------------------------------

    def bind(self, y: StateVector, cfg: WorkflowConfig) -> None:
        n_chunks = cfg.intra.n_threads if cfg.intra.kind == "threaded" else 1
        key = (id(y), n_chunks)
        if self._bound == key:
            return
        if y.shape != (self.sys.n_var,):
            raise ValueError(f"state vector has shape {y.shape}, expected ({self.sys.n_var},)")
        sys = self.sys
        ln = sys.lines
        nb = sys.n_bus
        sec = self._sections
        line_outs = tuple(sec[f"line{j}"] for j in range(16))

        line_full = (ln.bus_h, ln.bus_k, ln.gl, ln.bl, ln.gl2, ln.bl2,
                     ln.g_self_h, ln.b_self_h, ln.g_self_k, ln.b_self_k,
                     y, nb) + line_outs
        line_task = ModelTask(
            "line",
            steps_scalar=[(K.line_jac_scalar, line_full)],
            steps_simd=[
                (K.line_gather, (ln.bus_h, ln.bus_k, y, nb, self._thk, self._vh, self._vk)),
                (K.line_jac_simd_h, (self._thk, self._vh, self._vk, ln.gl, ln.bl,
                                     ln.g_self_h, ln.b_self_h) + line_outs[:8]),
                (K.line_jac_simd_k, (self._thk, self._vh, self._vk, ln.gl2, ln.bl2,
                                     ln.g_self_k, ln.b_self_k) + line_outs[8:]),
            ],
            chunks_scalar=[
                [(K.line_jac_scalar,
                  (ln.bus_h[lo:hi], ln.bus_k[lo:hi], ln.gl[lo:hi], ln.bl[lo:hi],
                   ln.gl2[lo:hi], ln.bl2[lo:hi], ln.g_self_h[lo:hi], ln.b_self_h[lo:hi],
                   ln.g_self_k[lo:hi], ln.b_self_k[lo:hi], y, nb)
                  + tuple(o[lo:hi] for o in line_outs))]
                for lo, hi in _chunk_bounds(len(ln), n_chunks)
            ],
        )

        pq_task = ModelTask("pq")  # constant-power loads: no Jacobian slots

        pv_full = (sec["pv_gq_qg"], sec["pv_gv_v"])
        pv_task = ModelTask(
            "pv",
            steps_scalar=[(K.pv_jac_scalar, pv_full)],
            steps_simd=[(K.pv_jac_simd, pv_full)],
            chunks_scalar=[
                [(K.pv_jac_scalar, (sec["pv_gq_qg"][lo:hi], sec["pv_gv_v"][lo:hi]))]
                for lo, hi in _chunk_bounds(len(sys.pv), n_chunks)
            ],
        )

        sl_full = (sec["sl_gp_ps"], sec["sl_gq_qg"], sec["sl_gv_v"], sec["sl_gth_th"])
        slack_task = ModelTask(
            "slack",
            steps_scalar=[(K.slack_jac_scalar, sl_full)],
            steps_simd=[(K.slack_jac_simd, sl_full)],
            chunks_scalar=[[(K.slack_jac_scalar, sl_full)]],
        )

        sh = sys.shunts
        sh_full = (sh.bus, sh.g, sh.b, y, nb, sec["sh_gp_v"], sec["sh_gq_v"])
        shunt_task = ModelTask(
            "shunt",
            steps_scalar=[(K.shunt_jac_scalar, sh_full)],
            steps_simd=[(K.shunt_jac_simd, sh_full)],
            chunks_scalar=[
                [(K.shunt_jac_scalar,
                  (sh.bus[lo:hi], sh.g[lo:hi], sh.b[lo:hi], y, nb,
                   sec["sh_gp_v"][lo:hi], sec["sh_gq_v"][lo:hi]))]
                for lo, hi in _chunk_bounds(len(sh), n_chunks)
            ],
        )

        data = self.csc.data
        asm_full = (self._gather_ptr, self.slot_to_csc, self.vals, data)
        assemble_task = ModelTask(
            "assemble",
            steps_scalar=[(K.gather_sum_scalar, asm_full)],
            steps_simd=[(K.gather_sum_simd, asm_full)],
            chunks_scalar=[
                [(K.gather_sum_scalar,
                  (self._gather_ptr[lo:hi + 1], self.slot_to_csc, self.vals,
                   data[lo:hi]))]
                for lo, hi in _chunk_bounds(self.nnz, n_chunks)
            ],
        )

        self.tasks = [pq_task, pv_task, slack_task, line_task, shunt_task]
        self.assemble_task = assemble_task
        self._bound = key

    def run(self, y: StateVector, cfg: WorkflowConfig) -> sp.csc_matrix:
        self.bind(y, cfg)
        run_model_set(self.tasks, cfg, barrier_task=self.assemble_task)
        return self.csc


def _enumerate_slots(sys: PowerSystem):
    """Triplet (row, col) arrays, grouped by model and partial kind."""
    addr = sys.addr
    ln = sys.lines
    h, k = ln.bus_h, ln.bus_k
    row_of = {"gp_h": addr.gp_of_bus[h], "gq_h": addr.gq_of_bus[h],
              "gp_k": addr.gp_of_bus[k], "gq_k": addr.gq_of_bus[k]}
    col_of = {"th_h": addr.theta_of_bus[h], "th_k": addr.theta_of_bus[k],
              "v_h": addr.v_of_bus[h], "v_k": addr.v_of_bus[k]}
    rows, cols, sections = [], [], []
    pos = 0

    def add(name, r, c):
        nonlocal pos
        rows.append(np.asarray(r, dtype=_IDX))
        cols.append(np.asarray(c, dtype=_IDX))
        sections.append((name, pos, pos + len(r)))
        pos += len(r)

    for j, (rk, ck) in enumerate(_LINE_SECTIONS):
        add(f"line{j}", row_of[rk], col_of[ck])
    add("pv_gq_qg", addr.gq_of_bus[sys.pv.bus], addr.qg_of_gen[sys.pv.qg])
    add("pv_gv_v", addr.gv_of_gen[sys.pv.qg], addr.v_of_bus[sys.pv.bus])
    add("sl_gp_ps", addr.gp_of_bus[sys.slack.bus], addr.ps_of_slack[sys.slack.ps])
    add("sl_gq_qg", addr.gq_of_bus[sys.slack.bus], addr.qg_of_gen[sys.slack.qg])
    add("sl_gv_v", addr.gv_of_gen[sys.slack.qg], addr.v_of_bus[sys.slack.bus])
    add("sl_gth_th", addr.gtheta_of_slack[sys.slack.ps], addr.theta_of_bus[sys.slack.bus])
    add("sh_gp_v", addr.gp_of_bus[sys.shunts.bus], addr.v_of_bus[sys.shunts.bus])
    add("sh_gq_v", addr.gq_of_bus[sys.shunts.bus], addr.v_of_bus[sys.shunts.bus])
    return np.concatenate(rows).astype(_IDX), np.concatenate(cols).astype(_IDX), sections


def symbolic_pattern(sys: PowerSystem) -> JacobianWorkspace:
    """Enumerate triplet slots and allocate the CSC structure, once."""
    return JacobianWorkspace(sys)


def evaluate_jacobian(sys: PowerSystem, y: StateVector, cfg: WorkflowConfig,
                      ws: JacobianWorkspace) -> sp.csc_matrix:
    """Refresh slot values and the assembled CSC matrix in place."""
    if ws.sys is not sys:
        raise ValueError("workspace was built for a different system")
    return ws.run(y, cfg)


def finite_difference_jacobian(sys: PowerSystem, y: StateVector,
                               step: float | None = None) -> np.ndarray:
    """Dense central-difference Jacobian of the residual (test oracle).

    Column steps default to 1e-6 * max(1, |y_j|).  Guarded to small
    systems; the cost is one residual pair per variable.
    """
    n = sys.n_var
    if n > 2000:
        raise ValueError(f"finite differences guarded to n_var <= 2000, got {n}")
    cfg = workflow_config(1)
    ws = ResidualWorkspace(sys)
    g_plus = np.zeros(n)
    g_minus = np.zeros(n)
    jac = np.zeros((n, n))
    yw = y.copy()
    for j in range(n):
        hj = step if step is not None else 1e-6 * max(1.0, abs(y[j]))
        yj = yw[j]
        yw[j] = yj + hj
        evaluate_residual(sys, yw, cfg, g_plus, ws)
        yw[j] = yj - hj
        evaluate_residual(sys, yw, cfg, g_minus, ws)
        yw[j] = yj
        jac[:, j] = (g_plus - g_minus) / (2.0 * hj)
    return jac


def export_matrix_market(ws: JacobianWorkspace, path) -> None:
    """Dump the assembled sparse matrix in MatrixMarket coordinate format."""
    from scipy.io import mmwrite

    mmwrite(str(path), ws.csc.tocoo())
