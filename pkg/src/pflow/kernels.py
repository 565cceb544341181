"""Compiled per-device kernels for residual and Jacobian evaluation.

Every kernel is a flat loop over one device group's contiguous arrays,
writing into preallocated output slots, so distinct (model, chunk) calls
are write-disjoint and safe to run concurrently.  None of the kernels
allocates.

Two compiled flavors exist per model:

* scalar: plain loop, one device at a time, libm trig inline.  Released
  from the GIL so chunked calls thread.
* vectorized: restructured so the hot loop is branch-free multiply-add
  over contiguous arrays and compiles to packed SIMD.  Trig is evaluated
  by a branchless polynomial (rounded-quadrant Cody-Waite reduction plus
  minimax polynomials, < 2 ulp over the +-pi range power-flow angles live
  in), because a libm call in the loop body forces scalar code.

Chunking passes array *views*, never (start, stop) bounds: runtime slice
bounds defeat LLVM's alias checks and the loop silently falls back to its
scalar form (observed ~4x slower), while views keep the packed path.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# FMA contraction only; no reassociation, so the compensated range
# reduction below keeps its ordering guarantees.
_FM = {"contract", "nsz"}

_TWO_OVER_PI = 0.63661977236758134308
_PIO2_HI = 1.57079632673412561417e+00
_PIO2_LO = 6.07710050650619224932e-11
_S1 = -1.66666666666666324348e-01
_S2 = 8.33333333332248946124e-03
_S3 = -1.98412698298579493134e-04
_S4 = 2.75573137070700676789e-06
_S5 = -2.50507602534068634195e-08
_S6 = 1.58969099521155010221e-10
_C1 = 4.16666666666666019037e-02
_C2 = -1.38888888888741095749e-03
_C3 = 2.48015872894767294178e-05
_C4 = -2.75573143513906633035e-07
_C5 = 2.08757232129817482790e-09
_C6 = -1.13596475577881948265e-11


@njit(inline="always")
def _sincos(x):
    kf = np.rint(x * _TWO_OVER_PI)
    k = np.int64(kf)
    r = (x - kf * _PIO2_HI) - kf * _PIO2_LO
    z = r * r
    sp = r + r * z * (_S1 + z * (_S2 + z * (_S3 + z * (_S4 + z * (_S5 + z * _S6)))))
    cp = 1.0 - 0.5 * z + z * z * (_C1 + z * (_C2 + z * (_C3 + z * (_C4 + z * (_C5 + z * _C6)))))
    q = k & 3
    swap = (q & 1) == 1
    sv = cp if swap else sp
    cv = sp if swap else cp
    s = -sv if (q & 2) == 2 else sv
    c = -cv if ((q + 1) & 2) == 2 else cv
    return s, c


def _sincos_body(x, s_out, c_out):
    for i in range(x.shape[0]):
        s_out[i], c_out[i] = _sincos(x[i])


#: packed polynomial sin/cos over an array (test/benchmark surface)
sincos = njit(nogil=True, fastmath=_FM, cache=True)(_sincos_body)


# ---------------------------------------------------------------------------
# Line model.  State access: theta[b] = y[b], v[b] = y[nb + b].
# ---------------------------------------------------------------------------

def _line_res_scalar_body(bus_h, bus_k, gl, bl, gl2, bl2, gsh, bsh, gsk, bsk,
                    y, nb, ph, pk, qh, qk):
    for i in range(bus_h.shape[0]):
        h = bus_h[i]
        k = bus_k[i]
        a = y[nb + h]
        b = y[nb + k]
        thk = y[h] - y[k]
        ci = np.cos(thk)
        si = np.sin(thk)
        ab = a * b
        t1h = gl[i] * ci + bl[i] * si
        t2h = gl[i] * si - bl[i] * ci
        t1k = gl2[i] * ci - bl2[i] * si
        t2k = gl2[i] * si + bl2[i] * ci
        ph[i] = a * a * gsh[i] - ab * t1h
        qh[i] = -a * a * bsh[i] - ab * t2h
        pk[i] = b * b * gsk[i] - ab * t1k
        qk[i] = -b * b * bsk[i] + ab * t2k


def _line_gather_body(bus_h, bus_k, y, nb, thk, vh, vk):
    # scalar by nature (indexed loads); kept separate so the arithmetic
    # passes below stay contiguous and packed
    for i in range(bus_h.shape[0]):
        h = bus_h[i]
        k = bus_k[i]
        thk[i] = y[h] - y[k]
        vh[i] = y[nb + h]
        vk[i] = y[nb + k]


def _line_res_simd_body(thk, vh, vk, gl, bl, gl2, bl2, gsh, bsh, gsk, bsk,
                  ph, pk, qh, qk):
    for i in range(thk.shape[0]):
        si, ci = _sincos(thk[i])
        a = vh[i]
        b = vk[i]
        ab = a * b
        t1h = gl[i] * ci + bl[i] * si
        t2h = gl[i] * si - bl[i] * ci
        t1k = gl2[i] * ci - bl2[i] * si
        t2k = gl2[i] * si + bl2[i] * ci
        ph[i] = a * a * gsh[i] - ab * t1h
        qh[i] = -a * a * bsh[i] - ab * t2h
        pk[i] = b * b * gsk[i] - ab * t1k
        qk[i] = -b * b * bsk[i] + ab * t2k


def _line_jac_scalar_body(bus_h, bus_k, gl, bl, gl2, bl2, gsh, bsh, gsk, bsk,
                    y, nb,
                    gph_thh, gph_thk, gph_vh, gph_vk,
                    gqh_thh, gqh_thk, gqh_vh, gqh_vk,
                    gpk_thh, gpk_thk, gpk_vh, gpk_vk,
                    gqk_thh, gqk_thk, gqk_vh, gqk_vk):
    # partials of the residual rows, i.e. the negated flow derivatives
    for i in range(bus_h.shape[0]):
        h = bus_h[i]
        k = bus_k[i]
        a = y[nb + h]
        b = y[nb + k]
        thk = y[h] - y[k]
        ci = np.cos(thk)
        si = np.sin(thk)
        ab = a * b
        t1h = gl[i] * ci + bl[i] * si
        t2h = gl[i] * si - bl[i] * ci
        t1k = gl2[i] * ci - bl2[i] * si
        t2k = gl2[i] * si + bl2[i] * ci
        gph_thh[i] = -ab * t2h
        gph_thk[i] = ab * t2h
        gph_vh[i] = -(2.0 * a * gsh[i] - b * t1h)
        gph_vk[i] = a * t1h
        gqh_thh[i] = ab * t1h
        gqh_thk[i] = -ab * t1h
        gqh_vh[i] = 2.0 * a * bsh[i] + b * t2h
        gqh_vk[i] = a * t2h
        gpk_thh[i] = -ab * t2k
        gpk_thk[i] = ab * t2k
        gpk_vh[i] = b * t1k
        gpk_vk[i] = -(2.0 * b * gsk[i] - a * t1k)
        gqk_thh[i] = -ab * t1k
        gqk_thk[i] = ab * t1k
        gqk_vh[i] = -b * t2k
        gqk_vk[i] = 2.0 * b * bsk[i] - a * t2k


# The vectorized Jacobian is split into an h-side and a k-side kernel:
# a single 27-array loop exceeds LLVM's runtime alias-check budget and
# silently deoptimizes to scalar code.  The duplicated trig is packed
# polynomial work, far cheaper than losing the packing.

def _line_jac_simd_h_body(thk, vh, vk, gl, bl, gsh, bsh,
                    gph_thh, gph_thk, gph_vh, gph_vk,
                    gqh_thh, gqh_thk, gqh_vh, gqh_vk):
    for i in range(thk.shape[0]):
        si, ci = _sincos(thk[i])
        a = vh[i]
        b = vk[i]
        ab = a * b
        t1h = gl[i] * ci + bl[i] * si
        t2h = gl[i] * si - bl[i] * ci
        gph_thh[i] = -ab * t2h
        gph_thk[i] = ab * t2h
        gph_vh[i] = -(2.0 * a * gsh[i] - b * t1h)
        gph_vk[i] = a * t1h
        gqh_thh[i] = ab * t1h
        gqh_thk[i] = -ab * t1h
        gqh_vh[i] = 2.0 * a * bsh[i] + b * t2h
        gqh_vk[i] = a * t2h


def _line_jac_simd_k_body(thk, vh, vk, gl2, bl2, gsk, bsk,
                    gpk_thh, gpk_thk, gpk_vh, gpk_vk,
                    gqk_thh, gqk_thk, gqk_vh, gqk_vk):
    for i in range(thk.shape[0]):
        si, ci = _sincos(thk[i])
        a = vh[i]
        b = vk[i]
        ab = a * b
        t1k = gl2[i] * ci - bl2[i] * si
        t2k = gl2[i] * si + bl2[i] * ci
        gpk_thh[i] = -ab * t2k
        gpk_thk[i] = ab * t2k
        gpk_vh[i] = b * t1k
        gpk_vk[i] = -(2.0 * b * gsk[i] - a * t1k)
        gqk_thh[i] = -ab * t1k
        gqk_thk[i] = ab * t1k
        gqk_vh[i] = -b * t2k
        gqk_vk[i] = 2.0 * b * bsk[i] - a * t2k


# ---------------------------------------------------------------------------
# Small models.  One source body each, compiled in both flavors.
# ---------------------------------------------------------------------------

def _pq_res(p0, q0, out_p, out_q):
    for i in range(p0.shape[0]):
        out_p[i] = -p0[i]
        out_q[i] = -q0[i]


def _pv_res(bus, p0, v0, qg_addr, y, nb, out_p, out_q, out_v):
    for i in range(bus.shape[0]):
        out_p[i] = p0[i]
        out_q[i] = y[qg_addr[i]]
        out_v[i] = y[nb + bus[i]] - v0[i]


def _slack_res(bus, v0, th0, qg_addr, ps_addr, y, nb, out_p, out_q, out_v, out_th):
    for i in range(bus.shape[0]):
        out_p[i] = y[ps_addr[i]]
        out_q[i] = y[qg_addr[i]]
        out_v[i] = y[nb + bus[i]] - v0[i]
        out_th[i] = y[bus[i]] - th0[i]


def _shunt_res(bus, g, b, y, nb, out_p, out_q):
    for i in range(bus.shape[0]):
        vi = y[nb + bus[i]]
        v2 = vi * vi
        out_p[i] = -g[i] * v2
        out_q[i] = b[i] * v2


def _pv_jac(gq_qg, gv_v):
    for i in range(gq_qg.shape[0]):
        gq_qg[i] = 1.0
        gv_v[i] = 1.0


def _slack_jac(gp_ps, gq_qg, gv_v, gth_th):
    for i in range(gp_ps.shape[0]):
        gp_ps[i] = 1.0
        gq_qg[i] = 1.0
        gv_v[i] = 1.0
        gth_th[i] = 1.0


def _shunt_jac(bus, g, b, y, nb, gp_v, gq_v):
    for i in range(bus.shape[0]):
        vi = y[nb + bus[i]]
        gp_v[i] = -2.0 * g[i] * vi
        gq_v[i] = 2.0 * b[i] * vi


def _join_rows(ptr, split, idx, pool, out):
    # row r sums pool slots idx[ptr[r]:ptr[r+1]]; the first split[r]-ptr[r]
    # of them enter negated (line flows leave their bus)
    for r in range(out.shape[0]):
        acc = 0.0
        for j in range(ptr[r], split[r]):
            acc -= pool[idx[j]]
        for j in range(split[r], ptr[r + 1]):
            acc += pool[idx[j]]
        out[r] = acc


def _gather_sum(ptr, idx, pool, out):
    for r in range(out.shape[0]):
        acc = 0.0
        for j in range(ptr[r], ptr[r + 1]):
            acc += pool[idx[j]]
        out[r] = acc


line_res_scalar = njit(nogil=True, cache=True)(_line_res_scalar_body)
line_gather = njit(nogil=True, cache=True)(_line_gather_body)
line_res_simd = njit(nogil=True, fastmath=_FM, cache=True)(_line_res_simd_body)
line_jac_scalar = njit(nogil=True, cache=True)(_line_jac_scalar_body)
line_jac_simd_h = njit(nogil=True, fastmath=_FM, cache=True)(_line_jac_simd_h_body)
line_jac_simd_k = njit(nogil=True, fastmath=_FM, cache=True)(_line_jac_simd_k_body)

#: plain-Python kernel bodies with the flags they are compiled under, so
#: tests can compile uncached instances and inspect the generated code
#: (inspect_asm on cached dispatchers returns nothing useful)
KERNEL_BODIES = {
    "sincos": (_sincos_body, True),
    "line_res_scalar": (_line_res_scalar_body, False),
    "line_gather": (_line_gather_body, False),
    "line_res_simd": (_line_res_simd_body, True),
    "line_jac_scalar": (_line_jac_scalar_body, False),
    "line_jac_simd_h": (_line_jac_simd_h_body, True),
    "line_jac_simd_k": (_line_jac_simd_k_body, True),
}


def compile_fresh(name: str):
    """Compile an uncached instance of a kernel body for inspection."""
    body, fast = KERNEL_BODIES[name]
    kwargs = {"nogil": True, "cache": False}
    if fast:
        kwargs["fastmath"] = _FM
    return njit(**kwargs)(body)


pq_res_scalar = njit(nogil=True, cache=True)(_pq_res)
pq_res_simd = njit(nogil=True, fastmath=_FM, cache=True)(_pq_res)
pv_res_scalar = njit(nogil=True, cache=True)(_pv_res)
pv_res_simd = njit(nogil=True, fastmath=_FM, cache=True)(_pv_res)
slack_res_scalar = njit(nogil=True, cache=True)(_slack_res)
slack_res_simd = njit(nogil=True, fastmath=_FM, cache=True)(_slack_res)
shunt_res_scalar = njit(nogil=True, cache=True)(_shunt_res)
shunt_res_simd = njit(nogil=True, fastmath=_FM, cache=True)(_shunt_res)
pv_jac_scalar = njit(nogil=True, cache=True)(_pv_jac)
pv_jac_simd = njit(nogil=True, fastmath=_FM, cache=True)(_pv_jac)
slack_jac_scalar = njit(nogil=True, cache=True)(_slack_jac)
slack_jac_simd = njit(nogil=True, fastmath=_FM, cache=True)(_slack_jac)
shunt_jac_scalar = njit(nogil=True, cache=True)(_shunt_jac)
shunt_jac_simd = njit(nogil=True, fastmath=_FM, cache=True)(_shunt_jac)
join_rows_scalar = njit(nogil=True, cache=True)(_join_rows)
join_rows_simd = njit(nogil=True, fastmath=_FM, cache=True)(_join_rows)
gather_sum_scalar = njit(nogil=True, cache=True)(_gather_sum)
gather_sum_simd = njit(nogil=True, fastmath=_FM, cache=True)(_gather_sum)
