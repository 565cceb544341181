"""Direct solvers for J * dy = -g behind one pluggable interface.

Three backends share the handle contract (numeric refactorization every
call, symbolic state reused across calls with the same sparsity pattern):

* ``builtin``  - in-repo left-looking sparse LU with partial pivoting and
  a reverse-Cuthill-McKee fill-reducing preorder.  The reusable symbolic
  state is the ordering, the workspace sizing and the factor capacity
  estimate; with partial pivoting the exact factor pattern can shift
  between calls, so it is rediscovered during the numeric pass.
* ``dense``    - LAPACK LU on the densified matrix, guarded to small
  systems; exists as a test oracle.
* ``external`` - UMFPACK through cvxopt with a true symbolic/numeric
  split (optional dependency).

A handle serves one caller at a time; distinct handles are independent.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit

_PIVOT_TOL = 1e-12   # |pivot| <= tol * column max -> singular


class SingularMatrixError(RuntimeError):
    """Numerically singular matrix (zero pivot beyond threshold)."""


@njit(cache=True)
def _gp_factor(n, Ap, Ai, Ax, tol, Lp, Li, Lx, Up, Ui, Ux, Ud,
               pinv, prow, x, flag, stack, pstack, pattern):
    """Gilbert-Peierls LU: returns (status, lnz, unz).

    status 0 = ok, 1 = singular (failing column in prow[n-1] slot unused),
    2 = factor capacity exhausted (caller reallocates and retries).
    """
    lnz = 0
    unz = 0
    for i in range(n):
        pinv[i] = -1
        flag[i] = -1
        x[i] = 0.0
    cap_l = Li.shape[0]
    cap_u = Ui.shape[0]
    for k in range(n):
        Lp[k] = lnz
        Up[k] = unz
        # reach: pattern of L \ A[:, k] in topological order (depth-first
        # over the partially built L, reverse postorder)
        top = n
        for p in range(Ap[k], Ap[k + 1]):
            root = Ai[p]
            if flag[root] == k:
                continue
            head = 0
            stack[0] = root
            while head >= 0:
                node = stack[head]
                kp = pinv[node]
                if flag[node] != k:
                    flag[node] = k
                    pstack[head] = Lp[kp] if kp != -1 else 0
                descended = False
                if kp != -1:
                    q = pstack[head]
                    qend = Lp[kp + 1]
                    while q < qend:
                        child = Li[q]
                        q += 1
                        if flag[child] != k:
                            pstack[head] = q
                            head += 1
                            stack[head] = child
                            descended = True
                            break
                    if not descended:
                        pstack[head] = q
                if not descended:
                    top -= 1
                    pattern[top] = node
                    head -= 1
        # numeric column: scatter A, then eliminate along the reach
        for pt in range(top, n):
            x[pattern[pt]] = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            x[Ai[p]] = Ax[p]
        for pt in range(top, n):
            i = pattern[pt]
            kp = pinv[i]
            if kp == -1:
                continue
            xi = x[i]
            if xi != 0.0:
                for q in range(Lp[kp], Lp[kp + 1]):
                    x[Li[q]] -= Lx[q] * xi
        # partial pivot among rows not yet pivotal
        ipiv = -1
        big = 0.0
        colmax = 0.0
        for pt in range(top, n):
            i = pattern[pt]
            a = abs(x[i])
            if a > colmax:
                colmax = a
            if pinv[i] == -1 and a > big:
                big = a
                ipiv = i
        if ipiv == -1 or colmax == 0.0 or big <= tol * colmax:
            return 1, lnz, unz
        pivot = x[ipiv]
        pinv[ipiv] = k
        prow[k] = ipiv
        Ud[k] = pivot
        for pt in range(top, n):
            i = pattern[pt]
            kp = pinv[i]
            if kp == k:
                continue  # the pivot itself
            if kp != -1:
                if unz >= cap_u:
                    return 2, lnz, unz
                Ui[unz] = kp
                Ux[unz] = x[i]
                unz += 1
            else:
                if lnz >= cap_l:
                    return 2, lnz, unz
                Li[lnz] = i
                Lx[lnz] = x[i] / pivot
                lnz += 1
    Lp[n] = lnz
    Up[n] = unz
    return 0, lnz, unz


@njit(cache=True)
def _lu_solve_inplace(n, Lp, Li, Lx, Up, Ui, Ux, Ud, z):
    # L unit-lower with rows already in pivot order; U by columns
    for k in range(n):
        zk = z[k]
        if zk != 0.0:
            for q in range(Lp[k], Lp[k + 1]):
                z[Li[q]] -= Lx[q] * zk
    for k in range(n - 1, -1, -1):
        zk = z[k] / Ud[k]
        z[k] = zk
        for q in range(Up[k], Up[k + 1]):
            z[Ui[q]] -= Ux[q] * zk


def _pattern_key(a: sp.csc_matrix):
    return (a.shape, a.indptr.shape[0], int(a.indptr[-1]))


class BuiltinLU:
    """In-repo sparse LU handle (reference backend)."""

    name = "builtin"

    def __init__(self):
        self._key = None

    def _symbolic(self, a: sp.csc_matrix) -> None:
        from scipy.sparse.csgraph import reverse_cuthill_mckee

        n = a.shape[0]
        structure = (a + a.T).tocsr()
        perm = reverse_cuthill_mckee(structure, symmetric_mode=True).astype(np.int64)
        self._perm = perm
        self._n = n
        self._cap = max(8 * a.nnz + n, 256)
        self._work_x = np.zeros(n)
        self._work_flag = np.empty(n, dtype=np.int32)
        self._work_stack = np.empty(n, dtype=np.int32)
        self._work_pstack = np.empty(n, dtype=np.int32)
        self._work_pattern = np.empty(n, dtype=np.int32)
        self._pinv = np.empty(n, dtype=np.int32)
        self._prow = np.empty(n, dtype=np.int32)
        self._Lp = np.empty(n + 1, dtype=np.int32)
        self._Up = np.empty(n + 1, dtype=np.int32)
        self._Ud = np.empty(n)
        self._key = _pattern_key(a)

    def factor(self, a: sp.csc_matrix) -> None:
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got {a.shape}")
        if self._key is None:
            self._symbolic(a)
        elif self._key != _pattern_key(a):
            raise ValueError("matrix pattern does not match this handle")
        perm = self._perm
        ap = a[perm[:, None], perm[None, :]].tocsc()
        n = self._n
        while True:
            Li = np.empty(self._cap, dtype=np.int32)
            Lx = np.empty(self._cap)
            Ui = np.empty(self._cap, dtype=np.int32)
            Ux = np.empty(self._cap)
            status, lnz, unz = _gp_factor(
                n, ap.indptr, ap.indices, ap.data, _PIVOT_TOL,
                self._Lp, Li, Lx, self._Up, Ui, Ux, self._Ud,
                self._pinv, self._prow, self._work_x, self._work_flag,
                self._work_stack, self._work_pstack, self._work_pattern)
            if status == 2:
                self._cap *= 2
                continue
            if status == 1:
                raise SingularMatrixError(
                    "zero pivot encountered during factorization")
            break
        self._Li = self._pinv[Li[:lnz]].astype(np.int32)  # rows -> pivot order
        self._Lx = Lx[:lnz]
        self._Ui = Ui[:unz]
        self._Ux = Ux[:unz]

    def solve(self, a: sp.csc_matrix, b: np.ndarray) -> np.ndarray:
        self.factor(a)
        z = np.ascontiguousarray(b[self._perm][self._prow])
        _lu_solve_inplace(self._n, self._Lp, self._Li, self._Lx,
                          self._Up, self._Ui, self._Ux, self._Ud, z)
        x = np.empty_like(z)
        x[self._perm] = z
        return x


class DenseLU:
    """LAPACK oracle backend, guarded to n <= 2000."""

    name = "dense"

    def solve(self, a: sp.csc_matrix, b: np.ndarray) -> np.ndarray:
        from scipy.linalg import lu_factor, lu_solve

        n = a.shape[0]
        if n > 2000:
            raise ValueError(f"dense backend guarded to n <= 2000, got {n}")
        dense = a.toarray()
        lu, piv = lu_factor(dense, check_finite=False)
        diag = np.abs(np.diag(lu))
        if diag.min() <= _PIVOT_TOL * max(diag.max(), 1e-300):
            raise SingularMatrixError("zero pivot in dense factorization")
        return lu_solve((lu, piv), b, check_finite=False)


class UmfpackLU:
    """UMFPACK via cvxopt; reuses the symbolic analysis across calls."""

    name = "external"

    def __init__(self):
        try:
            from cvxopt import umfpack, spmatrix, matrix  # noqa: F401
        except ImportError as e:
            raise ImportError(
                "the external solver backend needs cvxopt "
                "(pip install pflow[umfpack])") from e
        self._key = None
        self._symb = None

    def solve(self, a: sp.csc_matrix, b: np.ndarray) -> np.ndarray:
        from cvxopt import matrix, spmatrix, umfpack

        n = a.shape[0]
        cols = np.repeat(np.arange(n), np.diff(a.indptr))
        A = spmatrix(a.data, a.indices.astype(np.int64), cols, (n, n))
        if self._key != _pattern_key(a) or self._symb is None:
            self._symb = umfpack.symbolic(A)
            self._key = _pattern_key(a)
        try:
            numeric = umfpack.numeric(A, self._symb)
            rhs = matrix(b)
            umfpack.solve(A, numeric, rhs)
        except ArithmeticError as e:
            raise SingularMatrixError(str(e)) from e
        return np.asarray(rhs).ravel()


_BACKENDS = {"builtin": BuiltinLU, "dense": DenseLU, "external": UmfpackLU}


def make_solver(kind: str = "builtin"):
    """Create a solver handle: ``builtin``, ``dense`` or ``external``."""
    try:
        return _BACKENDS[kind]()
    except KeyError:
        raise ValueError(
            f"unknown solver {kind!r}, expected one of {sorted(_BACKENDS)}") from None


def solve(handle, a: sp.csc_matrix, rhs: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = rhs`` with the given handle."""
    return handle.solve(a, rhs)
