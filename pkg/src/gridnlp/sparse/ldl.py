"""Simplicial up-looking LDL^T with a fixed ordering and static pivoting.

The symbolic phase (ordering, elimination tree, pattern of ``L``) is computed
once per sparsity pattern; the numeric phase can then be repeated with new
values, which is how the interior-point solver uses it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .csc import SparseMatrixCSC
from .ordering import fill_reducing_ordering


class FactorizationError(ArithmeticError):
    pass


@njit(cache=True)
def _etree_counts(n, Ap, Ai):
    parent = np.full(n, -1, np.int64)
    flag = np.empty(n, np.int64)
    lnz = np.zeros(n, np.int64)
    for k in range(n):
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i < k:
                while flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
    return parent, lnz


@njit(cache=True)
def _l_pattern(n, Ap, Ai, parent, Lp):
    Li = np.empty(Lp[n], np.int64)
    fill = np.zeros(n, np.int64)
    flag = np.empty(n, np.int64)
    for k in range(n):
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while flag[i] != k:
                flag[i] = k
                Li[Lp[i] + fill[i]] = k
                fill[i] += 1
                i = parent[i]
    return Li


@njit(cache=True)
def _ldl_numeric(n, Ap, Ai, Ax, Lp, parent, Lx, D, floor):
    y = np.zeros(n)
    flag = np.empty(n, np.int64)
    pattern = np.empty(n, np.int64)
    lnz = np.zeros(n, np.int64)
    Li = np.empty(Lp[n], np.int64)
    npos = 0
    nneg = 0
    nzero = 0
    nfloor = 0
    for k in range(n):
        y[k] = 0.0
        top = n
        flag[k] = k
        lnz[k] = 0
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            y[i] += Ax[p]
            length = 0
            while flag[i] != k:
                pattern[length] = i
                length += 1
                flag[i] = k
                i = parent[i]
            while length > 0:
                top -= 1
                length -= 1
                pattern[top] = pattern[length]
        dk = y[k]
        y[k] = 0.0
        for t in range(top, n):
            i = pattern[t]
            yi = y[i]
            y[i] = 0.0
            p2 = Lp[i] + lnz[i]
            for p in range(Lp[i], p2):
                y[Li[p]] -= Lx[p] * yi
            lki = yi / D[i]
            dk -= lki * yi
            Li[p2] = k
            Lx[p2] = lki
            lnz[i] += 1
        if not np.isfinite(dk):
            return -1 - k, npos, nneg, nzero
        if dk > 0.0:
            npos += 1
        elif dk < 0.0:
            nneg += 1
        else:
            nzero += 1
        if abs(dk) < floor:
            dk = -floor if dk < 0.0 else floor
            nfloor += 1
        D[k] = dk
    return nfloor, npos, nneg, nzero


@njit(cache=True)
def _ldl_solve(n, Lp, Li, Lx, D, x):
    for j in range(n):
        xj = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    for j in range(n):
        x[j] /= D[j]
    for j in range(n - 1, -1, -1):
        s = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s


@dataclass
class SymbolicFactorization:
    """Ordering, elimination tree and pattern of ``L`` for one input pattern."""

    n: int
    perm: np.ndarray
    pinv: np.ndarray
    parent: np.ndarray
    colcounts: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    Ap: np.ndarray          # permuted upper triangle, column storage
    Ai: np.ndarray
    value_map: np.ndarray   # input CSC slot -> permuted upper slot
    colptr: np.ndarray      # input pattern, kept for compatibility checks
    rowidx: np.ndarray

    @property
    def nnz_l(self) -> int:
        return int(self.Lp[-1])

    def matches(self, csc: SparseMatrixCSC) -> bool:
        return (csc.n == self.n and np.array_equal(csc.colptr, self.colptr)
                and np.array_equal(csc.rowidx, self.rowidx))


@dataclass
class NumericFactorization:
    symbolic: SymbolicFactorization
    Lx: np.ndarray
    D: np.ndarray
    inertia: tuple[int, int, int]
    n_floored: int
    pivot_floor: float

    @property
    def is_positive_definite(self) -> bool:
        n = self.symbolic.n
        return self.inertia == (n, 0, 0) and self.n_floored == 0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve_in_place(self, np.array(rhs, dtype=float))

    def l_dense(self) -> np.ndarray:
        s = self.symbolic
        L = np.eye(s.n)
        cols = np.repeat(np.arange(s.n), np.diff(s.Lp))
        L[s.Li, cols] = self.Lx
        return L


def _lower_pattern(csc: SparseMatrixCSC):
    if csc.shape[0] != csc.shape[1]:
        raise ValueError("matrix must be square")
    cols = np.repeat(np.arange(csc.n, dtype=np.int64), np.diff(csc.colptr))
    if not csc.symmetric:
        keep = csc.rowidx >= cols
        if not np.all(keep):
            raise ValueError("expected lower-triangle storage (symmetric=True)")
    return csc.rowidx, cols


def symbolic_factorize(csc: SparseMatrixCSC, perm: np.ndarray | None = None) -> SymbolicFactorization:
    """Elimination tree and pattern of ``L`` for ``P A P^T``.

    ``csc`` stores the lower triangle.  When ``perm`` is omitted the
    approximate minimum degree ordering is used.  Numerical singularity is
    not examined here.
    """
    n = csc.n
    if perm is None:
        perm = fill_reducing_ordering(csc)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("perm is not a permutation")
    pinv = np.empty(n, np.int64)
    pinv[perm] = np.arange(n, dtype=np.int64)
    rows, cols = _lower_pattern(csc)
    a, b = pinv[rows], pinv[cols]
    r, c = np.minimum(a, b), np.maximum(a, b)
    key = c * max(n, 1) + r
    order = np.argsort(key, kind="stable")
    value_map = np.empty(order.size, np.int64)
    value_map[order] = np.arange(order.size)
    Ap = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(c, minlength=n), out=Ap[1:])
    Ai = r[order].astype(np.int64)
    parent, counts = _etree_counts(n, Ap, Ai)
    Lp = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=Lp[1:])
    Li = _l_pattern(n, Ap, Ai, parent, Lp)
    return SymbolicFactorization(n, perm, pinv, parent, counts, Lp, Li, Ap, Ai, value_map,
                                 csc.colptr.copy(), csc.rowidx.copy())


def default_pivot_floor(csc: SparseMatrixCSC) -> float:
    d = csc.diagonal()
    return 1e-12 * (float(np.max(np.abs(d))) if d.size else 0.0)


def numeric_factorize(symbolic: SymbolicFactorization, values, pivot_floor: float | None = None,
                      csc: SparseMatrixCSC | None = None) -> NumericFactorization:
    """LDL^T of the matrix with the symbolic pattern and the given values.

    ``values`` are aligned with the input CSC slots (or a CSC matrix with the
    same pattern).  Pivots with ``|d| < pivot_floor`` are replaced by
    ``±pivot_floor``; the reported inertia is taken before flooring.
    """
    if isinstance(values, SparseMatrixCSC):
        csc = values
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.shape != symbolic.value_map.shape:
        raise ValueError("values do not match the symbolic pattern")
    if not np.all(np.isfinite(values)):
        raise FactorizationError("non-finite matrix entries")
    if pivot_floor is None:
        if csc is None:
            csc = SparseMatrixCSC((symbolic.n, symbolic.n), symbolic.colptr, symbolic.rowidx,
                                  values, True)
        pivot_floor = default_pivot_floor(csc)
    n = symbolic.n
    Ax = np.empty(values.size)
    Ax[symbolic.value_map] = values
    Lx = np.empty(symbolic.nnz_l)
    D = np.empty(n)
    status, npos, nneg, nzero = _ldl_numeric(n, symbolic.Ap, symbolic.Ai, Ax, symbolic.Lp,
                                             symbolic.parent, Lx, D, float(pivot_floor))
    if status < 0:
        raise FactorizationError(f"non-finite pivot at step {-status - 1}")
    return NumericFactorization(symbolic, Lx, D, (int(npos), int(nneg), int(nzero)),
                                int(status), float(pivot_floor))


def factorize(csc: SparseMatrixCSC, perm=None, pivot_floor=None) -> NumericFactorization:
    return numeric_factorize(symbolic_factorize(csc, perm), csc.values, pivot_floor, csc)


def solve_in_place(factor: NumericFactorization, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` overwriting ``rhs`` with ``x``; returns ``rhs``."""
    s = factor.symbolic
    if rhs.shape != (s.n,):
        raise ValueError("rhs has the wrong length")
    work = rhs[s.perm]
    _ldl_solve(s.n, s.Lp, s.Li, factor.Lx, factor.D, work)
    rhs[s.perm] = work
    return rhs


@dataclass
class RefinementResult:
    solution: np.ndarray
    residual_norm: float      # relative, ||b - A x||_inf / ||b||_inf
    passes: int
    history: list

    def __iter__(self):
        return iter((self.solution, self.residual_norm, self.passes))


def iterative_refinement(csc: SparseMatrixCSC, factor: NumericFactorization, rhs,
                         max_passes: int = 1, tol: float = 1e-12) -> RefinementResult:
    """Solve and refine against the unperturbed matrix ``csc``.

    ``factor`` is anything with a ``solve(rhs)`` method.

    Stops when the relative residual drops to ``tol`` or after ``max_passes``
    corrections and returns the best iterate seen.
    """
    b = np.asarray(rhs, dtype=float)
    bnorm = float(np.max(np.abs(b))) if b.size else 0.0
    if bnorm == 0.0:
        return RefinementResult(np.zeros_like(b), 0.0, 0, [0.0])
    x = factor.solve(b)
    r = b - csc.matvec(x)
    res = float(np.max(np.abs(r))) / bnorm
    best, best_res = x, res
    history = [res]
    passes = 0
    while res > tol and passes < max_passes:
        x = x + factor.solve(r)
        r = b - csc.matvec(x)
        res = float(np.max(np.abs(r))) / bnorm
        passes += 1
        history.append(res)
        if not np.isfinite(res):
            break
        if res < best_res:
            best, best_res = x, res
    return RefinementResult(best, best_res, passes, history)
