"""Condensed KKT system of the lifted problem and step recovery.

Eliminating slacks, equality multipliers and all bound multipliers from the
seven-block Newton system leaves

    (W + dw I + Sx + A^T D A) dx = qx + A^T (C qs + D qy)

with ``C = (dc Ss + (1 + dc dw) I)^-1`` and ``D = (Ss + dw I) C``.  The
remaining components follow by back substitution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from ..sparse.csc import compress_to_csc
from ..sparse.dense import dense_ldl_oracle
from ..sparse.ldl import FactorizationError, iterative_refinement, numeric_factorize, symbolic_factorize
from .nlp import IterateState, LiftedNLP, Residuals

log = logging.getLogger(__name__)


@dataclass
class Direction:
    dx: np.ndarray
    ds: np.ndarray
    dy: np.ndarray
    dzl_x: np.ndarray
    dzu_x: np.ndarray
    dzl_s: np.ndarray
    dzu_s: np.ndarray

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))

    def max_rel_diff(self, other: "Direction") -> float:
        """Largest componentwise ``|a - b|_inf / max(1, |b|_inf)`` over the seven parts."""
        out = 0.0
        for a, b in zip(self.as_tuple(), other.as_tuple()):
            if a.size:
                out = max(out, float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(b)))))
        return out


@dataclass
class CondensedKKT:
    Sigma_x: np.ndarray
    Sigma_s: np.ndarray
    C: np.ndarray
    D: np.ndarray
    M: object               # SparseMatrixCSC, lower triangle
    q_x: np.ndarray
    q_s: np.ndarray
    q_y: np.ndarray
    rhs: np.ndarray
    delta_w: float
    delta_c: float

    def dense(self) -> np.ndarray:
        return self.M.to_dense()


def sigmas(nlp: LiftedNLP, it: IterateState):
    gxl, gxu, gsl, gsu = it.gaps(nlp)
    sx = np.where(nlp.has_xl, it.zl_x / gxl, 0.0) + np.where(nlp.has_xu, it.zu_x / gxu, 0.0)
    ss = np.where(nlp.has_sl, it.zl_s / gsl, 0.0) + np.where(nlp.has_su, it.zu_s / gsu, 0.0)
    return sx, ss


def condensed_rhs(nlp, it, res: Residuals):
    gxl, gxu, gsl, gsu = it.gaps(nlp)
    q_x = res.px + res.pzl_x / gxl - res.pzu_x / gxu
    q_s = res.ps + res.pzl_s / gsl - res.pzu_s / gsu
    return q_x, q_s, res.py.copy()


class CondensedAssembler:
    """Fixed sparsity of ``M_cond`` with slot maps for fast numeric assembly.

    The pattern is the union of the Hessian lower triangle, the diagonal and
    every column pair sharing a Jacobian row.  It is analysed (ordering and
    symbolic factorization) once and reused for all iterations.
    """

    def __init__(self, nlp: LiftedNLP, ordering: str = "amd"):
        n = nlp.n
        self.nlp = nlp
        rows, cols = nlp.A_rows, nlp.A_cols
        order = np.argsort(rows, kind="stable")
        counts = np.bincount(rows, minlength=nlp.m) if rows.size else np.zeros(nlp.m, np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)])
        pa, pb, prow = [], [], []
        for k in np.unique(counts):
            if k == 0:
                continue
            rk = np.flatnonzero(counts == k)
            E = order[starts[rk][:, None] + np.arange(k)[None, :]]
            ii, jj = np.tril_indices(k)
            pa.append(E[:, ii].ravel())
            pb.append(E[:, jj].ravel())
            prow.append(np.repeat(rk, len(ii)))
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, np.int64)
        self.pair_a, self.pair_b, self.pair_row = cat(pa), cat(pb), cat(prow)
        ca, cb = cols[self.pair_a], cols[self.pair_b]
        diag = np.arange(n)
        coo_r = np.concatenate([nlp.h_rows, diag, np.maximum(ca, cb)])
        coo_c = np.concatenate([nlp.h_cols, diag, np.minimum(ca, cb)])
        self.csc, slots = compress_to_csc(coo_r, coo_c, np.zeros(coo_r.size), (n, n), symmetric=True)
        nh = nlp.h_rows.size
        self.slot_w = slots[:nh]
        self.slot_diag = slots[nh:nh + n]
        self.slot_pair = slots[nh + n:]
        self.slots = slots
        perm = None if ordering == "amd" else np.arange(n)
        self.symbolic = symbolic_factorize(self.csc, perm)
        log.debug("condensed pattern: n=%d nnz=%d nnz(L)=%d pairs=%d", n, self.csc.nnz,
                  self.symbolic.nnz_l, self.pair_a.size)

    def assemble(self, it: IterateState, res: Residuals, W_values, A, delta_w=0.0, delta_c=0.0) -> CondensedKKT:
        nlp = self.nlp
        sx, ss = sigmas(nlp, it)
        C = 1.0 / (delta_c * ss + (1.0 + delta_c * delta_w))
        D = (ss + delta_w) * C
        Ax = A.data
        weights = np.concatenate([
            W_values,
            sx + delta_w,
            D[self.pair_row] * Ax[self.pair_a] * Ax[self.pair_b],
        ])
        M = self.csc.__class__(self.csc.shape, self.csc.colptr, self.csc.rowidx,
                               np.bincount(self.slots, weights=weights, minlength=self.csc.nnz), True)
        q_x, q_s, q_y = condensed_rhs(nlp, it, res)
        rhs = q_x + A.T @ (C * q_s + D * q_y)
        return CondensedKKT(sx, ss, C, D, M, q_x, q_s, q_y, rhs, float(delta_w), float(delta_c))


def assemble_condensed(nlp, it, res, W_values, A, delta_w=0.0, delta_c=0.0, assembler=None) -> CondensedKKT:
    assembler = assembler or CondensedAssembler(nlp)
    return assembler.assemble(it, res, W_values, A, delta_w, delta_c)


@dataclass
class DenseFactor:
    """Dense LDL^T of ``M_cond`` exposing the sparse factor's interface."""

    inertia: tuple
    solve: object
    n_floored: int = 0


def _factor(assembler, kkt, pivot_floor, linear_solver):
    if linear_solver == "dense":
        ld = dense_ldl_oracle(kkt.M.to_dense(), allow_singular=True)
        return DenseFactor(ld.inertia, ld.solve)
    floor = pivot_floor * max(1.0, float(np.max(np.abs(kkt.M.diagonal()), initial=0.0)))
    return numeric_factorize(assembler.symbolic, kkt.M.values, pivot_floor=floor)


@dataclass
class InertiaResult:
    factor: object
    kkt: CondensedKKT
    delta_w: float
    delta_c: float
    retries: int
    inertia: tuple
    success: bool


def inertia_corrected_factorize(assembler: CondensedAssembler, it, res, W_values, A, *,
                                last_delta_w: float = 0.0, delta_w_init: float = 1e-4,
                                growth: float = 8.0, shrink: float = 1.0 / 3.0,
                                delta_w_max: float = 1e40, pivot_floor: float = 1e-30,
                                delta_c_base: float = 1e-8, linear_solver: str = "sparse") -> InertiaResult:
    """Factor ``M_cond``, raising ``delta_w`` until the inertia is ``(n, 0, 0)``.

    The first attempt uses ``delta_w = 0``.  The first retry uses
    ``max(delta_w_init, shrink * last_delta_w)`` and later retries multiply
    by ``growth``.  A zero or floored pivot switches on
    ``delta_c = delta_c_base * mu**0.25``.  ``pivot_floor`` is relative to
    the largest diagonal entry.
    """
    n = assembler.nlp.n
    delta_w, delta_c = 0.0, 0.0
    retries = 0
    while True:
        kkt = assembler.assemble(it, res, W_values, A, delta_w, delta_c)
        try:
            factor = _factor(assembler, kkt, pivot_floor, linear_solver)
            inertia = factor.inertia
            ok = inertia == (n, 0, 0) and factor.n_floored == 0
            rank_issue = inertia[2] > 0 or factor.n_floored > 0
        except (FactorizationError, np.linalg.LinAlgError):
            factor, inertia, ok, rank_issue = None, (0, 0, n), False, True
        if ok:
            return InertiaResult(factor, kkt, delta_w, delta_c, retries, inertia, True)
        retries += 1
        if rank_issue and delta_c == 0.0 and inertia[1] == 0:
            # singular but not indefinite: try the constraint regularization alone first
            delta_c = delta_c_base * it.mu ** 0.25
            continue
        if rank_issue and delta_c == 0.0:
            delta_c = delta_c_base * it.mu ** 0.25
        if delta_w == 0.0:
            delta_w = max(delta_w_init, shrink * last_delta_w)
        else:
            delta_w *= growth
        if delta_w > delta_w_max:
            return InertiaResult(factor, kkt, delta_w, delta_c, retries, inertia, False)


def recover_step(nlp: LiftedNLP, it: IterateState, kkt: CondensedKKT, factor, res: Residuals, A,
                 refinement_passes: int = 1, refinement_tol: float = 1e-12) -> Direction:
    """Solve the condensed system and back-substitute the other six components."""
    dx = iterative_refinement(kkt.M, factor, kkt.rhs, refinement_passes, refinement_tol).solution \
        if nlp.n else np.zeros(0)
    return back_substitute(nlp, it, kkt, res, A, dx)


def back_substitute(nlp, it, kkt, res, A, dx) -> Direction:
    gxl, gxu, gsl, gsu = it.gaps(nlp)
    ds = kkt.C * (kkt.delta_c * kkt.q_s - kkt.q_y + A @ dx)
    dy = (kkt.Sigma_s + kkt.delta_w) * ds - kkt.q_s
    return Direction(
        dx=dx, ds=ds, dy=dy,
        dzl_x=np.where(nlp.has_xl, (res.pzl_x - it.zl_x * dx) / gxl, 0.0),
        dzu_x=np.where(nlp.has_xu, (res.pzu_x + it.zu_x * dx) / gxu, 0.0),
        dzl_s=np.where(nlp.has_sl, (res.pzl_s - it.zl_s * ds) / gsl, 0.0),
        dzu_s=np.where(nlp.has_su, (res.pzu_s + it.zu_s * ds) / gsu, 0.0),
    )


def full_kkt_matrix(nlp: LiftedNLP, it: IterateState, W: np.ndarray, A, delta_w=0.0, delta_c=0.0):
    """Dense seven-block lifted Newton matrix, bound rows restricted to finite bounds.

    Returns ``(M_full, blocks)`` where ``blocks`` lists the index arrays of
    the bounded entries for the four multiplier families.
    """
    n, m = nlp.n, nlp.m
    A = A.toarray() if hasattr(A, "toarray") else np.asarray(A)
    gxl, gxu, gsl, gsu = it.gaps(nlp)
    bl_x, bu_x = np.flatnonzero(nlp.has_xl), np.flatnonzero(nlp.has_xu)
    bl_s, bu_s = np.flatnonzero(nlp.has_sl), np.flatnonzero(nlp.has_su)
    sizes = [n, m, m, len(bl_x), len(bu_x), len(bl_s), len(bu_s)]
    off = np.concatenate([[0], np.cumsum(sizes)])
    N = int(off[-1])
    M = np.zeros((N, N))
    X, S, Y, ZLX, ZUX, ZLS, ZUS = (slice(off[i], off[i + 1]) for i in range(7))
    M[X, X] = W + delta_w * np.eye(n)
    M[X, Y] = A.T
    M[S, S] = delta_w * np.eye(m)
    M[S, Y] = -np.eye(m)
    M[Y, X] = A
    M[Y, S] = -np.eye(m)
    M[Y, Y] = -delta_c * np.eye(m)

    def couple(zslice, prim_off, idx, sign_col, z, gap):
        k = len(idx)
        rows = np.arange(k) + zslice.start
        M[prim_off + idx, rows] = sign_col
        M[rows, prim_off + idx] = -z[idx] if sign_col > 0 else z[idx]
        M[rows, rows] = gap[idx]

    couple(ZLX, 0, bl_x, -1.0, it.zl_x, gxl)
    couple(ZUX, 0, bu_x, 1.0, it.zu_x, gxu)
    couple(ZLS, n, bl_s, -1.0, it.zl_s, gsl)
    couple(ZUS, n, bu_s, 1.0, it.zu_s, gsu)
    return M, (bl_x, bu_x, bl_s, bu_s), off


def full_kkt_oracle(nlp: LiftedNLP, it: IterateState, res: Residuals, W: np.ndarray, A,
                    delta_w=0.0, delta_c=0.0) -> Direction:
    """Reference direction from the dense seven-block system.

    The bound rows are scaled by ``-1/z`` to obtain an equivalent symmetric
    system, which is solved with the dense LDL^T oracle.
    """
    M, (bl_x, bu_x, bl_s, bu_s), off = full_kkt_matrix(nlp, it, W, A, delta_w, delta_c)
    rhs = np.concatenate([res.px, res.ps, res.py, res.pzl_x[bl_x], res.pzu_x[bu_x],
                          res.pzl_s[bl_s], res.pzu_s[bu_s]])
    scale = np.ones(M.shape[0])
    zs = [it.zl_x[bl_x], it.zu_x[bu_x], it.zl_s[bl_s], it.zu_s[bu_s]]
    for i, z in enumerate(zs):
        scale[off[3 + i]:off[4 + i]] = -1.0 / z
    Msym = scale[:, None] * M
    Msym = 0.5 * (Msym + Msym.T)
    sol = dense_ldl_oracle(Msym).solve(scale * rhs)
    parts = [sol[off[i]:off[i + 1]] for i in range(7)]
    out = []
    for idx, part, size in zip((bl_x, bu_x, bl_s, bu_s), parts[3:], (nlp.n, nlp.n, nlp.m, nlp.m)):
        full = np.zeros(size)
        full[idx] = part
        out.append(full)
    return Direction(parts[0], parts[1], parts[2], *out)
