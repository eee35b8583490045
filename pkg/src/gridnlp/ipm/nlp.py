"""Lifted standard-form NLP, primal-dual iterates and KKT residuals.

Every constraint row ``l <= c(x) <= u`` becomes ``c(x) - s = 0`` with a
bounded slack.  Equality rows (``l == u``) get the thin box
``l +- eps * max(1, |rhs|)`` so that converging to the slack box bounds the
original violation by a relative tolerance.  Fixed variables (equal bounds)
are removed from the variable space entirely.

Sign conventions follow the lifted Newton system: the Lagrangian is
``f(x) - y^T (c(x) - s)``, bound multipliers are positive, and a direction
``(dx, ds, dy, dz...)`` is applied as ``x - a dx``, ``s - a ds``, ``y + a dy``,
``z - a dz``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
import scipy.sparse as sp

from ..sparse.csc import compress_to_csc


class LiftError(ValueError):
    pass


class LiftedNLP:
    """Reduced (free-variable) view of a frozen pattern model with slack boxes."""

    def __init__(self, model, eps_tol: float = 1e-4, relative: bool = True, obj_scale: float = 1.0):
        if eps_tol <= 0:
            raise LiftError("eps_tol must be positive")
        model.freeze()
        self.model = model
        self.eps_tol = float(eps_tol)
        self.relative = relative
        self.obj_scale = float(obj_scale)

        xl_full, xu_full = model.x_lower, model.x_upper
        if np.any(xl_full > xu_full):
            raise LiftError("variable lower bound exceeds upper bound")
        fixed = xl_full == xu_full
        self.free = np.flatnonzero(~fixed)
        self.x_base = np.clip(model.x_start, xl_full, xu_full)
        self.x_base[fixed] = xl_full[fixed]
        self.n_full = model.n
        self.n = len(self.free)
        self.m = model.m
        self.xl = xl_full[self.free]
        self.xu = xu_full[self.free]
        self.has_xl = np.isfinite(self.xl)
        self.has_xu = np.isfinite(self.xu)

        gl, gu, rhs = model.g_lower, model.g_upper, model.rhs
        if np.any(gl > gu):
            bad = int(np.flatnonzero(gl > gu)[0])
            raise LiftError(f"row {bad}: lower bound exceeds upper bound")
        self.eq = gl == gu
        width = self.eps_tol * (np.maximum(1.0, np.abs(rhs)) if relative else np.ones(self.m))
        self.sl = np.where(self.eq, gl - width, gl)
        self.su = np.where(self.eq, gu + width, gu)
        self.has_sl = np.isfinite(self.sl)
        self.has_su = np.isfinite(self.su)
        self.g_lower, self.g_upper = gl, gu
        self.row_scale = model.row_scale

        colmap = np.full(self.n_full, -1, np.int64)
        colmap[self.free] = np.arange(self.n)
        jr, jc = model.jacobian_structure()
        self._jkeep = colmap[jc] >= 0
        a, self._jslot = compress_to_csc(jr[self._jkeep], colmap[jc[self._jkeep]],
                                         np.zeros(int(self._jkeep.sum())), (self.m, self.n))
        self.A = sp.csc_matrix((np.zeros(a.nnz), a.rowidx, a.colptr), shape=(self.m, self.n))
        self.A_rows = a.rowidx
        self.A_cols = np.repeat(np.arange(self.n), np.diff(a.colptr))
        hr, hc = model.hessian_structure()
        self._hkeep = (colmap[hr] >= 0) & (colmap[hc] >= 0)
        self.h_rows = colmap[hr[self._hkeep]]
        self.h_cols = colmap[hc[self._hkeep]]

    # ---------------------------------------------------------------- mapping
    def full(self, x) -> np.ndarray:
        out = self.x_base.copy()
        out[self.free] = x
        return out

    def reduce(self, x_full) -> np.ndarray:
        return np.asarray(x_full, dtype=float)[self.free]

    # ------------------------------------------------------------- evaluation
    def objective(self, x) -> float:
        return self.obj_scale * self.model.evaluate_objective(self.full(x))

    def gradient(self, x) -> np.ndarray:
        return self.obj_scale * self.model.evaluate_gradient(self.full(x))[self.free]

    def constraints(self, x) -> np.ndarray:
        return self.model.evaluate_constraints(self.full(x))

    def jacobian(self, x) -> sp.csc_matrix:
        """Jacobian ``A`` (shared scipy object, values refreshed in place)."""
        vals = self.model.evaluate_jacobian(self.full(x))[self._jkeep]
        self.A.data[:] = np.bincount(self._jslot, weights=vals, minlength=self.A.nnz)
        return self.A

    def hessian_values(self, x, y) -> np.ndarray:
        """Lower-triangle values of ``W = obj_scale * Hess f - sum_i y_i Hess c_i``."""
        return self.model.evaluate_hessian(self.full(x), -np.asarray(y, dtype=float),
                                           self.obj_scale)[self._hkeep]

    def hessian_dense(self, x, y) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        np.add.at(W, (self.h_rows, self.h_cols), self.hessian_values(x, y))
        return W + np.tril(W, -1).T

    def original_violation(self, x=None, c=None) -> np.ndarray:
        """Relative distance of each row value to its original bounds ``[l, u]``."""
        if c is None:
            c = self.constraints(x)
        viol = np.maximum(0.0, np.maximum(self.g_lower - c, c - self.g_upper))
        return viol / self.row_scale


def lift_inequalities(model, eps_tol: float = 1e-4, relative: bool = True, obj_scale: float = 1.0) -> LiftedNLP:
    """Relax every constraint row to ``c(x) - s = 0`` with a bounded slack."""
    return LiftedNLP(model, eps_tol, relative, obj_scale)


@dataclass
class IterateState:
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    zl_x: np.ndarray
    zu_x: np.ndarray
    zl_s: np.ndarray
    zu_s: np.ndarray
    mu: float

    def copy(self) -> "IterateState":
        return replace(self, **{f.name: getattr(self, f.name).copy() for f in fields(self)
                                if isinstance(getattr(self, f.name), np.ndarray)})

    def gaps(self, nlp: LiftedNLP):
        """Bound distances; entries without a bound are set to 1."""
        return (np.where(nlp.has_xl, self.x - nlp.xl, 1.0), np.where(nlp.has_xu, nlp.xu - self.x, 1.0),
                np.where(nlp.has_sl, self.s - nlp.sl, 1.0), np.where(nlp.has_su, nlp.su - self.s, 1.0))

    def is_interior(self, nlp: LiftedNLP) -> bool:
        gaps = self.gaps(nlp)
        zs = (self.zl_x, self.zu_x, self.zl_s, self.zu_s)
        masks = (nlp.has_xl, nlp.has_xu, nlp.has_sl, nlp.has_su)
        return all(np.all(g[k] > 0) and np.all(z[k] > 0) for g, z, k in zip(gaps, zs, masks))

    def multiplier_norm1(self) -> float:
        return float(sum(np.abs(v).sum() for v in (self.y, self.zl_x, self.zu_x, self.zl_s, self.zu_s)))


def push_interior(v, lower, upper, kappa=1e-2):
    """Move ``v`` inside ``[lower, upper]``.

    The margin from a finite bound ``b`` is ``kappa * max(1, |b|)`` or, for a
    finite box, ``kappa`` times its width if that is larger; it never exceeds
    half the width.
    """
    v = np.asarray(v, dtype=float).copy()
    lower = np.broadcast_to(np.asarray(lower, dtype=float), v.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), v.shape)
    width = upper - lower
    finite = np.isfinite(width)
    with np.errstate(invalid="ignore"):
        push_lo = kappa * np.maximum(1.0, np.abs(np.where(np.isfinite(lower), lower, 0.0)))
        push_hi = kappa * np.maximum(1.0, np.abs(np.where(np.isfinite(upper), upper, 0.0)))
        push_lo = np.where(finite, np.minimum(np.maximum(push_lo, kappa * width), 0.5 * width), push_lo)
        push_hi = np.where(finite, np.minimum(np.maximum(push_hi, kappa * width), 0.5 * width), push_hi)
    has_lo = np.isfinite(lower)
    has_hi = np.isfinite(upper)
    v = np.where(has_lo, np.maximum(v, lower + push_lo), v)
    v = np.where(has_hi, np.minimum(v, upper - push_hi), v)
    return v


def initialize(nlp: LiftedNLP, mu_init: float = 0.1, kappa: float = 1e-2, z_init: float = 1.0) -> IterateState:
    x = push_interior(nlp.reduce(nlp.x_base), nlp.xl, nlp.xu, kappa)
    s = push_interior(nlp.constraints(x), nlp.sl, nlp.su, kappa)
    return IterateState(
        x=x, s=s, y=np.zeros(nlp.m),
        zl_x=np.where(nlp.has_xl, z_init, 0.0), zu_x=np.where(nlp.has_xu, z_init, 0.0),
        zl_s=np.where(nlp.has_sl, z_init, 0.0), zu_s=np.where(nlp.has_su, z_init, 0.0),
        mu=float(mu_init),
    )


@dataclass
class Residuals:
    px: np.ndarray
    ps: np.ndarray
    py: np.ndarray
    pzl_x: np.ndarray
    pzu_x: np.ndarray
    pzl_s: np.ndarray
    pzu_s: np.ndarray

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass
class Evaluation:
    """Functions and derivatives at one primal point."""

    f: float
    grad: np.ndarray
    c: np.ndarray
    A: sp.csc_matrix


def evaluate(nlp: LiftedNLP, x) -> Evaluation:
    return Evaluation(nlp.objective(x), nlp.gradient(x), nlp.constraints(x), nlp.jacobian(x).copy())


def compute_residuals(nlp: LiftedNLP, it: IterateState, ev: Evaluation | None = None,
                      mu: float | None = None) -> Residuals:
    if ev is None:
        ev = evaluate(nlp, it.x)
    mu = it.mu if mu is None else mu
    gxl, gxu, gsl, gsu = it.gaps(nlp)
    return Residuals(
        px=ev.grad - ev.A.T @ it.y - it.zl_x + it.zu_x,
        ps=-it.zl_s + it.zu_s + it.y,
        py=ev.c - it.s,
        pzl_x=np.where(nlp.has_xl, it.zl_x * gxl - mu, 0.0),
        pzu_x=np.where(nlp.has_xu, it.zu_x * gxu - mu, 0.0),
        pzl_s=np.where(nlp.has_sl, it.zl_s * gsl - mu, 0.0),
        pzu_s=np.where(nlp.has_su, it.zu_s * gsu - mu, 0.0),
    )
