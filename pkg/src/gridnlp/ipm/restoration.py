"""Feasibility restoration phase.

When the filter line search stalls, the solver minimizes

    rho * sum(p + n) + zeta/2 * (|D_x (x - x_R)|^2 + |D_s (s - s_R)|^2)

subject to ``c(x) - s - p + n = 0``, ``p, n >= 0`` and the original bounds
on ``x`` and ``s``.  The inner solve uses the same interior-point method
and stops as soon as the original infeasibility has dropped enough and the
point is acceptable to the outer filter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace

import numpy as np

from ..model.tape import EvaluationError
from .linesearch import barrier_objective
from .nlp import IterateState, LiftedNLP, push_interior

log = logging.getLogger(__name__)


def _closed_form_pn(cbar, mu, rho):
    """Minimizers of ``rho (p + n) - mu (log p + log n)`` subject to ``p - n = cbar``."""

    def neg_part(c):
        a = (mu - rho * c) / (2.0 * rho)
        b = mu * c / (2.0 * rho)
        root = np.sqrt(a * a + b)
        with np.errstate(divide="ignore", invalid="ignore"):
            # rationalized root when a < 0 avoids cancellation for large c
            return np.maximum(np.where(a < 0, b / (root - a), a + root), 1e-300)

    # swapping p and n flips the sign of cbar
    return neg_part(-cbar), neg_part(cbar)


class RestorationModel:
    """Minimum-infeasibility problem in the variables ``(x, s, p, n)``.

    Exposes the same evaluation interface as a frozen pattern model so the
    lifted solver can run on it unchanged.
    """

    def __init__(self, nlp: LiftedNLP, x_ref, s_ref, mu: float, rho: float = 1000.0):
        self.nlp = nlp
        self.rho = float(rho)
        self.zeta = math.sqrt(mu)
        self.x_ref = np.asarray(x_ref, dtype=float).copy()
        self.s_ref = np.asarray(s_ref, dtype=float).copy()
        self.dx2 = np.minimum(1.0, 1.0 / np.maximum(np.abs(self.x_ref), 1e-300)) ** 2
        self.ds2 = np.minimum(1.0, 1.0 / np.maximum(np.abs(self.s_ref), 1e-300)) ** 2
        self.nx, self.m = nlp.n, nlp.m
        self.n = self.nx + 3 * self.m
        cbar = nlp.constraints(self.x_ref) - self.s_ref
        self.p0, self.n0 = _closed_form_pn(cbar, mu, self.rho)

    # interface expected by LiftedNLP
    def freeze(self):
        return self

    @property
    def x_lower(self):
        return np.concatenate([self.nlp.xl, self.nlp.sl, np.zeros(2 * self.m)])

    @property
    def x_upper(self):
        return np.concatenate([self.nlp.xu, self.nlp.su, np.full(2 * self.m, np.inf)])

    @property
    def x_start(self):
        return np.concatenate([self.x_ref, self.s_ref, self.p0, self.n0])

    @property
    def g_lower(self):
        return np.zeros(self.m)

    g_upper = g_lower
    rhs = g_lower

    @property
    def row_scale(self):
        return np.ones(self.m)

    def split(self, z):
        nx, m = self.nx, self.m
        return z[:nx], z[nx:nx + m], z[nx + m:nx + 2 * m], z[nx + 2 * m:]

    def jacobian_structure(self):
        nx, m = self.nx, self.m
        r = np.arange(m)
        rows = np.concatenate([self.nlp.A_rows, r, r, r])
        cols = np.concatenate([self.nlp.A_cols, nx + r, nx + m + r, nx + 2 * m + r])
        return rows, cols

    def hessian_structure(self):
        d = np.arange(self.nx + self.m)
        return np.concatenate([self.nlp.h_rows, d]), np.concatenate([self.nlp.h_cols, d])

    def evaluate_objective(self, z) -> float:
        x, s, p, n = self.split(z)
        prox = float(self.dx2 @ (x - self.x_ref) ** 2 + self.ds2 @ (s - self.s_ref) ** 2)
        return self.rho * float(p.sum() + n.sum()) + 0.5 * self.zeta * prox

    def evaluate_gradient(self, z) -> np.ndarray:
        x, s, p, n = self.split(z)
        return np.concatenate([self.zeta * self.dx2 * (x - self.x_ref), self.zeta * self.ds2 * (s - self.s_ref),
                               np.full(2 * self.m, self.rho)])

    def evaluate_constraints(self, z) -> np.ndarray:
        x, s, p, n = self.split(z)
        return self.nlp.constraints(x) - s - p + n

    def evaluate_jacobian(self, z, out=None) -> np.ndarray:
        x = z[:self.nx]
        m = self.m
        vals = np.concatenate([self.nlp.jacobian(x).data, np.full(2 * m, -1.0), np.ones(m)])
        if out is not None:
            out[:] = vals
            return out
        return vals

    def evaluate_hessian(self, z, y, obj_weight=1.0, out=None) -> np.ndarray:
        x = z[:self.nx]
        # only the original rows carry curvature; the objective part is diagonal
        orig = self.nlp.model.evaluate_hessian(self.nlp.full(x), np.asarray(y, dtype=float), 0.0)
        vals = np.concatenate([orig[self.nlp._hkeep], obj_weight * self.zeta * self.dx2,
                               obj_weight * self.zeta * self.ds2])
        if out is not None:
            out[:] = vals
            return out
        return vals


def restore(nlp: LiftedNLP, it: IterateState, ev, config, filt) -> IterateState | None:
    """Run the restoration phase from ``it``; returns a new outer iterate or None on failure."""
    from .solver import solve  # circular: the solver imports this module lazily

    theta_r = float(np.sum(np.abs(ev.c - it.s)))
    phi_r = barrier_objective(nlp, ev.f, it, it.mu)
    filt.add(theta_r, phi_r)
    mu_r = max(it.mu, float(np.max(np.abs(ev.c - it.s), initial=0.0)))
    rmodel = RestorationModel(nlp, it.x, it.s, mu_r)
    rnlp = LiftedNLP(rmodel, config.tol, config.relative_slack)

    z0 = rnlp.reduce(rmodel.x_start)
    s0 = push_interior(rnlp.constraints(z0), rnlp.sl, rnlp.su, config.push_kappa)
    gaps = (z0 - rnlp.xl, rnlp.xu - z0, s0 - rnlp.sl, rnlp.su - s0)
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = [np.where(mask, mu_r / g, 0.0)
              for g, mask in zip(gaps, (rnlp.has_xl, rnlp.has_xu, rnlp.has_sl, rnlp.has_su))]
    start = IterateState(z0, s0, np.zeros(rnlp.m), *zs, mu=mu_r)

    found = {}

    def accept(_rnlp, rit, rev):
        x, s, p, n = rmodel.split(rnlp.full(rit.x))
        theta = float(np.sum(np.abs(rev.c + p - n)))
        if theta > 0.9 * theta_r:
            return False
        trial = replace(it, x=x, s=s)
        if not trial.is_interior(nlp):
            return False
        try:
            f = nlp.objective(x)
        except (EvaluationError, ArithmeticError, ValueError):
            return False
        if not filt.acceptable(theta, barrier_objective(nlp, f, trial, it.mu)):
            return False
        found["x"], found["s"] = x.copy(), s.copy()
        return True

    inner = replace(config, restoration=False, mu_init=mu_r)
    _, report = solve(rnlp, inner, callback=accept, start=start)
    if "x" not in found:
        log.info("restoration failed: %s after %d iterations", report.status, report.iterations)
        return None

    x, s = found["x"], found["s"]
    new = IterateState(x, s, np.zeros(nlp.m), it.zl_x, it.zu_x, it.zl_s, it.zu_s, it.mu)
    for name, gap, mask in zip(("zl_x", "zu_x", "zl_s", "zu_s"), new.gaps(nlp),
                               (nlp.has_xl, nlp.has_xu, nlp.has_sl, nlp.has_su)):
        setattr(new, name, np.where(mask, it.mu / gap, 0.0))
    log.info("restoration succeeded after %d iterations", report.iterations)
    return new
