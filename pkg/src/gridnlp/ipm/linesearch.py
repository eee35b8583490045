"""Fraction-to-boundary rule and the (barrier objective, infeasibility) filter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model.tape import EvaluationError
from .kkt import Direction
from .nlp import IterateState, LiftedNLP


def max_step(v, lower, upper, dv, tau) -> float:
    """Largest ``a`` in (0, 1] with ``v + a dv`` keeping ``tau`` of each finite bound gap."""
    v, dv = np.asarray(v, dtype=float), np.asarray(dv, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), v.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), v.shape)
    alpha = 1.0
    down = np.isfinite(lower) & (dv < 0)
    if np.any(down):
        alpha = min(alpha, float(np.min(-tau * (v[down] - lower[down]) / dv[down])))
    up = np.isfinite(upper) & (dv > 0)
    if np.any(up):
        alpha = min(alpha, float(np.min(tau * (upper[up] - v[up]) / dv[up])))
    return alpha


def fraction_to_boundary(nlp: LiftedNLP, it: IterateState, d: Direction, tau: float):
    """``(alpha_primal_max, alpha_dual_max)`` for the update ``x - a dx`` etc."""
    a_pri = min(max_step(it.x, nlp.xl, nlp.xu, -d.dx, tau),
                max_step(it.s, nlp.sl, nlp.su, -d.ds, tau))
    a_dual = 1.0
    for z, dz, mask in ((it.zl_x, d.dzl_x, nlp.has_xl), (it.zu_x, d.dzu_x, nlp.has_xu),
                        (it.zl_s, d.dzl_s, nlp.has_sl), (it.zu_s, d.dzu_s, nlp.has_su)):
        if np.any(mask):
            a_dual = min(a_dual, max_step(z[mask], 0.0, np.inf, -dz[mask], tau))
    return a_pri, a_dual


def barrier_objective(nlp: LiftedNLP, f: float, it: IterateState, mu: float) -> float:
    gxl, gxu, gsl, gsu = it.gaps(nlp)
    logs = 0.0
    for gap, mask in ((gxl, nlp.has_xl), (gxu, nlp.has_xu), (gsl, nlp.has_sl), (gsu, nlp.has_su)):
        if np.any(mask):
            logs += float(np.sum(np.log(gap[mask])))
    return f - mu * logs


def barrier_directional_derivative(nlp, grad, it, d: Direction, mu) -> float:
    """Derivative of the barrier objective along the applied step ``(-dx, -ds)``."""
    gxl, gxu, gsl, gsu = it.gaps(nlp)
    gx = grad - np.where(nlp.has_xl, mu / gxl, 0.0) + np.where(nlp.has_xu, mu / gxu, 0.0)
    gs = -np.where(nlp.has_sl, mu / gsl, 0.0) + np.where(nlp.has_su, mu / gsu, 0.0)
    return -float(gx @ d.dx) - float(gs @ d.ds)


@dataclass
class FilterParams:
    gamma_theta: float = 1e-5
    gamma_phi: float = 1e-8
    delta: float = 1.0
    s_theta: float = 1.1
    s_phi: float = 2.3
    eta_phi: float = 1e-8
    theta_max_fact: float = 1e4
    theta_min_fact: float = 1e-4
    alpha_min: float = 1e-12
    max_soc: int = 4
    kappa_soc: float = 0.99


@dataclass
class Filter:
    """Set of forbidden (theta, phi) corners."""

    params: FilterParams = field(default_factory=FilterParams)
    entries: list = field(default_factory=list)
    theta_max: float = np.inf
    theta_min: float = 0.0

    def reset(self, theta0: float | None = None):
        self.entries = []
        if theta0 is not None:
            self.theta_max = self.params.theta_max_fact * max(1.0, theta0)
            self.theta_min = self.params.theta_min_fact * max(1.0, theta0)

    def acceptable(self, theta: float, phi: float) -> bool:
        if theta > self.theta_max:
            return False
        return all(theta < t or phi < p for t, p in self.entries)

    def add(self, theta: float, phi: float):
        gt, gp = self.params.gamma_theta, self.params.gamma_phi
        t, p = (1.0 - gt) * theta, phi - gp * theta
        self.entries = [(a, b) for a, b in self.entries if not (a >= t and b >= p)]
        self.entries.append((t, p))

    def switching(self, alpha: float, theta: float, dphi: float) -> bool:
        pr = self.params
        return dphi < 0.0 and alpha * (-dphi) ** pr.s_phi > pr.delta * theta ** pr.s_theta

    def check(self, alpha, theta, phi, dphi, theta_t, phi_t):
        """Acceptance of a trial point; returns ``(accepted, f_type)``."""
        pr = self.params
        if not np.isfinite(phi_t) or not self.acceptable(theta_t, phi_t):
            return False, False
        if theta <= self.theta_min and self.switching(alpha, theta, dphi):
            return phi_t <= phi + pr.eta_phi * alpha * dphi, True
        ok = theta_t <= (1.0 - pr.gamma_theta) * theta or phi_t <= phi - pr.gamma_phi * theta
        return ok, False


@dataclass
class LineSearchResult:
    accepted: bool
    alpha: float
    alpha_dual: float
    iterate: IterateState | None = None
    evaluation: object = None
    trials: int = 0
    soc: bool = False
    f_type: bool = False


def take_step(it: IterateState, d: Direction, alpha: float, alpha_dual: float) -> IterateState:
    return IterateState(
        x=it.x - alpha * d.dx, s=it.s - alpha * d.ds, y=it.y + alpha * d.dy,
        zl_x=it.zl_x - alpha_dual * d.dzl_x, zu_x=it.zu_x - alpha_dual * d.dzu_x,
        zl_s=it.zl_s - alpha_dual * d.dzl_s, zu_s=it.zu_s - alpha_dual * d.dzu_s,
        mu=it.mu,
    )


def _trial(nlp, it, evaluate, mu):
    """Evaluate (theta, phi) at a trial iterate; evaluation failures give infinities."""
    if not it.is_interior(nlp):
        return np.inf, np.inf, None
    try:
        ev = evaluate(it.x)
    except (EvaluationError, FloatingPointError, ValueError):
        return np.inf, np.inf, None
    theta = float(np.sum(np.abs(ev.c - it.s)))
    phi = barrier_objective(nlp, ev.f, it, mu)
    if not (np.isfinite(theta) and np.isfinite(phi)):
        return np.inf, np.inf, None
    return theta, phi, ev


def filter_line_search(nlp: LiftedNLP, it: IterateState, d: Direction, alpha_max: float,
                       alpha_dual: float, mu: float, filt: Filter, ev, evaluate,
                       soc_direction=None, tau: float = 0.99) -> LineSearchResult:
    """Backtracking filter line search from ``alpha_max`` by halving.

    ``ev`` holds the functions at the current point and ``evaluate(x)``
    produces them at trial points.  ``soc_direction(c_soc)`` may return a
    second-order-correction direction for the first rejected trial.
    Returns an unaccepted result when the step falls below ``alpha_min``,
    which is the caller's cue for feasibility restoration.
    """
    pr = filt.params
    theta = float(np.sum(np.abs(ev.c - it.s)))
    phi = barrier_objective(nlp, ev.f, it, mu)
    dphi = barrier_directional_derivative(nlp, ev.grad, it, d, mu)
    alpha = alpha_max
    trials = 0
    while alpha >= pr.alpha_min:
        trials += 1
        trial = take_step(it, d, alpha, alpha_dual)
        theta_t, phi_t, ev_t = _trial(nlp, trial, evaluate, mu)
        ok, f_type = filt.check(alpha, theta, phi, dphi, theta_t, phi_t)
        if ok:
            if not f_type:
                filt.add(theta, phi)
            return LineSearchResult(True, alpha, alpha_dual, trial, ev_t, trials, False, f_type)
        if trials == 1 and soc_direction is not None and ev_t is not None and theta_t >= theta:
            res = _second_order_correction(nlp, it, d, alpha, alpha_dual, mu, filt, ev, evaluate,
                                           soc_direction, theta, phi, dphi, ev_t, trial, tau)
            if res is not None:
                res.trials += trials
                return res
        alpha *= 0.5
    return LineSearchResult(False, alpha, alpha_dual, None, None, trials)


def _second_order_correction(nlp, it, d, alpha, alpha_dual, mu, filt, ev, evaluate, soc_direction,
                             theta, phi, dphi, ev_t, trial, tau):
    pr = filt.params
    c_soc = alpha * (ev.c - it.s)
    theta_old = np.inf
    theta_t = float(np.sum(np.abs(ev_t.c - trial.s)))
    for k in range(pr.max_soc):
        if k > 0 and theta_t > pr.kappa_soc * theta_old:
            break
        c_soc = c_soc + (ev_t.c - trial.s)
        d_soc = soc_direction(c_soc)
        if d_soc is None:
            break
        a_soc, _ = fraction_to_boundary(nlp, it, d_soc, tau)
        trial = take_step(it, d_soc, a_soc, alpha_dual)
        trial.zl_x, trial.zu_x, trial.zl_s, trial.zu_s = (
            it.zl_x - alpha_dual * d.dzl_x, it.zu_x - alpha_dual * d.dzu_x,
            it.zl_s - alpha_dual * d.dzl_s, it.zu_s - alpha_dual * d.dzu_s)
        trial.y = it.y + alpha * d.dy
        theta_old = theta_t
        theta_t, phi_t, ev_new = _trial(nlp, trial, evaluate, mu)
        if ev_new is None:
            break
        ok, f_type = filt.check(alpha, theta, phi, dphi, theta_t, phi_t)
        if ok:
            if not f_type:
                filt.add(theta, phi)
            return LineSearchResult(True, a_soc, alpha_dual, trial, ev_new, k + 1, True, f_type)
        ev_t = ev_new
    return None
