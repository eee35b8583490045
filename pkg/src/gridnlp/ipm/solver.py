"""Condensed-space interior-point driver.

Each iteration computes residuals, assembles and factors the condensed
matrix with inertia correction, recovers the full direction, applies the
fraction-to-boundary rule and a filter line search, and updates the barrier
parameter monotonically.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..model.tape import EvaluationError
from ..sparse.ldl import iterative_refinement
from .kkt import (
    CondensedAssembler,
    Direction,
    back_substitute,
    condensed_rhs,
    inertia_corrected_factorize,
    recover_step,
)
from .linesearch import Filter, FilterParams, filter_line_search, fraction_to_boundary
from .nlp import IterateState, LiftedNLP, compute_residuals, evaluate, initialize, lift_inequalities

log = logging.getLogger(__name__)

STATUSES = ("solved", "max-iter", "restoration-failed", "line-search-failed",
            "factorization-failed", "evaluation-error", "time-limit")

LOG_FIELDS = ("iter", "objective", "inf_pr", "inf_du", "compl", "viol", "mu", "alpha_pr", "alpha_du",
              "delta_w", "delta_c", "retries", "inertia_pos", "inertia_neg", "inertia_zero",
              "ls_trials", "soc", "restoration")


@dataclass
class SolverConfig:
    tol: float = 1e-4
    mu_init: float = 0.1
    kappa_eps: float = 10.0
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    max_iter: int = 3000
    delta_w_init: float = 1e-4
    delta_w_growth: float = 8.0
    delta_w_shrink: float = 1.0 / 3.0
    delta_w_max: float = 1e40
    delta_c_base: float = 1e-8
    tau_min: float = 0.99
    filter: FilterParams = field(default_factory=FilterParams)
    refinement_passes: int = 1
    refinement_tol: float = 1e-12
    kappa_sigma: float = 1e10
    relative_slack: bool = True
    obj_scaling: str = "gradient"      # "gradient" or "none"
    obj_max_gradient: float = 100.0
    push_kappa: float = 1e-2
    s_max: float = 100.0
    pivot_floor: float = 1e-30
    linear_solver: str = "sparse"      # "sparse" or "dense"
    ordering: str = "amd"
    restoration: bool = True
    second_order_correction: bool = True
    time_limit: float | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.kappa_mu < 1 or not 1 < self.theta_mu < 2:
            raise ValueError("barrier schedule needs 0 < kappa_mu < 1 and 1 < theta_mu < 2")
        if not 0 < self.tau_min < 1:
            raise ValueError("tau_min must lie in (0, 1)")
        if self.linear_solver not in ("sparse", "dense"):
            raise ValueError("linear_solver must be 'sparse' or 'dense'")
        if not 0 <= self.refinement_passes <= 5:
            raise ValueError("refinement_passes must lie in [0, 5]")
        if self.obj_scaling not in ("gradient", "none"):
            raise ValueError("obj_scaling must be 'gradient' or 'none'")


class KKTError(NamedTuple):
    stationarity: float
    feasibility: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self)


def kkt_error(nlp: LiftedNLP, it: IterateState, mu: float = 0.0, res=None, s_max: float = 100.0) -> KKTError:
    """Scaled optimality error of the barrier problem at ``mu``."""
    if res is None:
        res = compute_residuals(nlp, it, mu=mu)
    elif mu != it.mu:
        res = _recenter(nlp, it, res, mu)
    masks = (nlp.has_xl, nlp.has_xu, nlp.has_sl, nlp.has_su)
    zs = (it.zl_x, it.zu_x, it.zl_s, it.zu_s)
    n_z = sum(int(k.sum()) for k in masks)
    z1 = sum(float(np.abs(z[k]).sum()) for z, k in zip(zs, masks))
    y1 = float(np.abs(it.y).sum())
    s_d = max(s_max, (y1 + z1) / max(1, nlp.m + n_z)) / s_max
    s_c = max(s_max, z1 / max(1, n_z)) / s_max
    inf = lambda v: float(np.max(np.abs(v), initial=0.0))
    stat = max(inf(res.px), inf(res.ps)) / s_d
    feas = inf(res.py)
    comp = max(inf(res.pzl_x), inf(res.pzu_x), inf(res.pzl_s), inf(res.pzu_s)) / s_c
    return KKTError(stat, feas, comp)


def _recenter(nlp, it, res, mu):
    """Residuals with the complementarity target moved from ``it.mu`` to ``mu``."""
    shift = it.mu - mu
    return res.__class__(
        res.px, res.ps, res.py,
        np.where(nlp.has_xl, res.pzl_x + shift, 0.0), np.where(nlp.has_xu, res.pzu_x + shift, 0.0),
        np.where(nlp.has_sl, res.pzl_s + shift, 0.0), np.where(nlp.has_su, res.pzu_s + shift, 0.0),
    )


def update_barrier(mu: float, err_mu: float, config: SolverConfig) -> float:
    """Monotone barrier update: shrink once the mu-subproblem is solved to ``kappa_eps * mu``."""
    floor = config.tol / 10.0
    if err_mu > config.kappa_eps * mu or mu <= floor:
        return mu
    return max(floor, min(config.kappa_mu * mu, mu ** config.theta_mu))


@dataclass
class SolveReport:
    status: str
    iterations: int
    objective: float
    kkt: dict
    max_violation: float
    log: list
    wall_time: float
    restorations: int = 0
    n: int = 0
    m: int = 0
    obj_scale: float = 1.0
    message: str = ""

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    def to_json(self) -> dict:
        return {
            "status": self.status, "iterations": self.iterations, "objective": self.objective,
            "kkt": self.kkt, "max_violation": self.max_violation, "wall_time": self.wall_time,
            "restorations": self.restorations, "n": self.n, "m": self.m, "obj_scale": self.obj_scale,
            "message": self.message,
        }

    def write_log_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            w.writeheader()
            for row in self.log:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


@dataclass
class Solution:
    x: np.ndarray            # full primal vector, fixed variables included
    s: np.ndarray
    y: np.ndarray
    zl_x: np.ndarray
    zu_x: np.ndarray
    zl_s: np.ndarray
    zu_s: np.ndarray
    iterate: IterateState


def _objective_scale(nlp: LiftedNLP, x, config) -> float:
    if config.obj_scaling == "none":
        return 1.0
    g = nlp.model.evaluate_gradient(nlp.full(x))
    gmax = float(np.max(np.abs(g), initial=0.0))
    return min(1.0, config.obj_max_gradient / gmax) if gmax > 0 else 1.0


def _safeguard(nlp, it, kappa):
    """Keep each multiplier within ``[1/kappa, kappa] * mu / gap``."""
    gaps = it.gaps(nlp)
    for name, gap, mask in zip(("zl_x", "zu_x", "zl_s", "zu_s"), gaps,
                               (nlp.has_xl, nlp.has_xu, nlp.has_sl, nlp.has_su)):
        z = getattr(it, name)
        lo, hi = it.mu / (kappa * gap), kappa * it.mu / gap
        setattr(it, name, np.where(mask, np.clip(z, lo, hi), 0.0))


class _Evaluator:
    def __init__(self, nlp):
        self.nlp = nlp

    def __call__(self, x):
        return evaluate(self.nlp, x)


def solve(model_or_nlp, config: SolverConfig | None = None, *, callback=None, start: IterateState | None = None):
    """Solve the NLP; returns ``(Solution, SolveReport)`` and never raises on numerical failure.

    ``callback(nlp, iterate, evaluation)`` is invoked after every accepted
    step; returning True stops the run with status ``"solved"``.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    if isinstance(model_or_nlp, LiftedNLP):
        nlp = model_or_nlp
    else:
        nlp = lift_inequalities(model_or_nlp, config.tol, config.relative_slack)
        x0 = initialize(nlp, config.mu_init, config.push_kappa).x
        try:
            nlp.obj_scale = _objective_scale(nlp, x0, config)
        except EvaluationError:
            pass
    solver = _IPM(nlp, config, callback)
    sol, report = solver.run(start)
    report.wall_time = time.perf_counter() - t0
    return sol, report


class _IPM:
    def __init__(self, nlp: LiftedNLP, config: SolverConfig, callback=None):
        self.nlp = nlp
        self.config = config
        self.callback = callback
        self.evaluate = _Evaluator(nlp)
        self.filter = Filter(config.filter)
        self.log = []
        self.restorations = 0
        self.last_delta_w = 0.0
        self.assembler = None

    def _record(self, k, it, ev, res, err, step=None):
        viol = self.nlp.original_violation(c=ev.c)
        row = {
            "iter": k, "objective": ev.f / self.nlp.obj_scale, "inf_pr": err.feasibility,
            "inf_du": err.stationarity, "compl": err.complementarity,
            "viol": float(np.max(viol, initial=0.0)), "mu": it.mu,
            "alpha_pr": 0.0, "alpha_du": 0.0, "delta_w": 0.0, "delta_c": 0.0, "retries": 0,
            "inertia_pos": 0, "inertia_neg": 0, "inertia_zero": 0, "ls_trials": 0, "soc": 0,
            "restoration": 0,
        }
        if step:
            row.update(step)
        self.log.append(row)

    def _finish(self, status, it, ev, message=""):
        nlp = self.nlp
        err = kkt_error(nlp, it, 0.0, s_max=self.config.s_max) if ev is not None else KKTError(*(math.nan,) * 3)
        viol = float(np.max(nlp.original_violation(c=ev.c), initial=0.0)) if ev is not None else math.nan
        f = ev.f / nlp.obj_scale if ev is not None else math.nan
        sol = Solution(nlp.full(it.x), it.s, it.y, it.zl_x, it.zu_x, it.zl_s, it.zu_s, it)
        report = SolveReport(
            status=status, iterations=len(self.log) - 1, objective=f,
            kkt={"stationarity": err.stationarity, "feasibility": err.feasibility,
                 "complementarity": err.complementarity},
            max_violation=viol, log=self.log, wall_time=0.0, restorations=self.restorations,
            n=nlp.n, m=nlp.m, obj_scale=nlp.obj_scale, message=message,
        )
        log.info("%s after %d iterations: objective %.10g, violation %.3e", status, report.iterations, f, viol)
        return sol, report

    def run(self, start=None):
        nlp, cfg = self.nlp, self.config
        t0 = time.perf_counter()
        it = start.copy() if start is not None else initialize(nlp, cfg.mu_init, cfg.push_kappa)
        try:
            ev = self.evaluate(it.x)
        except EvaluationError as exc:
            self.log = []
            return self._finish("evaluation-error", it, None, str(exc))
        self.assembler = CondensedAssembler(nlp, cfg.ordering)
        self.filter.reset(float(np.sum(np.abs(ev.c - it.s))))
        res = compute_residuals(nlp, it, ev)
        self._record(0, it, ev, res, kkt_error(nlp, it, it.mu, res, cfg.s_max))

        for k in range(1, cfg.max_iter + 1):
            # convergence test on the unperturbed problem
            err0 = kkt_error(nlp, it, 0.0, res, cfg.s_max)
            viol = float(np.max(nlp.original_violation(c=ev.c), initial=0.0))
            if err0.max <= cfg.tol and viol <= cfg.tol:
                return self._finish("solved", it, ev)
            if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
                return self._finish("time-limit", it, ev)

            # barrier update (possibly several times)
            while True:
                err_mu = kkt_error(nlp, it, it.mu, res, cfg.s_max).max
                mu_new = update_barrier(it.mu, err_mu, cfg)
                if mu_new == it.mu:
                    break
                it.mu = mu_new
                res = compute_residuals(nlp, it, ev)
                self.filter.reset()

            try:
                W = nlp.hessian_values(it.x, it.y)
            except EvaluationError as exc:
                return self._finish("evaluation-error", it, ev, str(exc))
            fac = inertia_corrected_factorize(
                self.assembler, it, res, W, ev.A, last_delta_w=self.last_delta_w,
                delta_w_init=cfg.delta_w_init, growth=cfg.delta_w_growth, shrink=cfg.delta_w_shrink,
                delta_w_max=cfg.delta_w_max, pivot_floor=cfg.pivot_floor, delta_c_base=cfg.delta_c_base,
                linear_solver=cfg.linear_solver)
            if not fac.success:
                return self._finish("factorization-failed", it, ev, "inertia correction exceeded delta_w_max")
            if fac.delta_w > 0:
                self.last_delta_w = fac.delta_w
            d = recover_step(nlp, it, fac.kkt, fac.factor, res, ev.A, cfg.refinement_passes, cfg.refinement_tol)
            tau = max(cfg.tau_min, 1.0 - it.mu)
            a_pri, a_du = fraction_to_boundary(nlp, it, d, tau)

            soc = None
            if cfg.second_order_correction:
                soc = self._soc_solver(it, fac, res, ev)
            ls = filter_line_search(nlp, it, d, a_pri, a_du, it.mu, self.filter, ev, self.evaluate, soc, tau)
            restored = 0
            if not ls.accepted:
                if not cfg.restoration:
                    return self._finish("line-search-failed", it, ev, "step size below alpha_min")
                new = self._restore(it, ev)
                if new is None:
                    return self._finish("restoration-failed", it, ev, "feasibility restoration did not converge")
                it, ev = new
                restored = 1
                a_pri = a_du = 0.0
            else:
                it, ev = ls.iterate, ls.evaluation
                a_pri, a_du = ls.alpha, ls.alpha_dual
            _safeguard(nlp, it, cfg.kappa_sigma)
            res = compute_residuals(nlp, it, ev)
            self._record(k, it, ev, res, kkt_error(nlp, it, it.mu, res, cfg.s_max), {
                "alpha_pr": a_pri, "alpha_du": a_du, "delta_w": fac.delta_w, "delta_c": fac.delta_c,
                "retries": fac.retries, "inertia_pos": fac.inertia[0], "inertia_neg": fac.inertia[1],
                "inertia_zero": fac.inertia[2], "ls_trials": ls.trials, "soc": int(ls.soc),
                "restoration": restored,
            })
            if self.callback is not None and self.callback(nlp, it, ev):
                return self._finish("solved", it, ev, "stopped by callback")
        return self._finish("max-iter", it, ev)

    def _soc_solver(self, it, fac, res, ev):
        nlp, cfg = self.nlp, self.config

        def direction(c_soc) -> Direction | None:
            r = res.__class__(res.px, res.ps, c_soc, res.pzl_x, res.pzu_x, res.pzl_s, res.pzu_s)
            kkt = fac.kkt
            q_x, q_s, q_y = condensed_rhs(nlp, it, r)
            rhs = q_x + ev.A.T @ (kkt.C * q_s + kkt.D * q_y)
            kkt2 = kkt.__class__(kkt.Sigma_x, kkt.Sigma_s, kkt.C, kkt.D, kkt.M, q_x, q_s, q_y, rhs,
                                 kkt.delta_w, kkt.delta_c)
            dx = iterative_refinement(kkt.M, fac.factor, rhs, cfg.refinement_passes, cfg.refinement_tol).solution \
                if nlp.n else np.zeros(0)
            return back_substitute(nlp, it, kkt2, r, ev.A, dx)

        return direction

    def _restore(self, it, ev):
        from .restoration import restore  # circular: restoration calls solve()

        self.restorations += 1
        out = restore(self.nlp, it, ev, self.config, self.filter)
        if out is None:
            return None
        new_it = out
        try:
            new_ev = self.evaluate(new_it.x)
        except EvaluationError:
            return None
        self.filter.reset()
        return new_it, new_ev
