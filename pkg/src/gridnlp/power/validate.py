"""Independent re-evaluation of the OPF constraints as straight loops.

Nothing here goes through the pattern model, so agreement between the two is
a meaningful cross-check.  Each family reports the largest absolute
violation and the largest violation relative to its row scale
``max(1, |rhs|, |finite bounds|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .opf import DispatchSolution, MultiPeriodCase

FAMILIES = ("balance_p", "balance_q", "flow_p", "flow_q", "thermal", "bounds", "angle", "ramp")


@dataclass
class ViolationReport:
    tol: float
    max_abs: dict = field(default_factory=dict)
    max_scaled: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.max_scaled.values())

    @property
    def worst(self) -> float:
        return max(self.max_scaled.values(), default=0.0)

    def to_json(self) -> dict:
        return {
            "tol": self.tol,
            "passed": self.passed,
            "families": {
                k: {"max_abs": self.max_abs[k], "max_scaled": self.max_scaled[k],
                    "passed": self.max_scaled[k] <= self.tol}
                for k in FAMILIES
            },
        }


def constraint_values(case: MultiPeriodCase, sol: DispatchSolution) -> dict:
    """Row values of every constraint family, ordered as in the pattern model.

    Equality families hold ``lhs - rhs``; ``thermal`` holds ``p^2 + q^2``,
    ``angle`` holds ``th_m - th_n`` and ``ramp`` holds ``pg_t - pg_{t-1}``.
    """
    net = case.network
    T = case.T
    pd, qd = case.loads()
    own, other, line_of = case.flow_ends()
    F = len(own)
    pi = case.flow_model == "pi"
    out = {}

    for tag, gen, flow, load in (("p", sol.pg, sol.p, pd), ("q", sol.qg, sol.q, qd)):
        rows = np.zeros((net.n_bus, T))
        for t in range(T):
            for g in range(net.n_gen):
                rows[net.gen_bus[g], t] += gen[g, t]
            for k in range(F):
                if pi:
                    rows[own[k], t] -= flow[k, t]
                else:
                    rows[net.line_from[k], t] -= flow[k, t]
                    rows[net.line_to[k], t] += flow[k, t]
            for n in range(net.n_bus):
                rows[n, t] -= load[n, t]
        out[f"balance_{tag}"] = rows.ravel()

    fp = np.zeros((F, T))
    fq = np.zeros((F, T))
    for k in range(F):
        ln = line_of[k]
        a, b = own[k], other[k]
        Gl, Bl, bc = net.G[ln], net.B[ln], net.bc[ln]
        for t in range(T):
            va, vb = sol.v[a, t], sol.v[b, t]
            if pi:
                d = sol.th[a, t] - sol.th[b, t]
                pk = Gl * va * va - va * vb * (Gl * math.cos(d) + Bl * math.sin(d))
                qk = -(Bl + 0.5 * bc) * va * va - va * vb * (Gl * math.sin(d) - Bl * math.cos(d))
            else:
                d = sol.th[b, t] - sol.th[a, t]
                pk = va * vb * (Gl * math.cos(d) + Bl * math.sin(d))
                qk = va * vb * (Gl * math.sin(d) - Bl * math.cos(d))
            fp[k, t] = sol.p[k, t] - pk
            fq[k, t] = sol.q[k, t] - qk
    out["flow_p"] = fp.ravel()
    out["flow_q"] = fq.ravel()

    smax = net.smax[line_of]
    out["thermal"] = np.array([sol.p[k, t] ** 2 + sol.q[k, t] ** 2
                               for k in range(F) if math.isfinite(smax[k]) for t in range(T)])
    out["angle"] = np.array([sol.th[net.line_from[ln], t] - sol.th[net.line_to[ln], t]
                             for ln in range(net.n_line) for t in range(T)])
    ramp = case.ramp_limits()
    out["ramp"] = np.array([sol.pg[g, t] - sol.pg[g, t - 1]
                            for g in range(net.n_gen) if math.isfinite(ramp[g]) for t in range(1, T)])
    return out


def _interval(values, lo, hi):
    """Distance from ``values`` to ``[lo, hi]`` and the row scale."""
    values = np.asarray(values, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), values.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), values.shape)
    viol = np.maximum(0.0, np.maximum(lo - values, values - hi))
    scale = np.ones_like(values)
    for b in (lo, hi):
        finite = np.isfinite(b)
        scale[finite] = np.maximum(scale[finite], np.abs(b[finite]))
    return viol, scale


def validate_solution(case: MultiPeriodCase, sol: DispatchSolution, tol: float = 1e-4) -> ViolationReport:
    net = case.network
    T = case.T
    shapes = {"pg": (net.n_gen, T), "qg": (net.n_gen, T), "p": (case.n_flows, T), "q": (case.n_flows, T),
              "v": (net.n_bus, T), "th": (net.n_bus, T)}
    for k, shape in shapes.items():
        if np.shape(getattr(sol, k)) != shape:
            raise ValueError(f"dispatch field {k!r} has shape {np.shape(getattr(sol, k))}, expected {shape}")
    vals = constraint_values(case, sol)
    pd, qd = case.loads()
    report = ViolationReport(tol)

    def record(name, viol, scale):
        viol = np.asarray(viol, dtype=float)
        report.max_abs[name] = float(viol.max(initial=0.0))
        report.max_scaled[name] = float((viol / scale).max(initial=0.0))

    record("balance_p", np.abs(vals["balance_p"]), np.maximum(1.0, np.abs(pd.ravel())))
    record("balance_q", np.abs(vals["balance_q"]), np.maximum(1.0, np.abs(qd.ravel())))
    record("flow_p", np.abs(vals["flow_p"]), 1.0)
    record("flow_q", np.abs(vals["flow_q"]), 1.0)

    _, _, line_of = case.flow_ends()
    smax = net.smax[line_of]
    cap = np.repeat(smax[np.isfinite(smax)] ** 2, T)
    record("thermal", *_interval(vals["thermal"], -np.inf, cap))
    record("angle", *_interval(vals["angle"], np.repeat(net.angmin, T), np.repeat(net.angmax, T)))
    ramp = case.ramp_limits()
    r = np.repeat(ramp[np.isfinite(ramp)], max(T - 1, 0))
    record("ramp", *_interval(vals["ramp"], -r, r))

    flow_cap = np.where(np.isfinite(smax), smax, np.inf)[:, None]
    boxes = [
        (sol.pg, net.pmin[:, None], net.pmax[:, None]),
        (sol.qg, net.qmin[:, None], net.qmax[:, None]),
        (sol.v, net.vmin[:, None], net.vmax[:, None]),
        (sol.th[net.ref], 0.0, 0.0),
        (sol.p, -flow_cap, flow_cap),
        (sol.q, -flow_cap, flow_cap),
    ]
    viols, scales = [], []
    for val, lo, hi in boxes:
        val = np.asarray(val, dtype=float)
        vi, sc = _interval(val, np.broadcast_to(lo, val.shape), np.broadcast_to(hi, val.shape))
        viols.append(vi.ravel())
        scales.append(sc.ravel())
    record("bounds", np.concatenate(viols), np.concatenate(scales))
    return report
