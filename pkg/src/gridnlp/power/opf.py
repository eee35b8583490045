"""Multi-period AC OPF assembled as a pattern model.

Two line-flow encodings are available:

``"pi"`` (default)
    Direction-dependent flows of the pi line model with line charging:
    each line owns a from-side and a to-side (p, q) pair, rows ``k < L`` are
    from-side flows and rows ``L + k`` to-side flows.  Power balance is
    ``sum(pG) - sum(outgoing flows) = load``.
``"single"``
    One (p, q) pair per line, entering the from bus with a minus sign and the
    to bus with a plus sign, with the lossless symmetric trig form
    ``p = v_m v_n (G cos(th_n - th_m) + B sin(th_n - th_m))``.  It reproduces the
    textbook variable counts but is infeasible on lossy networks.

Variable blocks are ``pg, qg`` (gens x T), ``p, q`` (flows x T) and ``v, th``
(buses x T).  Every constraint block is row-major in (element, period).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import PatternModel, cos, sin
from .matpower import NetworkData
from .profile import LoadProfile, flat_profile

DEFAULT_RAMP_PER_HOUR = 0.5   # fraction of Pmax when the case lacks ramp data
FLOW_MODELS = ("pi", "single")


@dataclass
class MultiPeriodCase:
    """Network plus a T-period load profile.

    ``ramp`` overrides the per-period ramp limit in per unit: a scalar or one
    value per generator, ``inf`` to drop the rows.  When ``None``, MATPOWER's
    RAMP_30 is rescaled to the profile resolution, falling back to
    ``DEFAULT_RAMP_PER_HOUR * Pmax`` per hour where RAMP_30 is zero.
    """

    network: NetworkData
    profile: LoadProfile
    ramp: object = None
    flow_model: str = "pi"

    def __post_init__(self):
        if self.profile.n_loads != len(self.network.load_bus):
            raise ValueError(f"profile has {self.profile.n_loads} load columns, network has "
                             f"{len(self.network.load_bus)} load buses")
        if self.flow_model not in FLOW_MODELS:
            raise ValueError(f"flow_model must be one of {FLOW_MODELS}")

    @classmethod
    def flat(cls, network, T=1, resolution=60.0, **kw):
        return cls(network, flat_profile(network, T, resolution), **kw)

    @property
    def T(self) -> int:
        return self.profile.T

    @property
    def n_flows(self) -> int:
        return self.network.n_line * (2 if self.flow_model == "pi" else 1)

    def loads(self):
        """Per-unit (P, Q) demand, shape (buses, T)."""
        net = self.network
        scale = np.ones((net.n_bus, self.T))
        scale[net.load_bus] = self.profile.scale.T
        return net.pd[:, None] * scale, net.qd[:, None] * scale

    def ramp_limits(self) -> np.ndarray:
        net = self.network
        if self.ramp is not None:
            return np.broadcast_to(np.asarray(self.ramp, dtype=float), (net.n_gen,)).copy()
        res = self.profile.resolution
        default = DEFAULT_RAMP_PER_HOUR * np.abs(net.pmax) * res / 60.0
        return np.where(net.ramp30 > 0, net.ramp30 * res / 30.0, default)

    def flow_ends(self):
        """(own bus, other bus, line) for every flow variable."""
        net = self.network
        if self.flow_model == "single":
            return net.line_from, net.line_to, np.arange(net.n_line)
        lines = np.arange(net.n_line)
        return (np.concatenate([net.line_from, net.line_to]),
                np.concatenate([net.line_to, net.line_from]),
                np.concatenate([lines, lines]))


@dataclass
class DispatchSolution:
    pg: np.ndarray
    qg: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    th: np.ndarray
    objective: float = float("nan")
    report: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in ("pg", "qg", "p", "q", "v", "th")}
        out["objective"] = self.objective
        return out

    @classmethod
    def from_json(cls, data: dict) -> "DispatchSolution":
        arrays = {k: np.asarray(data[k], dtype=float) for k in ("pg", "qg", "p", "q", "v", "th")}
        for k, a in arrays.items():
            if a.ndim != 2:
                raise ValueError(f"dispatch field {k!r} must be a 2-D array")
        return cls(**arrays, objective=float(data.get("objective", float("nan"))))


def _records(**cols):
    return {k: np.ascontiguousarray(v) for k, v in cols.items()}


def _grid(n, T):
    """Element and period index arrays for the (n, T) row-major grid."""
    e, t = np.divmod(np.arange(n * T), T)
    return e, t


def build_multiperiod_opf(case: MultiPeriodCase, workers: int = 1) -> PatternModel:
    net = case.network
    T = case.T
    G, L, N = net.n_gen, net.n_line, net.n_bus
    F = case.n_flows
    own, other, line_of = case.flow_ends()
    smax = net.smax[line_of]
    model = PatternModel(f"{net.name}_T{T}", workers=workers)

    mid = lambda lo, hi: np.clip(0.5 * (lo + hi), lo, hi)
    pg = model.add_variable_block("pg", (G, T), net.pmin[:, None], net.pmax[:, None],
                                  mid(net.pmin, net.pmax)[:, None])
    qg = model.add_variable_block("qg", (G, T), net.qmin[:, None], net.qmax[:, None],
                                  mid(net.qmin, net.qmax)[:, None])
    flow_bound = np.where(np.isfinite(smax), smax, np.inf)[:, None]
    p = model.add_variable_block("p", (F, T), -flow_bound, flow_bound, 0.0)
    q = model.add_variable_block("q", (F, T), -flow_bound, flow_bound, 0.0)
    vlo, vhi = net.vmin[:, None], net.vmax[:, None]
    v = model.add_variable_block("v", (N, T), vlo, vhi, np.clip(1.0, vlo, vhi))
    th_lo = np.full((N, T), -np.inf)
    th_hi = np.full((N, T), np.inf)
    th_lo[net.ref] = th_hi[net.ref] = 0.0
    th = model.add_variable_block("th", (N, T), th_lo, th_hi, 0.0)

    g_idx, t_g = _grid(G, T)
    model.add_objective(
        lambda r: r.c2 * pg[r.g, r.t] ** 2 + r.c1 * pg[r.g, r.t] + r.c0,
        _records(g=g_idx, t=t_g, c2=net.c2[g_idx], c1=net.c1[g_idx], c0=net.c0[g_idx]),
        name="generation_cost",
    )

    # power balance, one row per (bus, period)
    pd, qd = case.loads()
    gen_rec = _records(row=net.gen_bus[g_idx] * T + t_g, g=g_idx, t=t_g)
    k_idx, t_f = _grid(F, T)
    if case.flow_model == "pi":
        sign = -np.ones(F * T)
        flow_rows = own[k_idx] * T + t_f
        flow_rec = _records(row=flow_rows, k=k_idx, t=t_f, sign=sign)
    else:
        rows = np.concatenate([net.line_from[k_idx] * T + t_f, net.line_to[k_idx] * T + t_f])
        sign = np.concatenate([-np.ones(F * T), np.ones(F * T)])
        flow_rec = _records(row=rows, k=np.tile(k_idx, 2), t=np.tile(t_f, 2), sign=sign)
    for var_g, var_f, load, tag in ((pg, p, pd, "p"), (qg, q, qd, "q")):
        model.add_constraint(
            N * T,
            (lambda r, var_g=var_g: var_g[r.g, r.t], gen_rec),
            (lambda r, var_f=var_f: r.sign * var_f[r.k, r.t], flow_rec),
            rhs=load.ravel(), name=f"balance_{tag}",
        )

    # flow definitions, one row per (flow, period)
    rec = _records(row=np.arange(F * T), k=k_idx, t=t_f, a=own[k_idx], b=other[k_idx],
                   G=net.G[line_of][k_idx], B=net.B[line_of][k_idx], bc=net.bc[line_of][k_idx])
    if case.flow_model == "pi":
        def flow_p(r):
            va, vb = v[r.a, r.t], v[r.b, r.t]
            d = th[r.a, r.t] - th[r.b, r.t]
            return p[r.k, r.t] - (r.G * va * va - va * vb * (r.G * cos(d) + r.B * sin(d)))

        def flow_q(r):
            va, vb = v[r.a, r.t], v[r.b, r.t]
            d = th[r.a, r.t] - th[r.b, r.t]
            return q[r.k, r.t] - (-(r.B + 0.5 * r.bc) * va * va - va * vb * (r.G * sin(d) - r.B * cos(d)))
    else:
        def flow_p(r):
            d = th[r.b, r.t] - th[r.a, r.t]
            return p[r.k, r.t] - v[r.a, r.t] * v[r.b, r.t] * (r.G * cos(d) + r.B * sin(d))

        def flow_q(r):
            d = th[r.b, r.t] - th[r.a, r.t]
            return q[r.k, r.t] - v[r.a, r.t] * v[r.b, r.t] * (r.G * sin(d) - r.B * cos(d))
    model.add_constraint(F * T, (flow_p, rec), name="flow_p")
    model.add_constraint(F * T, (flow_q, rec), name="flow_q")

    # thermal limits on flows with a finite rating
    rated = np.flatnonzero(np.isfinite(smax))
    n_rated = len(rated)
    r_idx, t_r = _grid(n_rated, T)
    model.add_constraint(
        n_rated * T,
        (lambda r: p[r.k, r.t] ** 2 + q[r.k, r.t] ** 2,
         _records(row=np.arange(n_rated * T), k=rated[r_idx], t=t_r)),
        lower=-np.inf, upper=(smax[rated] ** 2)[r_idx], name="thermal",
    )

    # angle differences across every line
    l_idx, t_l = _grid(L, T)
    model.add_constraint(
        L * T,
        (lambda r: th[r.m, r.t] - th[r.n, r.t],
         _records(row=np.arange(L * T), m=net.line_from[l_idx], n=net.line_to[l_idx], t=t_l)),
        lower=net.angmin[l_idx], upper=net.angmax[l_idx], name="angle",
    )

    # ramping between consecutive periods
    ramp = case.ramp_limits()
    ramped = np.flatnonzero(np.isfinite(ramp))
    if T > 1:
        gi, tt = _grid(len(ramped), T - 1)
        model.add_constraint(
            len(ramped) * (T - 1),
            (lambda r: pg[r.g, r.t1] - pg[r.g, r.t0],
             _records(row=np.arange(len(ramped) * (T - 1)), g=ramped[gi], t0=tt, t1=tt + 1)),
            lower=-ramp[ramped][gi], upper=ramp[ramped][gi], name="ramp",
        )
    else:
        model.add_constraint(0, name="ramp")
    model.case = case
    return model.freeze()


def extract_dispatch(model: PatternModel, x, case: MultiPeriodCase | None = None) -> DispatchSolution:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"primal vector has length {x.size}, model expects {model.n}")
    b = model.blocks
    sol = DispatchSolution(*(b[k].values(x).copy() for k in ("pg", "qg", "p", "q", "v", "th")))
    case = case or getattr(model, "case", None)
    if case is not None:
        net = case.network
        sol.objective = float(np.sum(net.c2[:, None] * sol.pg ** 2 + net.c1[:, None] * sol.pg + net.c0[:, None]))
    return sol


def flatten_dispatch(model: PatternModel, sol: DispatchSolution) -> np.ndarray:
    x = np.empty(model.n)
    for k in ("pg", "qg", "p", "q", "v", "th"):
        block = model.blocks[k]
        arr = np.asarray(getattr(sol, k), dtype=float)
        if arr.shape != block.shape:
            raise ValueError(f"dispatch field {k!r} has shape {arr.shape}, expected {block.shape}")
        x[block.flat] = arr.ravel()
    return x
