import json
import math

import numpy as np
import pytest
from scipy.optimize import Bounds, NonlinearConstraint, minimize

from gridnlp.ipm import SolverConfig, solve
from gridnlp.power import (
    DispatchSolution,
    LoadProfile,
    MatpowerError,
    MultiPeriodCase,
    UnsupportedFeatureError,
    build_multiperiod_opf,
    bundled_cases,
    extract_dispatch,
    flatten_dispatch,
    generate_load_profile,
    load_case,
    parse_matpower,
    validate_solution,
)
from gridnlp.power.validate import FAMILIES, constraint_values

from conftest import interior_point

TWO_BUS = """
function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0  0 0 1 1 0 230 1 1.1 0.9;
  2 1 {pd} {qd} 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 300 -300 1 100 1 250 10 0 0 0 0 0 0 0 0 0 0 0;
];
mpc.branch = [
  1 2 {r} {x} {b} {rate} 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  {cost}
];
"""


def two_bus(pd=50.0, qd=10.0, r=0.0, x=0.1, b=0.0, rate=0.0, cost="2 0 0 3 0.11 5 150"):
    return parse_matpower(TWO_BUS.format(pd=pd, qd=qd, r=r, x=x, b=b, rate=rate, cost=cost), "twobus")


# ------------------------------------------------------------------ parsing
def test_case9_counts(case9):
    assert (case9.n_bus, case9.n_line, case9.n_gen) == (9, 9, 3)
    assert case9.ref == 0 and case9.base_mva == 100.0


def test_bundled_cases():
    assert {"case9", "case14", "case30", "case118"} <= set(bundled_cases())
    net = load_case("case118")
    assert (net.n_bus, net.n_gen) == (118, 54)


def test_series_admittance_of_lossless_line():
    net = two_bus(r=0.0, x=0.1)
    assert net.G[0] == 0.0 and net.B[0] == pytest.approx(-10.0)


def test_series_admittance_of_lossy_line():
    net = two_bus(r=0.03, x=0.04)
    assert net.G[0] == pytest.approx(0.03 / 0.0025) and net.B[0] == pytest.approx(-0.04 / 0.0025)


def test_zero_rate_means_unlimited_and_omits_thermal_rows():
    net = two_bus(rate=0.0)
    assert math.isinf(net.smax[0])
    model = build_multiperiod_opf(MultiPeriodCase.flat(net, 1))
    assert model.constraints["thermal"].n_rows == 0
    rated = build_multiperiod_opf(MultiPeriodCase.flat(two_bus(rate=150.0), 1))
    assert rated.constraints["thermal"].n_rows == 2
    assert rated.constraints["thermal"].upper[0] == pytest.approx(1.5 ** 2)


def test_vacuous_angle_limits_default_to_sixty_degrees():
    net = two_bus()
    assert net.angmin[0] == pytest.approx(-math.pi / 3) and net.angmax[0] == pytest.approx(math.pi / 3)


def test_per_unit_costs():
    net = two_bus(cost="2 0 0 3 0.11 5 150")
    assert (net.c2[0], net.c1[0], net.c0[0]) == pytest.approx((0.11 * 1e4, 500.0, 150.0))
    linear = two_bus(cost="2 0 0 2 7 3")
    assert (linear.c2[0], linear.c1[0], linear.c0[0]) == pytest.approx((0.0, 700.0, 3.0))


def test_piecewise_linear_cost_rejected():
    with pytest.raises(UnsupportedFeatureError, match="piecewise"):
        two_bus(cost="1 0 0 2 0 0 100 2000")


@pytest.mark.parametrize("bad", [
    TWO_BUS.replace("1 2 {r}", "1 2 x{r}"),                   # malformed number
    TWO_BUS.replace("  1 3 0  0  0 0 1 1 0 230 1 1.1 0.9;", "  1 3 0 0;"),  # ragged
    TWO_BUS.replace("mpc.baseMVA = 100;", ""),
    TWO_BUS.replace("1 2 {r}", "1 7 {r}"),                    # unknown bus
])
def test_malformed_case_rejected(bad):
    text = bad.format(pd=1, qd=1, r=0.0, x=0.1, b=0.0, rate=0.0, cost="2 0 0 3 0.11 5 150")
    with pytest.raises(MatpowerError):
        parse_matpower(text)


def test_out_of_service_elements_dropped():
    text = TWO_BUS.replace(
        "  1 0 0 300 -300 1 100 1 250 10 0 0 0 0 0 0 0 0 0 0 0;",
        "  1 0 0 300 -300 1 100 1 250 10 0 0 0 0 0 0 0 0 0 0 0;\n"
        "  2 0 0 300 -300 1 100 0 250 10 0 0 0 0 0 0 0 0 0 0 0;",
    ).replace(
        "  1 2 {r} {x} {b} {rate} 0 0 0 0 1 -360 360;",
        "  1 2 {r} {x} {b} {rate} 0 0 0 0 1 -360 360;\n  1 2 0.1 0.2 0 0 0 0 0 0 0 -360 360;",
    ).replace("  {cost}", "  {cost}\n  2 0 0 3 9 9 9")
    net = parse_matpower(text.format(pd=1, qd=1, r=0.0, x=0.1, b=0.0, rate=0.0, cost="2 0 0 3 0 1 0"))
    assert net.n_gen == 1 and net.n_line == 1 and net.c1[0] == 100.0


def test_missing_case_file():
    with pytest.raises(FileNotFoundError):
        load_case("no_such_case")


# ------------------------------------------------------------------ load profiles
def test_flat_when_amplitude_and_noise_vanish(case9):
    prof = generate_load_profile(case9, 5, amplitude=0.0, noise=0.0)
    assert np.array_equal(prof.scale, np.ones((5, 3)))


def test_daily_cycle(case9):
    prof = generate_load_profile(case9, 96, resolution=15.0, noise=0.0, amplitude=0.3)
    t = np.arange(96)
    assert np.allclose(prof.scale[:, 0], 1 + 0.3 * np.sin(2 * np.pi * t / 96), atol=1e-15)
    assert prof.scale[24, 0] == pytest.approx(1.3) and prof.scale[72, 0] == pytest.approx(0.7)


def test_profile_is_reproducible_and_seed_dependent(case9):
    a = generate_load_profile(case9, 10, seed=3)
    b = generate_load_profile(case9, 10, seed=3)
    c = generate_load_profile(case9, 10, seed=4)
    assert np.array_equal(a.scale, b.scale) and not np.array_equal(a.scale, c.scale)
    assert np.all(np.abs(a.scale - (1 + 0.2 * np.sin(2 * np.pi * np.arange(10)[:, None] / 24))) <= 0.02 + 1e-15)


def test_level_rescales_and_clip_applies(case9):
    prof = generate_load_profile(case9, 4, amplitude=0.0, noise=0.0, level=0.8)
    assert np.allclose(prof.scale, 0.8)
    low = generate_load_profile(case9, 4, amplitude=0.0, noise=0.0, level=0.05)
    assert np.all(low.scale == 0.1)


@pytest.mark.parametrize("kw", [dict(T=0), dict(amplitude=1.0), dict(noise=-0.1), dict(level=0.0)])
def test_invalid_profile_arguments(case9, kw):
    args = dict(T=3) | kw
    with pytest.raises(ValueError):
        generate_load_profile(case9, **args)


def test_profile_csv_round_trip(case9, tmp_path):
    prof = generate_load_profile(case9, 6, seed=1)
    prof.to_csv(tmp_path / "p.csv")
    back = LoadProfile.from_csv(tmp_path / "p.csv", 60.0)
    assert np.array_equal(back.scale, prof.scale)


# ------------------------------------------------------------------ model construction
def test_case9_two_period_counts_single_flow(case9):
    model = build_multiperiod_opf(MultiPeriodCase(case9, generate_load_profile(case9, 2), flow_model="single"))
    assert model.n == 2 * (2 * 3 + 2 * 9 + 2 * 9) == 84
    assert model.constraints["ramp"].n_rows == 3


def test_single_period_has_no_ramp_rows(case9):
    model = build_multiperiod_opf(MultiPeriodCase.flat(case9, 1))
    assert model.constraints["ramp"].n_rows == 0


@pytest.mark.parametrize("flow_model", ["pi", "single"])
@pytest.mark.parametrize("name", ["case9", "case30"])
def test_counts_grow_linearly_in_periods(name, flow_model):
    net = load_case(name)
    sizes = {}
    for T in (1, 2, 10, 30):
        model = build_multiperiod_opf(MultiPeriodCase.flat(net, T, flow_model=flow_model))
        sizes[T] = (model.n, model.m - model.constraints["ramp"].n_rows, model.constraints["ramp"].n_rows)
    for T in (2, 10, 30):
        assert sizes[T][0] == T * sizes[1][0] and sizes[T][1] == T * sizes[1][1]
        assert sizes[T][2] == (T - 1) * net.n_gen


def test_reference_angle_fixed_every_period(case9):
    model = build_multiperiod_opf(MultiPeriodCase.flat(case9, 3))
    th = model.blocks["th"]
    assert np.all(th.lower[case9.ref] == 0.0) and np.all(th.upper[case9.ref] == 0.0)


def test_profile_width_mismatch_rejected(case9):
    with pytest.raises(ValueError):
        MultiPeriodCase(case9, LoadProfile(np.ones((2, 5)), 60.0))


# ------------------------------------------------------------------ dispatch round trip and validator
def test_round_trip_is_lossless(case9_model):
    case, model = case9_model
    x = interior_point(model, np.random.default_rng(0))
    x[model.blocks["th"].indices(case.network.ref, np.arange(case.T))] = 0.0
    sol = extract_dispatch(model, x, case)
    assert np.array_equal(flatten_dispatch(model, sol), x)
    back = DispatchSolution.from_json(json.loads(json.dumps(sol.to_json())))
    assert np.array_equal(flatten_dispatch(model, back), x)


def test_flat_start_blocks(case9_model):
    case, model = case9_model
    sol = extract_dispatch(model, model.x_start, case)
    assert np.all(sol.v == 1.0) and np.all(sol.th == 0.0)


def test_extract_rejects_wrong_length(case9_model):
    _, model = case9_model
    with pytest.raises(ValueError):
        extract_dispatch(model, np.zeros(model.n - 1))


@pytest.mark.parametrize("flow_model", ["pi", "single"])
@pytest.mark.parametrize("seed", range(3))
def test_model_and_validator_agree(case9, flow_model, seed):
    case = MultiPeriodCase(case9, generate_load_profile(case9, 3, seed=seed), flow_model=flow_model)
    model = build_multiperiod_opf(case)
    x = interior_point(model, np.random.default_rng(seed))
    c = model.evaluate_constraints(x)
    ref = constraint_values(case, extract_dispatch(model, x, case))
    for name in FAMILIES:
        if name == "bounds":
            continue
        block = model.constraints[name]
        got = c[block.rows] + (block.rhs if name in ("thermal", "angle", "ramp") else 0.0)
        assert np.abs(got - ref[name]).max(initial=0.0) <= 1e-12


def analytic_two_bus():
    """Dispatch built from chosen (v, theta): flows from the line equations, generation from balance."""
    net = two_bus(pd=50.0, qd=10.0, r=0.02, x=0.1, b=0.04)
    case = MultiPeriodCase.flat(net, 1)
    v = np.array([[1.02], [0.98]])
    th = np.array([[0.0], [-0.05]])
    own, other, line = case.flow_ends()
    p, q = np.zeros((2, 1)), np.zeros((2, 1))
    for k in range(2):
        a, b = own[k], other[k]
        G, B, bc = net.G[0], net.B[0], net.bc[0]
        d = th[a, 0] - th[b, 0]
        p[k] = G * v[a] ** 2 - v[a] * v[b] * (G * math.cos(d) + B * math.sin(d))
        q[k] = -(B + bc / 2) * v[a] ** 2 - v[a] * v[b] * (G * math.sin(d) - B * math.cos(d))
    pd, qd = case.loads()
    # the load bus balance must hold too, so set its demand from the flows
    net.pd[1], net.qd[1] = -p[1, 0], -q[1, 0]
    pg, qg = np.array([[p[0, 0]]]), np.array([[q[0, 0]]])
    return case, DispatchSolution(pg, qg, p, q, v, th)


def test_analytic_two_bus_solution_has_no_violation():
    case, sol = analytic_two_bus()
    report = validate_solution(case, sol, 1e-12)
    assert all(report.max_abs[k] <= 1e-15 for k in FAMILIES)
    assert report.passed


def test_generation_perturbation_shows_in_balance():
    case, sol = analytic_two_bus()
    sol.pg[0, 0] += 0.1
    report = validate_solution(case, sol, 1e-4)
    assert report.max_abs["balance_p"] == pytest.approx(0.1, abs=1e-14)
    assert report.max_abs["balance_q"] <= 1e-15 and not report.passed


def test_validator_rejects_bad_shapes(case9_model):
    case, model = case9_model
    sol = extract_dispatch(model, model.x_start, case)
    sol.pg = sol.pg[:, :1]
    with pytest.raises(ValueError):
        validate_solution(case, sol)


def test_violation_report_json(case9_model):
    case, model = case9_model
    doc = validate_solution(case, extract_dispatch(model, model.x_start, case), 1e-4).to_json()
    assert set(doc["families"]) == set(FAMILIES)
    assert doc["passed"] is False


# ------------------------------------------------------------------ solved instances
def test_case9_matches_published_optimum(case9):
    model = build_multiperiod_opf(MultiPeriodCase.flat(case9, 1))
    sol, rep = solve(model, SolverConfig(tol=1e-8))
    assert rep.solved
    # MATPOWER reports 5296.69 $/hr for case9, printed to two decimals
    assert abs(rep.objective - 5296.69) <= 0.005
    pg = extract_dispatch(model, sol.x).pg
    assert np.all(pg >= case9.pmin[:, None] - 1e-8) and np.all(pg <= case9.pmax[:, None] + 1e-8)


def test_case9_matches_slsqp(case9):
    model = build_multiperiod_opf(MultiPeriodCase.flat(case9, 1))
    x0 = np.clip(model.x_start, model.x_lower, model.x_upper)
    jac = lambda x: model.jacobian_csc(x)[0].to_dense()
    eq = model.g_lower == model.g_upper
    cons = [NonlinearConstraint(lambda x, k=k: model.evaluate_constraints(x)[k], model.g_lower[k],
                                model.g_upper[k], jac=lambda x, k=k: jac(x)[k]) for k in (eq, ~eq)]
    ref = minimize(model.evaluate_objective, x0, jac=model.evaluate_gradient, method="SLSQP",
                   bounds=Bounds(model.x_lower, model.x_upper), constraints=cons,
                   options={"maxiter": 1000, "ftol": 1e-12})
    assert ref.success
    _, rep = solve(model, SolverConfig(tol=1e-8))
    assert rep.objective == pytest.approx(ref.fun, rel=1e-6)
