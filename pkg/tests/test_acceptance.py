"""End-to-end acceptance checks, one test per criterion."""

import json
import time

import numpy as np
import pytest

from gridnlp.cli import main
from gridnlp.ipm import (
    CondensedAssembler,
    SolverConfig,
    compute_residuals,
    evaluate,
    full_kkt_oracle,
    inertia_corrected_factorize,
    initialize,
    lift_inequalities,
    recover_step,
    solve,
)
from gridnlp.power import (
    MultiPeriodCase,
    build_multiperiod_opf,
    extract_dispatch,
    flat_profile,
    generate_load_profile,
    load_case,
    validate_solution,
)

from conftest import central_fd, interior_point

# accepted-step inertia of every solve in this module, checked by criterion 4
_INERTIA = []


def tracked_solve(model, config):
    sol, rep = solve(model, config)
    _INERTIA.append((model.name, rep.n, [(r["inertia_pos"], r["inertia_neg"], r["inertia_zero"])
                                         for r in rep.log[1:]]))
    return sol, rep


# ------------------------------------------------------------------ 1
def test_condensation_equivalence(verdict):
    t0 = time.perf_counter()
    net = load_case("case9")
    model = build_multiperiod_opf(MultiPeriodCase(net, flat_profile(net, 1)))
    config = SolverConfig(tol=1e-4)
    iterates = []

    def grab(nlp, it, ev):
        iterates.append(it.copy())
        return len(iterates) >= 4

    _, rep = solve(model, config, callback=grab)
    nlp = lift_inequalities(model, config.tol)
    nlp.obj_scale = rep.obj_scale
    iterates.insert(0, initialize(nlp, config.mu_init, config.push_kappa))
    assembler = CondensedAssembler(nlp)
    worst = 0.0
    for it in iterates:
        ev = evaluate(nlp, it.x)
        res = compute_residuals(nlp, it, ev)
        fac = inertia_corrected_factorize(assembler, it, res, nlp.hessian_values(it.x, it.y), ev.A)
        d = recover_step(nlp, it, fac.kkt, fac.factor, res, ev.A)
        ref = full_kkt_oracle(nlp, it, res, nlp.hessian_dense(it.x, it.y), ev.A, fac.delta_w, fac.delta_c)
        worst = max(worst, d.max_rel_diff(ref))
    elapsed = time.perf_counter() - t0
    ok = len(iterates) == 5 and worst <= 1e-6 and elapsed < 10.0
    verdict("criterion 1 condensation equivalence", ok,
            f"iterates={len(iterates)} max_rel_diff={worst:.2e} time={elapsed:.2f}s")
    assert ok


# ------------------------------------------------------------------ 2
def tolerance_instances():
    case9, case30 = load_case("case9"), load_case("case30")
    return {
        "case9_T1": MultiPeriodCase(case9, flat_profile(case9, 1)),
        "case9_T10": MultiPeriodCase(case9, generate_load_profile(case9, 10, seed=1)),
        "case30_T1": MultiPeriodCase(case30, flat_profile(case30, 1)),
        # case30 cannot serve much above nominal load, so the daily curve is scaled to 0.8
        "case30_T30": MultiPeriodCase(case30, generate_load_profile(case30, 30, 30.0, seed=1, level=0.8)),
    }


@pytest.mark.parametrize("tol", [1e-4, 1e-6])
def test_tolerance_guarantee(verdict, tol):
    lines, ok = [], True
    for name, case in tolerance_instances().items():
        model = build_multiperiod_opf(case)
        sol, rep = tracked_solve(model, SolverConfig(tol=tol))
        report = validate_solution(case, extract_dispatch(model, sol.x, case), tol)
        ok &= rep.solved and report.passed
        lines.append(f"{name}:{rep.status}/{report.worst:.1e}")
    verdict(f"criterion 2 tolerance guarantee tol={tol:g}", ok, " ".join(lines))
    assert ok


# ------------------------------------------------------------------ 3
def test_ad_correctness(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("case9", "case30"):
        net = load_case(name)
        model = build_multiperiod_opf(MultiPeriodCase(net, generate_load_profile(net, 2, seed=0)))
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = interior_point(model, rng)
            y = rng.normal(size=model.m)
            pairs = [
                (model.evaluate_gradient(x), central_fd(model.evaluate_objective, x)),
                (model.jacobian_csc(x)[0].to_dense(), central_fd(model.evaluate_constraints, x)),
                (model.hessian_csc(x, y)[0].to_dense(),
                 central_fd(lambda z: model.evaluate_gradient(z) + model.jacobian_csc(z)[0].to_scipy().T @ y, x)),
            ]
            for ad, fd in pairs:
                worst = max(worst, float(np.max(np.abs(ad - fd) / (1.0 + np.abs(ad)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30.0
    verdict("criterion 3 AD correctness", ok, f"max_rel_err={worst:.2e} time={elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 5
def test_temporal_decoupling(verdict):
    net = load_case("case9")
    ok, details = True, []
    for tol in (1e-6, 1e-8):
        _, one = tracked_solve(build_multiperiod_opf(MultiPeriodCase(net, flat_profile(net, 1), ramp=np.inf)),
                               SolverConfig(tol=tol))
        _, ten = tracked_solve(build_multiperiod_opf(MultiPeriodCase(net, flat_profile(net, 10), ramp=np.inf)),
                               SolverConfig(tol=tol))
        rel = abs(ten.objective - 10 * one.objective) / abs(10 * one.objective)
        ok &= one.solved and ten.solved and rel <= 1e-6
        details.append(f"tol={tol:g} rel_diff={rel:.1e}")
    verdict("criterion 5a temporal decoupling", ok, " ".join(details))
    assert ok


def test_zero_ramp_freezes_dispatch(verdict):
    net = load_case("case9")
    tol = 1e-4
    case = MultiPeriodCase(net, generate_load_profile(net, 10, seed=0), ramp=0.0)
    model = build_multiperiod_opf(case)
    sol, rep = tracked_solve(model, SolverConfig(tol=tol))
    pg = extract_dispatch(model, sol.x, case).pg
    spread = pg.max(axis=1) - pg.min(axis=1)
    ok = rep.solved and float(spread.max()) <= 10 * tol
    verdict("criterion 5b zero ramp", ok,
            f"status={rep.status} spread={np.array2string(spread, precision=3)}")
    assert ok


# ------------------------------------------------------------------ 6
def test_scale_against_reference_counts(verdict):
    ok, details = True, []
    for name, T, res, ref_vars, ref_cons in (("case30", 30, 30.0, 7e3, 11e3), ("case118", 168, 60.0, 183e3, 268e3)):
        net = load_case(name)
        case = MultiPeriodCase(net, generate_load_profile(net, T, res, seed=0))
        t0 = time.perf_counter()
        model = build_multiperiod_opf(case)
        build = time.perf_counter() - t0
        within = all(0.5 <= got / ref <= 2.0 for got, ref in ((model.n, ref_vars), (model.m, ref_cons)))
        ok &= within and build < 5.0
        details.append(f"{name}/T={T}: {model.n} vars {model.m} cons build={build:.2f}s")
    verdict("criterion 6 model scale", ok, "; ".join(details))
    assert ok


# ------------------------------------------------------------------ 7
@pytest.mark.slow
def test_case118_week(verdict):
    net = load_case("case118")
    case = MultiPeriodCase(net, generate_load_profile(net, 168, 60.0, seed=1))
    model = build_multiperiod_opf(case)
    t0 = time.perf_counter()
    sol, rep = tracked_solve(model, SolverConfig(tol=1e-4))
    elapsed = time.perf_counter() - t0
    report = validate_solution(case, extract_dispatch(model, sol.x, case), 1e-4)
    ok = rep.solved and report.passed and rep.iterations <= 500 and elapsed < 1800
    verdict("criterion 7 case118 T=168", ok,
            f"n={model.n} status={rep.status} iterations={rep.iterations} time={elapsed:.1f}s "
            f"worst_violation={report.worst:.1e}")
    assert ok


# ------------------------------------------------------------------ 4 (after the solves above)
def test_inertia_of_accepted_steps(verdict):
    assert _INERTIA, "no solves recorded"
    bad = [(name, k, got) for name, n, steps in _INERTIA for k, got in enumerate(steps, 1) if got != (n, 0, 0)]
    n_steps = sum(len(steps) for _, _, steps in _INERTIA)
    ok = not bad
    verdict("criterion 4 inertia (n, 0, 0)", ok, f"solves={len(_INERTIA)} steps={n_steps} violations={bad[:3]}")
    assert ok


# ------------------------------------------------------------------ 8
def test_cli_determinism(verdict, tmp_path, capsys):
    runs = []
    for k in range(2):
        out, logp = tmp_path / f"r{k}.json", tmp_path / f"l{k}.csv"
        code = main(["solve", "--case", "case30", "--periods", "4", "--level", "0.8", "--tol", "1e-6",
                     "--out", str(out), "--log", str(logp)])
        runs.append((code, json.loads(out.read_text()), logp.read_bytes()))
    capsys.readouterr()
    (c0, r0, l0), (c1, r1, l1) = runs
    same_obj = r0["objective"] == r1["objective"]
    ok = c0 == c1 == 0 and l0 == l1 and same_obj
    verdict("criterion 8 determinism", ok,
            f"identical_logs={l0 == l1} identical_objective={same_obj} objective={r0['objective']!r}")
    assert ok
