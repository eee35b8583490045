import numpy as np
import pytest

from gridnlp.power import MultiPeriodCase, build_multiperiod_opf, flat_profile, generate_load_profile, load_case
from gridnlp.sparse import SparseMatrixCSC, compress_to_csc


def lower_csc(a) -> SparseMatrixCSC:
    """Lower-triangle CSC of a dense symmetric matrix, keeping its structural nonzeros."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    rows, cols = np.nonzero(np.tril(a) != 0)
    diag = np.arange(n)
    rows, cols = np.concatenate([rows, diag]), np.concatenate([cols, diag])
    vals = np.zeros(rows.size)
    csc, slots = compress_to_csc(rows, cols, vals, (n, n), symmetric=True)
    csc.values[:] = a[csc.rowidx, np.repeat(np.arange(n), np.diff(csc.colptr))]
    return csc


def random_spd(rng, n, density=0.2):
    b = rng.normal(size=(n, n)) * (rng.random((n, n)) < density)
    return b.T @ b + np.eye(n)


def central_fd(fun, x, h=1e-6):
    """Central differences of ``fun`` (scalar or vector valued) along each coordinate."""
    cols = []
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def interior_point(model, rng, margin=0.1):
    """Random point strictly inside the variable box; unbounded entries near the start."""
    lo, hi = model.x_lower, model.x_upper
    x0 = np.clip(model.x_start, lo, hi)
    a = np.where(np.isfinite(lo), lo, x0 - 1.0)
    b = np.where(np.isfinite(hi), hi, x0 + 1.0)
    width = b - a
    x = a + width * (margin + (1 - 2 * margin) * rng.random(lo.size))
    return np.where(lo == hi, lo, x)


@pytest.fixture(scope="session")
def case9():
    return load_case("case9")


@pytest.fixture(scope="session")
def case30():
    return load_case("case30")


@pytest.fixture(scope="session")
def case9_model(case9):
    case = MultiPeriodCase(case9, generate_load_profile(case9, 2, 30, seed=1))
    return case, build_multiperiod_opf(case)


@pytest.fixture(scope="session")
def case9_single_period(case9):
    case = MultiPeriodCase(case9, flat_profile(case9, 1))
    return case, build_multiperiod_opf(case)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        _VERDICTS.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
