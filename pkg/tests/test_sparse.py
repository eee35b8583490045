import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridnlp.sparse import (
    FactorizationError,
    SingularMatrixError,
    compress_to_csc,
    dense_ldl_oracle,
    factorize,
    fill_reducing_ordering,
    iterative_refinement,
    natural_ordering,
    numeric_factorize,
    read_matrix_market,
    solve_in_place,
    symbolic_factorize,
    write_matrix_market,
)

from conftest import lower_csc, random_spd


def reconstruct(factor):
    s = factor.symbolic
    L = factor.l_dense()
    A_perm = L @ np.diag(factor.D) @ L.T
    out = np.empty_like(A_perm)
    out[np.ix_(s.perm, s.perm)] = A_perm
    return out


# ------------------------------------------------------------------ COO -> CSC
def test_duplicates_are_summed():
    csc, slots = compress_to_csc([1, 1], [1, 1], [2.0, 3.5], (2, 2))
    assert csc.nnz == 1
    assert csc.to_dense()[1, 1] == 5.5
    assert list(slots) == [0, 0]


def test_empty_coo_gives_empty_csc():
    csc, slots = compress_to_csc([], [], [], (3, 3))
    assert csc.nnz == 0 and slots.size == 0
    assert np.array_equal(csc.to_dense(), np.zeros((3, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_coo_matches_dense_accumulation(seed):
    rng = np.random.default_rng(seed)
    k = 400
    rows = rng.integers(0, 50, k)
    cols = rng.integers(0, 50, k)
    dup = rng.random(k) < 0.3
    rows[dup], cols[dup] = rows[0], cols[0]
    vals = rng.normal(size=k)
    ref = np.zeros((50, 50))
    np.add.at(ref, (rows, cols), vals)
    csc, slots = compress_to_csc(rows, cols, vals, (50, 50))
    csc.check()
    assert np.allclose(csc.to_dense(), ref, rtol=0, atol=1e-12)
    # slot map reproduces the values for a new numeric update
    new = rng.normal(size=k)
    assert np.allclose(np.bincount(slots, weights=new, minlength=csc.nnz),
                       compress_to_csc(rows, cols, new, (50, 50))[0].values)


def test_symmetric_compression_reflects_upper_entries():
    csc, _ = compress_to_csc([0, 1], [1, 0], [1.0, 2.0], (2, 2), symmetric=True)
    assert csc.nnz == 1
    assert np.array_equal(csc.to_dense(), [[0.0, 3.0], [3.0, 0.0]])


# ------------------------------------------------------------------ ordering
def test_identity_pattern_has_no_fill():
    csc = lower_csc(np.eye(6))
    perm = fill_reducing_ordering(csc)
    assert sorted(perm) == list(range(6))
    assert symbolic_factorize(csc, perm).nnz_l == 0


def test_tridiagonal_fill_not_worse_than_natural():
    a = 4 * np.eye(5) - np.eye(5, k=1) - np.eye(5, k=-1)
    csc = lower_csc(a)
    natural = symbolic_factorize(csc, natural_ordering(5)).nnz_l
    assert natural == 4
    assert symbolic_factorize(csc).nnz_l <= natural


def test_arrow_matrix_hub_eliminated_last():
    n = 10
    a = np.eye(n) * n
    a[-1, :] = a[:, -1] = 1.0
    a[-1, -1] = n
    hub_first = np.roll(np.arange(n), 1)      # worst order: hub at step 0
    csc = lower_csc(a)
    assert symbolic_factorize(csc, hub_first).nnz_l == n * (n - 1) // 2
    perm = fill_reducing_ordering(csc)
    assert n - 1 in perm[-2:]      # the last two eliminations tie
    assert symbolic_factorize(csc, perm).nnz_l + n == 2 * n - 1


def test_ordering_is_deterministic():
    rng = np.random.default_rng(3)
    csc = lower_csc(random_spd(rng, 40, 0.1))
    assert np.array_equal(fill_reducing_ordering(csc), fill_reducing_ordering(csc))


# ------------------------------------------------------------------ symbolic
def test_diagonal_pattern_gives_diagonal_l():
    assert symbolic_factorize(lower_csc(np.diag([1.0, 2.0, 3.0]))).nnz_l == 0


def test_dense_2x2_has_one_subdiagonal():
    assert symbolic_factorize(lower_csc([[2.0, 1.0], [1.0, 2.0]])).nnz_l == 1


def test_l_pattern_contains_permuted_lower_triangle():
    rng = np.random.default_rng(5)
    a = random_spd(rng, 60, 0.05)
    csc = lower_csc(a)
    sym = symbolic_factorize(csc)
    cols = np.repeat(np.arange(sym.n), np.diff(sym.Lp))
    lpat = set(zip(sym.Li.tolist(), cols.tolist()))
    r, c = np.nonzero(np.tril(a[np.ix_(sym.perm, sym.perm)], -1))
    assert set(zip(r.tolist(), c.tolist())) <= lpat


def test_bad_permutation_rejected():
    with pytest.raises(ValueError):
        symbolic_factorize(lower_csc(np.eye(3)), [0, 0, 1])


# ------------------------------------------------------------------ numeric
def test_identity_factor():
    f = factorize(lower_csc(np.eye(4)))
    assert np.array_equal(f.D, np.ones(4))
    assert f.inertia == (4, 0, 0) and f.is_positive_definite


def test_indefinite_diagonal_inertia():
    assert factorize(lower_csc(np.diag([2.0, -3.0]))).inertia == (1, 1, 0)


@pytest.mark.parametrize("seed", range(3))
def test_spd_reconstruction(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(30, 30))
    a = b.T @ b + np.eye(30)
    f = factorize(lower_csc(a))
    assert f.n_floored == 0
    assert np.abs(reconstruct(f) - a).max() <= 1e-10 * np.abs(a).max()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_inertia_matches_dense_oracle(n, seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.1)
    # diagonally dominant but indefinite, so no pivot needs flooring
    a = b + b.T + np.diag(rng.choice([-1.0, 1.0], n) * (np.abs(b + b.T).sum(1) + 1.0))
    f = factorize(lower_csc(a))
    assert f.inertia == dense_ldl_oracle(a).inertia
    assert np.abs(reconstruct(f) - a).max() <= 1e-9 * np.abs(a).max()


def test_pattern_reuse_is_bitwise_identical():
    rng = np.random.default_rng(8)
    csc = lower_csc(random_spd(rng, 50, 0.1))
    sym = symbolic_factorize(csc)
    new_vals = csc.values * rng.uniform(0.5, 1.5, csc.nnz)
    csc2 = csc.__class__(csc.shape, csc.colptr, csc.rowidx, new_vals, True)
    reused = numeric_factorize(sym, new_vals, csc=csc2)
    fresh = factorize(csc2)
    assert np.array_equal(reused.Lx, fresh.Lx) and np.array_equal(reused.D, fresh.D)


def test_tiny_pivot_floored_and_counted():
    f = factorize(lower_csc(np.diag([1.0, 1e-20, -1e-20])), pivot_floor=1e-8)
    assert f.n_floored == 2
    assert sorted(f.D) == [-1e-8, 1e-8, 1.0]
    assert f.inertia == (2, 1, 0)


def test_exact_zero_pivot_floored_positive():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    f = factorize(lower_csc(a), pivot_floor=1e-10)
    assert f.inertia == (1, 0, 1) and f.D[-1] == 1e-10


def test_non_finite_values_rejected():
    csc = lower_csc(np.eye(2))
    csc.values[0] = np.nan
    with pytest.raises(FactorizationError):
        factorize(csc)


# ------------------------------------------------------------------ solves
def test_identity_solve():
    b = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(factorize(lower_csc(np.eye(3))).solve(b), b)


def test_diagonal_solve_in_place():
    rhs = np.array([4.0])
    out = solve_in_place(factorize(lower_csc([[2.0]])), rhs)
    assert out is rhs and rhs[0] == 2.0


def test_refined_spd_residual():
    rng = np.random.default_rng(11)
    a = random_spd(rng, 80, 0.05)
    csc = lower_csc(a)
    b = rng.normal(size=80)
    x, res, passes = iterative_refinement(csc, factorize(csc), b, max_passes=1)
    assert np.abs(a @ x - b).max() <= 1e-9 * np.abs(b).max()
    assert res <= 1e-9


def test_ordering_does_not_change_the_solution():
    rng = np.random.default_rng(12)
    a = random_spd(rng, 60, 0.1)
    csc = lower_csc(a)
    b = rng.normal(size=60)
    x_amd = factorize(csc).solve(b)
    x_nat = factorize(csc, natural_ordering(60)).solve(b)
    assert np.abs(x_amd - x_nat).max() <= 1e-9 * np.abs(x_nat).max()


# ------------------------------------------------------------------ refinement
def test_refinement_exact_solution_needs_no_pass():
    csc = lower_csc(np.diag([2.0, 4.0]))
    out = iterative_refinement(csc, factorize(csc), np.array([2.0, 4.0]), max_passes=3)
    assert out.passes == 0 and out.residual_norm == 0.0


def test_refinement_reaches_tol_quickly_on_well_conditioned_spd():
    rng = np.random.default_rng(13)
    a = random_spd(rng, 50, 0.1)
    csc = lower_csc(a)
    out = iterative_refinement(csc, factorize(csc), rng.normal(size=50), max_passes=5, tol=1e-12)
    assert out.residual_norm <= 1e-12 and out.passes <= 2


def test_refinement_on_floored_system_improves_or_stops():
    a = np.diag([1.0, 1e-9, 3.0]) + 1e-12
    csc = lower_csc(a)
    f = factorize(csc, pivot_floor=1e-6)
    assert f.n_floored == 1
    out = iterative_refinement(csc, f, np.ones(3), max_passes=5, tol=1e-14)
    assert out.residual_norm == min(out.history)
    assert out.residual_norm < out.history[0]


def test_refinement_zero_rhs():
    csc = lower_csc(np.eye(2))
    out = iterative_refinement(csc, factorize(csc), np.zeros(2))
    assert np.array_equal(out.solution, np.zeros(2)) and out.passes == 0


# ------------------------------------------------------------------ dense oracle
def test_dense_oracle_singular_inertia():
    assert dense_ldl_oracle(np.diag([1.0, -1.0, 0.0]), allow_singular=True).inertia == (1, 1, 1)
    with pytest.raises(SingularMatrixError):
        dense_ldl_oracle(np.diag([1.0, -1.0, 0.0]))


def test_dense_oracle_rejects_unsymmetric():
    with pytest.raises(ValueError):
        dense_ldl_oracle(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("seed", range(3))
def test_dense_oracle_matches_gaussian_elimination(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(25, 25))
    a = b + b.T
    rhs = rng.normal(size=25)
    x = dense_ldl_oracle(a).solve(rhs)
    ref = np.linalg.solve(a, rhs)
    assert np.abs(x - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())
    eig = np.linalg.eigvalsh(a)
    assert dense_ldl_oracle(a).inertia == (int((eig > 0).sum()), int((eig < 0).sum()), 0)


# ------------------------------------------------------------------ matrix market
def test_matrix_market_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    csc = lower_csc(random_spd(rng, 12, 0.3))
    write_matrix_market(tmp_path / "m.mtx", csc, comment="kkt")
    back = read_matrix_market(tmp_path / "m.mtx")
    assert back.symmetric
    assert np.allclose(back.to_dense(), csc.to_dense(), rtol=1e-15, atol=0)
