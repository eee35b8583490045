"""Sparse symmetric factorization: ordering, LDL^T with static pivoting, refinement."""

from .csc import SparseMatrixCSC, compress_to_csc
from .dense import DenseLDL, SingularMatrixError, dense_ldl_oracle
from .ldl import (
    FactorizationError,
    NumericFactorization,
    SymbolicFactorization,
    default_pivot_floor,
    factorize,
    iterative_refinement,
    numeric_factorize,
    solve_in_place,
    symbolic_factorize,
)
from .mmio import read_matrix_market, write_matrix_market
from .ordering import fill_reducing_ordering, natural_ordering

__all__ = [
    "SparseMatrixCSC", "compress_to_csc", "DenseLDL", "SingularMatrixError", "dense_ldl_oracle",
    "FactorizationError", "NumericFactorization", "SymbolicFactorization", "default_pivot_floor",
    "factorize", "iterative_refinement", "numeric_factorize", "solve_in_place",
    "symbolic_factorize", "read_matrix_market", "write_matrix_market", "fill_reducing_ordering",
    "natural_ordering",
]
