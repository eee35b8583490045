"""Compressed sparse column storage and COO compression with slot maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class SparseMatrixCSC:
    """Compressed sparse column matrix.

    When ``symmetric`` is true only the lower triangle (``row >= col``) is
    stored and the matrix is understood to be its symmetric completion.
    """

    shape: tuple[int, int]
    colptr: np.ndarray
    rowidx: np.ndarray
    values: np.ndarray
    symmetric: bool = False

    @property
    def n(self) -> int:
        return self.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.colptr[-1])

    def check(self) -> None:
        """Raise ``ValueError`` if the storage invariants do not hold."""
        nrow, ncol = self.shape
        if self.colptr.shape != (ncol + 1,) or self.colptr[0] != 0:
            raise ValueError("colptr has wrong shape or does not start at 0")
        if np.any(np.diff(self.colptr) < 0):
            raise ValueError("colptr must be nondecreasing")
        if self.rowidx.shape != (self.nnz,) or self.values.shape != (self.nnz,):
            raise ValueError("rowidx/values length does not match colptr")
        for j in range(ncol):
            rows = self.rowidx[self.colptr[j]:self.colptr[j + 1]]
            if rows.size and (np.any(np.diff(rows) <= 0) or rows[0] < 0 or rows[-1] >= nrow):
                raise ValueError(f"column {j} row indices unsorted or out of range")
            if self.symmetric and rows.size and rows[0] < j:
                raise ValueError(f"column {j} has entries above the diagonal")

    def to_scipy(self, full: bool = True) -> sp.csc_matrix:
        """Return a scipy matrix; symmetric storage is mirrored when ``full``."""
        a = sp.csc_matrix((self.values, self.rowidx, self.colptr), shape=self.shape)
        if self.symmetric and full:
            lower_strict = sp.tril(a, k=-1)
            a = (a + lower_strict.T).tocsc()
        return a

    def to_dense(self) -> np.ndarray:
        return self.to_scipy(full=True).toarray()

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.shape))
        cols = np.repeat(np.arange(self.shape[1]), np.diff(self.colptr))
        on = self.rowidx == cols
        d[cols[on]] = self.values[on]
        return d

    def matvec(self, x: np.ndarray) -> np.ndarray:
        a = sp.csc_matrix((self.values, self.rowidx, self.colptr), shape=self.shape)
        y = a @ x
        if self.symmetric:
            y = y + a.T @ x - self.diagonal() * x
        return y

    @classmethod
    def from_scipy(cls, a, symmetric: bool = False) -> "SparseMatrixCSC":
        a = sp.csc_matrix(a)
        if symmetric:
            a = sp.tril(a).tocsc()
        a.sum_duplicates()
        a.sort_indices()
        return cls(a.shape, a.indptr.astype(np.int64), a.indices.astype(np.int64),
                   a.data.astype(float), symmetric)


def compress_to_csc(rows, cols, values, shape, symmetric: bool = False):
    """Compress COO triplets into CSC, summing duplicates.

    Returns ``(csc, slot_map)`` where ``slot_map[k]`` is the CSC position that
    COO entry ``k`` accumulates into.  Later numeric updates with the same
    pattern reduce to ``np.bincount(slot_map, weights=new_values)``.

    With ``symmetric=True`` entries above the diagonal are reflected into the
    lower triangle before compression.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    nrow, ncol = shape
    if rows.shape != cols.shape or rows.shape != values.shape:
        raise ValueError("rows, cols and values must have the same length")
    if symmetric:
        rows, cols = np.maximum(rows, cols), np.minimum(rows, cols)
    if rows.size == 0:
        csc = SparseMatrixCSC(shape, np.zeros(ncol + 1, np.int64), np.zeros(0, np.int64),
                              np.zeros(0), symmetric)
        return csc, np.zeros(0, np.int64)
    if rows.min() < 0 or rows.max() >= nrow or cols.min() < 0 or cols.max() >= ncol:
        raise ValueError("COO index out of range")
    key = cols * nrow + rows
    uniq, slot_map = np.unique(key, return_inverse=True)
    ucols = uniq // nrow
    urows = uniq - ucols * nrow
    colptr = np.zeros(ncol + 1, np.int64)
    np.cumsum(np.bincount(ucols, minlength=ncol), out=colptr[1:])
    vals = np.bincount(slot_map, weights=values, minlength=uniq.size)
    csc = SparseMatrixCSC(shape, colptr, urows.astype(np.int64), vals, symmetric)
    return csc, slot_map.astype(np.int64)
