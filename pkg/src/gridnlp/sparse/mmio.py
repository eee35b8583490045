"""Matrix-market dumps for debugging KKT and derivative matrices."""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp

from .csc import SparseMatrixCSC


def write_matrix_market(path, a, comment: str = "") -> None:
    if isinstance(a, SparseMatrixCSC):
        m = a.to_scipy(full=False)
        symmetry = "symmetric" if a.symmetric else "general"
    else:
        m = sp.coo_matrix(a)
        symmetry = "general"
    scipy.io.mmwrite(str(path), sp.coo_matrix(m), comment=comment, symmetry=symmetry)


def read_matrix_market(path) -> SparseMatrixCSC:
    m = sp.csc_matrix(scipy.io.mmread(str(path)))
    info = scipy.io.mminfo(str(path))
    symmetric = info[-1] == "symmetric"
    if symmetric:
        m = sp.tril(m).tocsc()
    m.sort_indices()
    return SparseMatrixCSC(m.shape, m.indptr.astype(np.int64), m.indices.astype(np.int64),
                           m.data.astype(float), symmetric)
