"""Dense symmetric-indefinite factorization used as a test oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass
class DenseLDL:
    inertia: tuple[int, int, int]
    solve: Callable[[np.ndarray], np.ndarray]

    def __iter__(self):
        return iter((self.inertia, self.solve))


def _block_eigenvalues(d: np.ndarray) -> np.ndarray:
    n = d.shape[0]
    eig = np.empty(n)
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            eig[i:i + 2] = np.linalg.eigvalsh(d[i:i + 2, i:i + 2])
            i += 2
        else:
            eig[i] = d[i, i]
            i += 1
    return eig


def dense_ldl_oracle(a, zero_tol: float | None = None, allow_singular: bool = False) -> DenseLDL:
    """Bunch-Kaufman factorization of a dense symmetric matrix.

    Returns the exact inertia (Sylvester's law applied to the 1x1/2x2 block
    diagonal) and a solve closure.  A matrix with zero eigenvalues within
    ``zero_tol`` raises :class:`SingularMatrixError` unless ``allow_singular``.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("matrix must be symmetric")
    lu, d, perm = sla.ldl(a, lower=True)
    eig = _block_eigenvalues(d)
    if zero_tol is None:
        zero_tol = n * np.finfo(float).eps * max(1.0, np.abs(a).max(initial=0.0))
    npos = int(np.sum(eig > zero_tol))
    nneg = int(np.sum(eig < -zero_tol))
    nzero = n - npos - nneg
    if nzero and not allow_singular:
        raise SingularMatrixError(f"matrix is singular within tolerance ({nzero} zero pivots)")
    lower = lu[perm]

    def solve(b):
        b = np.asarray(b, dtype=float)
        y = sla.solve_triangular(lower, b[perm], lower=True, unit_diagonal=True)
        z = sla.solve(d, y, assume_a="sym")
        x = np.empty_like(z)
        x[perm] = sla.solve_triangular(lower.T, z, lower=False, unit_diagonal=True)
        return x

    return DenseLDL((npos, nneg, nzero), solve)
