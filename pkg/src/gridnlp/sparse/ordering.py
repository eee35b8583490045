"""Approximate minimum degree ordering on a quotient graph."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit

from .csc import SparseMatrixCSC


@njit(cache=True)
def _bucket_insert(i, d, head, nxt, prv):
    h = head[d]
    nxt[i] = h
    prv[i] = -1
    if h != -1:
        prv[h] = i
    head[d] = i


@njit(cache=True)
def _bucket_remove(i, d, head, nxt, prv):
    if prv[i] != -1:
        nxt[prv[i]] = nxt[i]
    else:
        head[d] = nxt[i]
    if nxt[i] != -1:
        prv[nxt[i]] = prv[i]
    nxt[i] = -1
    prv[i] = -1


@njit(cache=True)
def _compact(iw, pe, ln, status, n):
    # move every live list to the front of the pool, preserving relative order
    live = np.empty(n, np.int64)
    cnt = 0
    for i in range(n):
        if status[i] != 2:
            live[cnt] = i
            cnt += 1
    live = live[:cnt]
    order = np.argsort(pe[live], kind="mergesort")
    pos = 0
    for t in range(cnt):
        i = live[order[t]]
        src = pe[i]
        pe[i] = pos
        for q in range(ln[i]):
            iw[pos + q] = iw[src + q]
        pos += ln[i]
    return pos


@njit(cache=True)
def _amd_order(n, indptr, indices):
    nnz = indptr[n]
    size = 2 * nnz + 4 * n + 16
    iw = np.empty(size, np.int64)
    iw[:nnz] = indices
    pe = indptr[:n].copy()
    ln = indptr[1:] - indptr[:n]
    elen = np.zeros(n, np.int64)
    status = np.zeros(n, np.int8)      # 0 variable, 1 element, 2 absorbed element
    deg = ln.copy()
    head = np.full(n + 1, -1, np.int64)
    nxt = np.full(n, -1, np.int64)
    prv = np.full(n, -1, np.int64)
    for i in range(n):
        _bucket_insert(i, deg[i], head, nxt, prv)
    mark = np.zeros(n, np.int64)
    wmark = np.zeros(n, np.int64)
    w = np.zeros(n, np.int64)
    tmp = np.empty(n, np.int64)
    order = np.empty(n, np.int64)
    pfree = nnz
    tag = 0
    mindeg = 0
    for k in range(n):
        while head[mindeg] == -1:
            mindeg += 1
        p = head[mindeg]
        _bucket_remove(p, deg[p], head, nxt, prv)
        order[k] = p

        need = min(deg[p], n - k) + 1
        if pfree + need > size:
            pfree = _compact(iw, pe, ln, status, n)
            if pfree + need > size:
                size = 2 * size + need
                bigger = np.empty(size, np.int64)
                bigger[:pfree] = iw[:pfree]
                iw = bigger

        tag += 1
        mark[p] = tag
        start = pfree
        cnt = 0
        for idx in range(pe[p], pe[p] + elen[p]):
            e = iw[idx]
            if status[e] != 1:
                continue
            for jj in range(pe[e], pe[e] + ln[e]):
                j = iw[jj]
                if status[j] == 0 and mark[j] != tag:
                    mark[j] = tag
                    iw[start + cnt] = j
                    cnt += 1
            status[e] = 2
        for idx in range(pe[p] + elen[p], pe[p] + ln[p]):
            j = iw[idx]
            if status[j] == 0 and mark[j] != tag:
                mark[j] = tag
                iw[start + cnt] = j
                cnt += 1
        status[p] = 1
        pe[p] = start
        ln[p] = cnt
        elen[p] = 0
        pfree = start + cnt

        # |L_e \ L_p| for every element adjacent to the new element's members
        for ii in range(cnt):
            i = iw[start + ii]
            for idx in range(pe[i], pe[i] + elen[i]):
                e = iw[idx]
                if status[e] != 1:
                    continue
                if wmark[e] != tag:
                    wmark[e] = tag
                    w[e] = ln[e]
                w[e] -= 1

        lp_ext = cnt - 1
        for ii in range(cnt):
            i = iw[start + ii]
            _bucket_remove(i, deg[i], head, nxt, prv)
            base = pe[i]
            e_old = elen[i]
            nv = 0
            for idx in range(base + e_old, base + ln[i]):
                j = iw[idx]
                if status[j] == 0 and mark[j] != tag:
                    tmp[nv] = j
                    nv += 1
            ne = 0
            ext = 0
            for idx in range(base, base + e_old):
                e = iw[idx]
                if status[e] != 1:
                    continue
                if w[e] == 0:
                    status[e] = 2
                    continue
                iw[base + ne] = e
                ne += 1
                ext += w[e]
            iw[base + ne] = p
            ne += 1
            for q in range(nv):
                iw[base + ne + q] = tmp[q]
            elen[i] = ne
            ln[i] = ne + nv
            d = nv + lp_ext + ext
            d = min(d, deg[i] + lp_ext)
            d = min(d, n - k - 2)
            if d < 0:
                d = 0
            deg[i] = d
            _bucket_insert(i, d, head, nxt, prv)
            if d < mindeg:
                mindeg = d
    return order


def symmetric_adjacency(a) -> sp.csr_matrix:
    """Off-diagonal adjacency of the symmetric completion of ``a``."""
    if isinstance(a, SparseMatrixCSC):
        s = sp.csc_matrix((np.ones(a.nnz), a.rowidx, a.colptr), shape=a.shape)
    else:
        s = sp.csc_matrix(a, copy=True)
        s.data = np.ones_like(s.data, dtype=float)
    s = (s + s.T).tocsr()
    s.setdiag(0)
    s.eliminate_zeros()
    s.sort_indices()
    return s


def fill_reducing_ordering(a) -> np.ndarray:
    """Approximate minimum degree permutation of a structurally symmetric matrix.

    ``perm[k]`` is the original index eliminated at step ``k``.  Accepts a
    :class:`SparseMatrixCSC` (lower-triangle storage is fine) or any scipy
    sparse matrix.  Deterministic for a fixed input pattern.
    """
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise ValueError("ordering requires a square matrix")
    if n == 0:
        return np.zeros(0, np.int64)
    g = symmetric_adjacency(a)
    return _amd_order(n, g.indptr.astype(np.int64), g.indices.astype(np.int64))


def natural_ordering(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64)
