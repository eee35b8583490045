"""Pattern-based NLP container.

An NLP is stored as variable blocks plus (pattern, data array) pairs::

    min   sum_l sum_i f_l(x; p_li)           over  lower <= x <= upper
    s.t.  lower_c <= c(x) <= upper_c,   c_m(x) = sum of pattern instances targeting row m - rhs_m

Each pattern is traced once.  At :meth:`PatternModel.freeze` every pattern
instance is assigned a disjoint range of Jacobian and Hessian COO slots, so
evaluation over the data array writes without contention and in any order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..sparse.csc import compress_to_csc
from .expr import Expr, Record, VarRef, as_expr
from .tape import EvaluationError, Tape

log = logging.getLogger(__name__)


class ModelError(ValueError):
    pass


@dataclass
class VariableBlock:
    name: str
    shape: tuple
    lower: np.ndarray
    upper: np.ndarray
    start: np.ndarray
    offset: int = 0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def flat(self) -> slice:
        return slice(self.offset, self.offset + self.size)

    def __getitem__(self, index) -> VarRef:
        if not isinstance(index, tuple):
            index = (index,)
        if len(index) != len(self.shape):
            raise ModelError(f"block {self.name!r} needs {len(self.shape)} indices, got {len(index)}")
        for i in index:
            if isinstance(i, Expr) and not hasattr(i, "field"):
                raise ModelError(f"block {self.name!r}: indices must be data fields or integers")
        return VarRef(self, tuple(index))

    def indices(self, *idx) -> np.ndarray:
        """Flat positions of entries ``idx`` (broadcast integer arrays)."""
        return self.offset + np.ravel_multi_index(tuple(np.asarray(i) for i in idx), self.shape)

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.flat].reshape(self.shape)


def _as_data(data) -> dict:
    if data is None:
        return {}
    if isinstance(data, np.ndarray) and data.dtype.names:
        return {k: np.ascontiguousarray(data[k]) for k in data.dtype.names}
    if hasattr(data, "to_dict") and hasattr(data, "columns"):
        return {str(k): np.asarray(data[k]) for k in data.columns}
    if isinstance(data, dict):
        out = {str(k): np.asarray(v) for k, v in data.items()}
        lengths = {v.shape for v in out.values()}
        if len(lengths) > 1 or any(len(s) != 1 for s in lengths):
            raise ModelError("data columns must be 1-D arrays of equal length")
        return out
    raise ModelError(f"unsupported data container {type(data).__name__}")


def _nrec(data: dict) -> int:
    return len(next(iter(data.values()))) if data else 0


@dataclass
class Pattern:
    """A traced pattern bound to its data array."""

    name: str
    tape: Tape
    data: dict
    params: dict = field(default_factory=dict)
    gidx: np.ndarray | None = None           # (records, locals) global variable indices
    rows: np.ndarray | None = None           # constraint rows (global), None for objectives
    jac_offset: int = 0
    hess_offset: int = 0
    hess_scale: np.ndarray | None = None     # 2 where two locals alias one diagonal entry

    @property
    def nrec(self) -> int:
        return _nrec(self.data)

    @property
    def n_jac(self) -> int:
        return self.nrec * len(self.tape.grad_locals)

    @property
    def n_hess(self) -> int:
        return self.nrec * len(self.tape.hess_pairs)


@dataclass
class ConstraintBlock:
    name: str
    n_rows: int
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    offset: int = 0
    patterns: list = field(default_factory=list)

    @property
    def rows(self) -> slice:
        return slice(self.offset, self.offset + self.n_rows)


def _broadcast(value, shape, what, name):
    arr = np.asarray(value, dtype=float)
    try:
        return np.broadcast_to(arr, shape).astype(float).copy()
    except ValueError:
        raise ModelError(f"{name}: {what} has shape {arr.shape}, expected {shape}") from None


class PatternModel:
    """NLP assembled from variable blocks and repeated expression patterns."""

    def __init__(self, name: str = "model", workers: int = 1):
        self.name = name
        self.blocks: dict[str, VariableBlock] = {}
        self.objectives: list[Pattern] = []
        self.constraints: dict[str, ConstraintBlock] = {}
        self.workers = workers
        self.frozen = False
        self.n = 0
        self.m = 0

    # ----------------------------------------------------------- building
    def _mutable(self):
        if self.frozen:
            raise ModelError("model is frozen")

    def add_variable_block(self, name, shape, lower=-np.inf, upper=np.inf, start=0.0) -> VariableBlock:
        self._mutable()
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if not shape or any(s < 0 for s in shape):
            raise ModelError(f"block {name!r}: invalid shape {shape}")
        if name in self.blocks:
            raise ModelError(f"duplicate variable block {name!r}")
        lo = _broadcast(lower, shape, "lower", name)
        up = _broadcast(upper, shape, "upper", name)
        st = _broadcast(start, shape, "start", name)
        if np.any(lo > up):
            raise ModelError(f"block {name!r}: lower bound exceeds upper bound")
        block = VariableBlock(name, shape, lo, up, st, offset=self.n)
        self.blocks[name] = block
        self.n += block.size
        return block

    def _trace(self, fn, data, name) -> Pattern:
        data = _as_data(data)
        root = as_expr(fn(Record(data.keys())))
        tape = Tape(root, data.keys(), name)
        for ref in tape.var_refs:
            if self.blocks.get(ref.block.name) is not ref.block:
                raise ModelError(f"{name}: block {ref.block.name!r} does not belong to this model")
        return Pattern(name, tape, data)

    def add_objective(self, fn, data, name=None) -> Pattern:
        """Register ``sum_i fn(record_i)`` as an objective term."""
        self._mutable()
        pat = self._trace(fn, data, name or f"objective{len(self.objectives)}")
        self.objectives.append(pat)
        return pat

    def add_constraint(self, n_rows, *patterns, rhs=0.0, lower=0.0, upper=0.0, name=None,
                       row_field="row") -> ConstraintBlock:
        """Append ``n_rows`` constraint rows ``lower <= sum(patterns) - rhs <= upper``.

        ``patterns`` are ``(fn, data)`` pairs; each data record names its
        target row (local to this block) in ``row_field``.
        """
        self._mutable()
        name = name or f"constraint{len(self.constraints)}"
        if name in self.constraints:
            raise ModelError(f"duplicate constraint block {name!r}")
        n_rows = int(n_rows)
        block = ConstraintBlock(
            name, n_rows,
            _broadcast(rhs, (n_rows,), "rhs", name),
            _broadcast(lower, (n_rows,), "lower", name),
            _broadcast(upper, (n_rows,), "upper", name),
            offset=self.m,
        )
        if np.any(block.lower > block.upper):
            raise ModelError(f"{name}: lower row bound exceeds upper row bound")
        self.constraints[name] = block
        self.m += n_rows
        for fn, data in patterns:
            self.add_to_constraint(block, fn, data, row_field=row_field)
        return block

    def add_to_constraint(self, block, fn, data, row_field="row", name=None) -> Pattern:
        """Add one more pattern whose instances accumulate into ``block``'s rows."""
        self._mutable()
        if isinstance(block, str):
            block = self.constraints[block]
        pat = self._trace(fn, data, name or f"{block.name}[{len(block.patterns)}]")
        rows = np.asarray(pat.data.get(row_field, np.zeros(0)), dtype=np.int64) if pat.nrec else np.zeros(0, np.int64)
        if pat.nrec and row_field not in pat.data:
            raise ModelError(f"{pat.name}: data lacks the row field {row_field!r}")
        if rows.size and (rows.min() < 0 or rows.max() >= block.n_rows):
            bad = int(np.flatnonzero((rows < 0) | (rows >= block.n_rows))[0])
            raise ModelError(f"{pat.name}: record {bad} targets row {rows[bad]} outside [0, {block.n_rows})")
        pat.rows = rows + block.offset
        block.patterns.append(pat)
        return pat

    # ----------------------------------------------------------- freezing
    def freeze(self) -> "PatternModel":
        """Resolve variable indices and assign derivative slots; idempotent."""
        if self.frozen:
            return self
        jac = 0
        hess = 0
        for pat in self.all_patterns():
            self._bind(pat)
            if pat.rows is not None:
                pat.jac_offset = jac
                jac += pat.n_jac
            pat.hess_offset = hess
            hess += pat.n_hess
        self.nnz_jac = jac
        self.nnz_hess = hess
        self._jac_rows = np.empty(jac, np.int64)
        self._jac_cols = np.empty(jac, np.int64)
        self._hess_rows = np.empty(hess, np.int64)
        self._hess_cols = np.empty(hess, np.int64)
        for pat in self.all_patterns():
            gl = pat.tape.grad_locals
            if pat.rows is not None:
                sl = slice(pat.jac_offset, pat.jac_offset + pat.n_jac)
                self._jac_rows[sl] = np.repeat(pat.rows, len(gl))
                self._jac_cols[sl] = pat.gidx[:, gl].ravel()
            hp = pat.tape.hess_pairs
            if len(hp):
                gi = pat.gidx[:, hp[:, 0]]
                gj = pat.gidx[:, hp[:, 1]]
                sl = slice(pat.hess_offset, pat.hess_offset + pat.n_hess)
                self._hess_rows[sl] = np.maximum(gi, gj).ravel()
                self._hess_cols[sl] = np.minimum(gi, gj).ravel()
                alias = (gi == gj) & (hp[:, 0] != hp[:, 1])[None, :]
                pat.hess_scale = np.where(alias, 2.0, 1.0).ravel() if alias.any() else None
        self.frozen = True
        log.debug("froze %s: n=%d m=%d nnz(J)=%d nnz(H)=%d", self.name, self.n, self.m, jac, hess)
        return self

    def _bind(self, pat: Pattern):
        k = pat.nrec
        tape = pat.tape
        gidx = np.zeros((k, tape.n_locals), np.int64)
        for a, ref in enumerate(tape.var_refs):
            block = ref.block
            idx = []
            for i in ref.index:
                arr = np.broadcast_to(np.asarray(pat.data[i.field]) if hasattr(i, "field") else np.asarray(i), (k,))
                if not np.issubdtype(arr.dtype, np.integer):
                    if not np.all(arr == np.round(arr)):
                        raise ModelError(f"{pat.name}: non-integer index field for {block.name!r}")
                    arr = arr.astype(np.int64)
                idx.append(arr)
            for d, (arr, size) in enumerate(zip(idx, block.shape)):
                bad = (arr < 0) | (arr >= size)
                if np.any(bad):
                    r = int(np.flatnonzero(bad)[0])
                    raise ModelError(f"{pat.name}: record {r} indexes {block.name!r} out of range on axis {d}")
            gidx[:, a] = block.offset + np.ravel_multi_index(tuple(idx), block.shape) if k else 0
        pat.gidx = gidx
        pat.params = {f: np.asarray(v, dtype=float) for f, v in pat.data.items()
                      if np.issubdtype(np.asarray(v).dtype, np.number)}

    def all_patterns(self):
        yield from self.objectives
        for block in self.constraints.values():
            yield from block.patterns

    def _require_frozen(self):
        if not self.frozen:
            raise ModelError("model must be frozen first (call freeze())")

    # ----------------------------------------------------------- flat data
    def _concat(self, attr):
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([getattr(b, attr).ravel() for b in self.blocks.values()])

    @property
    def x_lower(self):
        return self._concat("lower")

    @property
    def x_upper(self):
        return self._concat("upper")

    @property
    def x_start(self):
        return self._concat("start")

    def _rows(self, attr):
        if not self.constraints:
            return np.zeros(0)
        return np.concatenate([getattr(b, attr) for b in self.constraints.values()])

    @property
    def rhs(self):
        return self._rows("rhs")

    @property
    def g_lower(self):
        return self._rows("lower")

    @property
    def g_upper(self):
        return self._rows("upper")

    @property
    def row_scale(self):
        """Per-row magnitude ``max(1, |rhs|, |finite bounds|)`` used for relative tolerances."""
        scale = np.maximum(1.0, np.abs(self.rhs))
        for b in (self.g_lower, self.g_upper):
            finite = np.isfinite(b)
            scale[finite] = np.maximum(scale[finite], np.abs(b[finite]))
        return scale

    # ----------------------------------------------------------- evaluation
    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ModelError(f"x has shape {x.shape}, expected ({self.n},)")
        return x

    def _map(self, fn, patterns):
        patterns = list(patterns)
        if self.workers > 1 and len(patterns) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, patterns))
        return [fn(p) for p in patterns]

    @staticmethod
    def _finite(pat, arr, what):
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            bad = ~np.isfinite(arr)
            rec = int(np.flatnonzero(bad.reshape(pat.nrec, -1).any(axis=1))[0]) if pat.nrec else 0
            raise EvaluationError(pat.name, rec, f"non-finite {what}")

    def _pattern_values(self, pat, x):
        if pat.nrec == 0:
            return np.zeros(0)
        vals, _, _ = pat.tape.forward(x, pat.params, pat.gidx, partials=False)
        out = np.broadcast_to(np.asarray(vals[-1], dtype=float), (pat.nrec,)).copy()
        self._finite(pat, out, "value")
        return out

    def evaluate_objective(self, x) -> float:
        self._require_frozen()
        x = self._check_x(x)
        parts = self._map(lambda p: self._pattern_values(p, x), self.objectives)
        return float(sum(float(np.sum(v)) for v in parts))

    def evaluate_gradient(self, x) -> np.ndarray:
        self._require_frozen()
        x = self._check_x(x)
        grad = np.zeros(self.n)

        def one(pat):
            if pat.nrec == 0 or len(pat.tape.grad_locals) == 0:
                return None
            _, d1, _ = pat.tape.forward(x, pat.params, pat.gidx)
            _, g = pat.tape.reverse(d1, 1.0, pat.nrec)
            gl = pat.tape.grad_locals
            self._finite(pat, g[:, gl], "gradient")
            return pat.gidx[:, gl].ravel(), g[:, gl].ravel()

        for res in self._map(one, self.objectives):
            if res is not None:
                grad += np.bincount(res[0], weights=res[1], minlength=self.n)
        return grad

    def evaluate_constraints(self, x) -> np.ndarray:
        """``c(x) = sum of pattern instances - rhs`` for every row."""
        self._require_frozen()
        x = self._check_x(x)
        pats = [p for b in self.constraints.values() for p in b.patterns]
        parts = self._map(lambda p: self._pattern_values(p, x), pats)
        c = -self.rhs
        for pat, v in zip(pats, parts):
            if v.size:
                c += np.bincount(pat.rows, weights=v, minlength=self.m)
        return c

    def jacobian_structure(self):
        self._require_frozen()
        return self._jac_rows.copy(), self._jac_cols.copy()

    def hessian_structure(self):
        """Lower-triangle COO of the Lagrangian Hessian (duplicates allowed)."""
        self._require_frozen()
        return self._hess_rows.copy(), self._hess_cols.copy()

    def evaluate_jacobian(self, x, out=None) -> np.ndarray:
        self._require_frozen()
        x = self._check_x(x)
        if out is None:
            out = np.empty(self.nnz_jac)
        elif out.shape != (self.nnz_jac,):
            raise ModelError("out has the wrong length for the Jacobian structure")
        pats = [p for b in self.constraints.values() for p in b.patterns]

        def one(pat):
            if pat.n_jac == 0:
                return
            _, d1, _ = pat.tape.forward(x, pat.params, pat.gidx)
            _, g = pat.tape.reverse(d1, 1.0, pat.nrec)
            vals = g[:, pat.tape.grad_locals]
            self._finite(pat, vals, "Jacobian entry")
            out[pat.jac_offset:pat.jac_offset + pat.n_jac] = vals.ravel()

        self._map(one, pats)
        return out

    def evaluate_hessian(self, x, y, obj_weight=1.0, out=None) -> np.ndarray:
        """Values of ``obj_weight * Hess f + sum_m y_m Hess c_m`` on the Hessian structure."""
        self._require_frozen()
        x = self._check_x(x)
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise ModelError(f"y has shape {y.shape}, expected ({self.m},)")
        if out is None:
            out = np.empty(self.nnz_hess)
        elif out.shape != (self.nnz_hess,):
            raise ModelError("out has the wrong length for the Hessian structure")

        def one(pat):
            if pat.n_hess == 0:
                return
            sl = slice(pat.hess_offset, pat.hess_offset + pat.n_hess)
            weight = obj_weight if pat.rows is None else y[pat.rows]
            if np.isscalar(weight) and weight == 0.0 or (not np.isscalar(weight) and not np.any(weight)):
                out[sl] = 0.0
                return
            _, d1, d2 = pat.tape.forward(x, pat.params, pat.gidx)
            adj, _ = pat.tape.reverse(d1, weight, pat.nrec)
            H = pat.tape.hessian(d1, d2, adj, pat.nrec)
            hp = pat.tape.hess_pairs
            vals = H[:, hp[:, 0], hp[:, 1]].ravel()
            if pat.hess_scale is not None:
                vals = vals * pat.hess_scale
            self._finite(pat, vals, "Hessian entry")
            out[sl] = vals

        self._map(one, self.all_patterns())
        return out

    # ----------------------------------------------------------- utilities
    def jacobian_csc(self, x):
        rows, cols = self.jacobian_structure()
        return compress_to_csc(rows, cols, self.evaluate_jacobian(x), (self.m, self.n))

    def hessian_csc(self, x, y, obj_weight=1.0):
        rows, cols = self.hessian_structure()
        return compress_to_csc(rows, cols, self.evaluate_hessian(x, y, obj_weight), (self.n, self.n),
                               symmetric=True)

    def dump_structure(self, prefix) -> None:
        """Write Jacobian and Hessian structures as matrix-market files (debugging)."""
        from ..sparse.mmio import write_matrix_market
        import scipy.sparse as sp

        self._require_frozen()
        r, c = self.jacobian_structure()
        write_matrix_market(f"{prefix}_jac.mtx", sp.coo_matrix((np.ones(r.size), (r, c)), shape=(self.m, self.n)))
        r, c = self.hessian_structure()
        write_matrix_market(f"{prefix}_hess.mtx", sp.coo_matrix((np.ones(r.size), (r, c)), shape=(self.n, self.n)))

    def summary(self) -> dict:
        return {
            "n": self.n, "m": self.m,
            "blocks": {k: list(b.shape) for k, b in self.blocks.items()},
            "constraints": {k: b.n_rows for k, b in self.constraints.items()},
            "nnz_jac": getattr(self, "nnz_jac", None), "nnz_hess": getattr(self, "nnz_hess", None),
        }
