"""Pattern tapes: trace once, evaluate and differentiate over a data array.

Every node value on the tape is either a Python float (constants and
variable-free subexpressions of constants) or an array with one entry per
data record, so a single pass through the tape evaluates every instance of
the pattern.  First derivatives use reverse mode; second derivatives use
forward-over-reverse, one tangent direction per local variable.
"""

from __future__ import annotations

import numpy as np

from .expr import BINARY, UNARY, Const, Expr, Op, Param, VarRef, walk

CONST, PARAM, VAR, OP = 0, 1, 2, 3


class EvaluationError(ArithmeticError):
    """Non-finite or out-of-domain evaluation of a pattern instance."""

    def __init__(self, pattern: str, record: int, what: str):
        super().__init__(f"pattern {pattern!r}, record {record}: {what}")
        self.pattern = pattern
        self.record = record
        self.what = what


def _first_bad(mask) -> int:
    mask = np.atleast_1d(mask)
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else 0


class Tape:
    """Flattened expression DAG with per-node dependency and curvature sets."""

    def __init__(self, root: Expr, fields, name: str = "pattern"):
        self.name = name
        nodes = walk(root)
        position = {id(node): i for i, node in enumerate(nodes)}
        self.kind = []
        self.payload = []
        self.children = []
        self.var_refs = []          # local index -> VarRef
        local_of = {}
        for node in nodes:
            if isinstance(node, Const):
                self.kind.append(CONST)
                self.payload.append(node.value)
                self.children.append(())
            elif isinstance(node, Param):
                if node.field not in fields:
                    raise KeyError(f"{name}: data has no field {node.field!r}")
                self.kind.append(PARAM)
                self.payload.append(node.field)
                self.children.append(())
            elif isinstance(node, VarRef):
                for i in node.index:
                    if isinstance(i, Param) and i.field not in fields:
                        raise KeyError(f"{name}: data has no field {i.field!r}")
                key = node.key
                if key not in local_of:
                    local_of[key] = len(self.var_refs)
                    self.var_refs.append(node)
                self.kind.append(VAR)
                self.payload.append(local_of[key])
                self.children.append(())
            elif isinstance(node, Op):
                if node.op not in UNARY and node.op not in BINARY:
                    raise ValueError(f"{name}: unsupported operation {node.op!r}")
                self.kind.append(OP)
                self.payload.append(node.op)
                self.children.append(tuple(position[id(c)] for c in node.args))
            else:
                raise TypeError(f"{name}: unexpected node {node!r}")
        self.n_nodes = len(nodes)
        self.n_locals = len(self.var_refs)
        self._analyze()

    def _analyze(self):
        deps, pairs = [], []
        for i in range(self.n_nodes):
            kind = self.kind[i]
            if kind == VAR:
                deps.append(frozenset([self.payload[i]]))
                pairs.append(frozenset())
                continue
            if kind != OP:
                deps.append(frozenset())
                pairs.append(frozenset())
                continue
            op, ch = self.payload[i], self.children[i]
            d = frozenset().union(*(deps[c] for c in ch))
            h = set().union(*(pairs[c] for c in ch))
            if op in ("sin", "cos", "sqrt", "log", "exp"):
                h |= _outer(deps[ch[0]], deps[ch[0]])
            elif op == "mul":
                h |= _outer(deps[ch[0]], deps[ch[1]])
            elif op == "div":
                h |= _outer(deps[ch[0]], deps[ch[1]]) | _outer(deps[ch[1]], deps[ch[1]])
            elif op == "pow":
                base, expo = ch
                if deps[expo]:
                    h |= _outer(d, d)
                elif not (self.kind[expo] == CONST and self.payload[expo] in (0.0, 1.0)):
                    h |= _outer(deps[base], deps[base])
            deps.append(d)
            pairs.append(frozenset(h))
        self.deps = deps
        root = self.n_nodes - 1
        self.grad_locals = np.array(sorted(deps[root]), dtype=np.int64)
        self.hess_pairs = np.array(sorted(pairs[root]), dtype=np.int64).reshape(-1, 2)
        self.hess_dirs = sorted(set(self.hess_pairs[:, 1].tolist()))

    # ------------------------------------------------------------------ passes
    def forward(self, x, params, gidx, partials=True):
        """Values (and local partial derivatives) of every node.

        ``params`` maps field names to float arrays, ``gidx`` is the
        ``(records, locals)`` array of global variable indices.
        """
        n = self.n_nodes
        vals = [None] * n
        d1 = [None] * n
        d2 = [None] * n
        for i in range(n):
            kind = self.kind[i]
            if kind == CONST:
                vals[i] = self.payload[i]
            elif kind == PARAM:
                vals[i] = params[self.payload[i]]
            elif kind == VAR:
                vals[i] = x[gidx[:, self.payload[i]]]
            else:
                self._op(i, vals, d1, d2, partials)
        return vals, d1, d2

    def _op(self, i, vals, d1, d2, partials):
        op = self.payload[i]
        ch = self.children[i]
        a = vals[ch[0]]
        with np.errstate(all="ignore"):
            if op == "add":
                vals[i] = a + vals[ch[1]]
                d1[i] = (1.0, 1.0)
            elif op == "sub":
                vals[i] = a - vals[ch[1]]
                d1[i] = (1.0, -1.0)
            elif op == "neg":
                vals[i] = -a
                d1[i] = (-1.0,)
            elif op == "mul":
                b = vals[ch[1]]
                vals[i] = a * b
                d1[i] = (b, a)
                d2[i] = (0.0, 1.0, 0.0)
            elif op == "div":
                b = vals[ch[1]]
                zero = np.asarray(b) == 0.0
                if np.any(zero):
                    raise EvaluationError(self.name, _first_bad(zero), "division by zero")
                inv = 1.0 / b
                vals[i] = a * inv
                if partials:
                    inv2 = inv * inv
                    d1[i] = (inv, -a * inv2)
                    d2[i] = (0.0, -inv2, 2.0 * a * inv2 * inv)
            elif op == "pow":
                self._pow(i, a, vals[ch[1]], vals, d1, d2, partials)
            elif op == "sin":
                s = np.sin(a)
                vals[i] = s
                if partials:
                    d1[i] = (np.cos(a),)
                    d2[i] = (-s,)
            elif op == "cos":
                c = np.cos(a)
                vals[i] = c
                if partials:
                    d1[i] = (-np.sin(a),)
                    d2[i] = (-c,)
            elif op == "exp":
                e = np.exp(a)
                vals[i] = e
                d1[i] = (e,)
                d2[i] = (e,)
            elif op == "log":
                bad = np.asarray(a) <= 0.0
                if np.any(bad):
                    raise EvaluationError(self.name, _first_bad(bad), "log of a non-positive value")
                vals[i] = np.log(a)
                if partials:
                    inv = 1.0 / a
                    d1[i] = (inv,)
                    d2[i] = (-inv * inv,)
            elif op == "sqrt":
                bad = np.asarray(a) < 0.0
                if partials:
                    bad = bad | (np.asarray(a) == 0.0)
                if np.any(bad):
                    raise EvaluationError(self.name, _first_bad(bad), "sqrt outside its differentiable domain")
                r = np.sqrt(a)
                vals[i] = r
                if partials:
                    d1[i] = (0.5 / r,)
                    d2[i] = (-0.25 / (r * a),)

    def _pow(self, i, a, b, vals, d1, d2, partials):
        ch = self.children[i]
        if not self.deps[ch[1]]:
            # exponent independent of the variables
            if self.kind[ch[1]] == CONST and self.payload[ch[1]] == 2.0:
                vals[i] = a * a
                d1[i] = (2.0 * a, 0.0)
                d2[i] = (2.0, 0.0, 0.0)
                return
            bad = (np.asarray(a) < 0.0) & (np.asarray(b) != np.round(b))
            if np.any(bad):
                raise EvaluationError(self.name, _first_bad(bad), "negative base with fractional exponent")
            vals[i] = a ** b
            if partials:
                d1[i] = (b * a ** (b - 1.0), 0.0)
                d2[i] = (b * (b - 1.0) * a ** (b - 2.0), 0.0, 0.0)
            return
        bad = np.asarray(a) <= 0.0
        if np.any(bad):
            raise EvaluationError(self.name, _first_bad(bad), "variable exponent needs a positive base")
        v = a ** b
        la = np.log(a)
        vals[i] = v
        if partials:
            d1[i] = (b * a ** (b - 1.0), v * la)
            d2[i] = (b * (b - 1.0) * a ** (b - 2.0), a ** (b - 1.0) * (1.0 + b * la), v * la * la)

    def reverse(self, d1, weight, nrec):
        """Adjoints of every node for output seed ``weight``; returns (adj, grad)."""
        n = self.n_nodes
        adj = [0.0] * n
        adj[n - 1] = weight
        grad = np.zeros((nrec, self.n_locals))
        for i in range(n - 1, -1, -1):
            if not self.deps[i]:
                continue
            ai = adj[i]
            kind = self.kind[i]
            if kind == VAR:
                grad[:, self.payload[i]] += ai
            elif kind == OP:
                for c, dc in zip(self.children[i], d1[i]):
                    if self.deps[c]:
                        adj[c] = adj[c] + ai * dc
        return adj, grad

    def hessian(self, d1, d2, adj, nrec):
        """Dense local Hessians (records x locals x locals) of the weighted output."""
        n = self.n_nodes
        H = np.zeros((nrec, self.n_locals, self.n_locals))
        for direction in self.hess_dirs:
            tan = [0.0] * n
            for i in range(n):
                if direction not in self.deps[i]:
                    continue
                kind = self.kind[i]
                if kind == VAR:
                    tan[i] = 1.0 if self.payload[i] == direction else 0.0
                elif kind == OP:
                    t = 0.0
                    for c, dc in zip(self.children[i], d1[i]):
                        if direction in self.deps[c]:
                            t = t + dc * tan[c]
                    tan[i] = t
            adot = [0.0] * n
            for i in range(n - 1, -1, -1):
                if not self.deps[i]:
                    continue
                kind = self.kind[i]
                if kind == VAR:
                    H[:, self.payload[i], direction] += adot[i]
                    continue
                if kind != OP:
                    continue
                ch = self.children[i]
                dd = d2[i]
                for j, c in enumerate(ch):
                    if not self.deps[c]:
                        continue
                    contrib = adot[i] * d1[i][j]
                    if dd is not None:
                        curv = _second(dd, j, ch, tan)
                        if curv is not None:
                            contrib = contrib + adj[i] * curv
                    adot[c] = adot[c] + contrib
        return H


def _second(dd, j, ch, tan):
    if len(ch) == 1:
        return dd[0] * tan[ch[0]] if not _is_zero(tan[ch[0]]) else None
    haa, hab, hbb = dd
    ta, tb = tan[ch[0]], tan[ch[1]]
    if j == 0:
        terms = (haa, ta), (hab, tb)
    else:
        terms = (hab, ta), (hbb, tb)
    out = None
    for h, t in terms:
        if _is_zero(h) or _is_zero(t):
            continue
        out = h * t if out is None else out + h * t
    return out


def _is_zero(v) -> bool:
    return isinstance(v, float) and v == 0.0


def _outer(a, b):
    return {(max(i, j), min(i, j)) for i in a for j in b}
