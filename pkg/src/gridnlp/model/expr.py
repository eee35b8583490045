"""Expression trees for pattern functions.

A pattern is an ordinary Python callable that receives a symbolic record and
returns an :class:`Expr`.  Attribute access on the record yields data-field
references; indexing a variable block with fields yields variable references.
The callable is traced once; the resulting tree is compiled to a tape and
evaluated over the whole data array at once.
"""

from __future__ import annotations

import math
import numbers

import numpy as np


class Expr:
    __slots__ = ()

    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __pow__(self, other):
        return _binary("pow", self, other)

    def __rpow__(self, other):
        return _binary("pow", other, self)

    def __neg__(self):
        if isinstance(self, Const):
            return Const(-self.value)
        return Op("neg", (self,))

    def __pos__(self):
        return self

    def __bool__(self):
        raise TypeError("symbolic expressions have no truth value; branch on data, not on Expr")


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    def __repr__(self):
        return repr(self.value)


class Param(Expr):
    """Reference to a field of the pattern's data record."""

    __slots__ = ("field",)

    def __init__(self, field: str):
        self.field = field

    def __repr__(self):
        return f"r.{self.field}"

    def __index__(self):
        raise TypeError(f"data field {self.field!r} cannot be used as a Python index")


class VarRef(Expr):
    """Reference to one entry of a variable block, indexed by data fields or ints."""

    __slots__ = ("block", "index")

    def __init__(self, block, index: tuple):
        self.block = block
        self.index = index

    @property
    def key(self):
        return (self.block.name, tuple(i.field if isinstance(i, Param) else int(i) for i in self.index))

    def __repr__(self):
        return f"{self.block.name}[{', '.join(map(repr, self.index))}]"


class Op(Expr):
    __slots__ = ("op", "args")

    def __init__(self, op: str, args: tuple):
        self.op = op
        self.args = args

    def __repr__(self):
        if len(self.args) == 1:
            return f"{self.op}({self.args[0]!r})"
        return f"({self.args[0]!r} {self.op} {self.args[1]!r})"


UNARY = ("neg", "sin", "cos", "sqrt", "log", "exp")
BINARY = ("add", "sub", "mul", "div", "pow")

_FOLD = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "pow": lambda a, b: a ** b,
}


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (numbers.Real, np.floating, np.integer)) and not isinstance(value, bool):
        v = float(value)
        if not math.isfinite(v):
            raise ValueError("constants in expressions must be finite")
        return Const(v)
    raise TypeError(f"cannot use {type(value).__name__} in an expression")


def _binary(op, a, b):
    a, b = as_expr(a), as_expr(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(_FOLD[op](a.value, b.value))
    return Op(op, (a, b))


def _unary(op, a):
    a = as_expr(a)
    if isinstance(a, Const):
        fn = {"sin": math.sin, "cos": math.cos, "sqrt": math.sqrt, "log": math.log, "exp": math.exp}[op]
        return Const(fn(a.value))
    return Op(op, (a,))


def sin(a):
    return _unary("sin", a)


def cos(a):
    return _unary("cos", a)


def sqrt(a):
    return _unary("sqrt", a)


def log(a):
    return _unary("log", a)


def exp(a):
    return _unary("exp", a)


class Record:
    """Symbolic stand-in for one data record while a pattern is traced."""

    __slots__ = ("_fields",)

    def __init__(self, fields):
        object.__setattr__(self, "_fields", frozenset(fields))

    def __getattr__(self, name):
        if name.startswith("__"):
            raise AttributeError(name)
        if name not in self._fields:
            raise AttributeError(f"data record has no field {name!r}; fields are {sorted(self._fields)}")
        return Param(name)

    def __getitem__(self, name):
        return self.__getattr__(name)


def walk(root: Expr):
    """Nodes of the DAG in topological order (children first), shared nodes once."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if id(node) in seen:
            continue
        if done:
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        if isinstance(node, Op):
            for child in reversed(node.args):
                if id(child) not in seen:
                    stack.append((child, False))
    return order
