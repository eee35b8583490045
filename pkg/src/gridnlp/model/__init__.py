"""Pattern-based NLP modeling with taped reverse-mode derivatives."""

from ..sparse.csc import compress_to_csc
from .expr import Expr, Record, cos, exp, log, sin, sqrt
from .model import ConstraintBlock, ModelError, Pattern, PatternModel, VariableBlock
from .tape import EvaluationError, Tape

__all__ = [
    "Expr", "Record", "cos", "exp", "log", "sin", "sqrt", "ConstraintBlock", "ModelError",
    "Pattern", "PatternModel", "VariableBlock", "EvaluationError", "Tape", "compress_to_csc",
]
