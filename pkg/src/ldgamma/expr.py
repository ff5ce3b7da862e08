"""Closed expression grammar for speeds, functionals and maps in config files.

Allowed: numeric literals, declared variables, ``pi``, ``+ - * / ** ^``,
unary minus and the functions ``log sqrt exp sin cos abs step min max``.
``log n`` and ``sqrt n`` without parentheses are accepted. Evaluation is
vectorized over numpy arrays in extended-real arithmetic (``log 0 = −inf``,
``1/0 = inf``); a NaN result is an error.
"""

from __future__ import annotations

import ast
import math
import re
from typing import Iterable

import numpy as np


class ExprError(ValueError):
    pass


def _step(v):
    """Heaviside step, 1 on ``[0, ∞)``."""
    return np.where(np.asarray(v) >= 0, 1.0, 0.0)


FUNCTIONS = {
    "log": np.log,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "step": _step,
    "min": np.minimum,
    "max": np.maximum,
}
CONSTANTS = {"pi": math.pi, "inf": math.inf}

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.true_divide, ast.Pow: np.power}
_BARE_CALL = re.compile(r"\b(log|sqrt|exp)\s+([A-Za-z_]\w*|\d+(?:\.\d*)?)")


class Expression:
    """A parsed expression over a fixed set of variable names."""

    def __init__(self, source: str, variables: Iterable[str] = ("n",)):
        self.source = source.strip()
        self.variables = tuple(variables)
        text = _BARE_CALL.sub(r"\1(\2)", self.source.replace("^", "**"))
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ExprError(f"cannot parse expression {self.source!r}") from exc
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node) -> None:
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExprError(f"literal {node.value!r} is not a number")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in CONSTANTS:
                raise ExprError(f"unknown name {node.id!r}; allowed: {', '.join(self.variables + tuple(CONSTANTS))}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExprError(f"operator {type(node.op).__name__} is not allowed")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExprError("only unary + and - are allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                raise ExprError(f"call {ast.unparse(node.func)!r} is not allowed")
            arity = 2 if node.func.id in ("min", "max") else 1
            if len(node.args) != arity:
                raise ExprError(f"{node.func.id} takes {arity} argument(s)")
            for a in node.args:
                self._check(a)
        else:
            raise ExprError(f"construct {type(node).__name__} is not allowed")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else CONSTANTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        return FUNCTIONS[node.func.id](*(self._eval(a, env) for a in node.args))

    def __call__(self, **values):
        missing = [v for v in self.variables if v not in values]
        if missing:
            raise ExprError(f"missing values for {', '.join(missing)}")
        env = {k: (np.asarray(v, dtype=float) if not np.isscalar(v) else float(v)) for k, v in values.items()}
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = self._eval(self._tree, env)
        if np.any(np.isnan(out)):
            raise ExprError(f"{self.source!r} is undefined (NaN) at the requested values")
        return float(out) if np.ndim(out) == 0 else np.asarray(out, dtype=float)

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"
