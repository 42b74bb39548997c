"""Whitelisted analytic expressions in the coordinates ``x1``, ``x2``.

Expressions are parsed with :mod:`ast` and translated node by node into
sympy, so nothing from the input string is ever evaluated by Python.
"""

from __future__ import annotations

import ast
from functools import lru_cache

import numpy as np
import sympy as sp

X1, X2 = sp.symbols("x1 x2", real=True)

_NAMES = {"x1": X1, "x2": X2, "x": X1, "y": X2, "pi": sp.pi, "e": sp.E}
_FUNCS = {
    "sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "exp": sp.exp, "log": sp.log,
    "sqrt": sp.sqrt, "tanh": sp.tanh, "sinh": sp.sinh, "cosh": sp.cosh,
    "abs": sp.Abs, "min": sp.Min, "max": sp.Max,
}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a ** b,
}


class ExpressionError(ValueError):
    pass


def _convert(node):
    if isinstance(node, ast.Expression):
        return _convert(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return sp.Float(node.value) if isinstance(node.value, float) else sp.Integer(node.value)
    if isinstance(node, ast.Name):
        if node.id not in _NAMES:
            raise ExpressionError(f"unknown name {node.id!r}")
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_convert(node.left), _convert(node.right))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _convert(node.operand)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        if node.func.id not in _FUNCS:
            raise ExpressionError(f"function {node.func.id!r} is not allowed")
        return _FUNCS[node.func.id](*[_convert(a) for a in node.args])
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


@lru_cache(maxsize=128)
def parse(text: str) -> sp.Expr:
    """Parse ``text`` into a sympy expression in ``x1, x2``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None
    return sp.sympify(_convert(tree))


def to_numpy(expr: sp.Expr):
    """Vectorized callable ``f(x1, x2)`` returning arrays of the broadcast shape."""
    fn = sp.lambdify((X1, X2), expr, modules="numpy")

    def call(x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        return np.broadcast_to(np.asarray(fn(x1, x2), dtype=float), x1.shape).copy()

    return call
