"""Tiny arithmetic expression language for scalar fields f(x, y, t).

Grammar (Python expression syntax, whitelisted):

    expr    := term | expr "+" term | expr "-" term
    term    := power | term "*" power | term "/" power
    power   := unary | unary "**" power
    unary   := atom | "-" unary | "+" unary
    atom    := NUMBER | "pi" | "x" | "y" | "t" | "(" expr ")" | call
    call    := FUNC "(" expr {"," expr} ")"
    FUNC    := "exp" | "log" | "sin" | "cos" | "sqrt" | "abs"
             | "min" | "max" | "dist_boundary"

``min``/``max`` take two or more arguments; ``dist_boundary(x_expr, y_expr)``
is the distance from the point to the rectangular domain boundary and needs a
``domain=(x0, x1, y0, y1)`` handed to evaluation.  Everything evaluates
vectorized over NumPy arrays.

Expressions support exact symbolic differentiation with respect to x, y or t
(``FieldExpr.diff``); the kinked primitives (abs/min/max/dist_boundary) get
their almost-everywhere derivative via branch selection.
"""

from __future__ import annotations

import ast
import math
from typing import Callable, Sequence

import numpy as np

__all__ = ["ExpressionError", "FieldExpr"]


class ExpressionError(ValueError):
    """Raised for text outside the field-expression grammar."""


# ---------------------------------------------------------------------------
# Node classes
# ---------------------------------------------------------------------------


class _Node:
    def ev(self, env: dict) -> np.ndarray | float:
        raise NotImplementedError

    def diff(self, var: str) -> "_Node":
        raise NotImplementedError

    def text(self) -> str:
        raise NotImplementedError


class _Const(_Node):
    def __init__(self, value: float):
        self.value = float(value)

    def ev(self, env):
        return self.value

    def diff(self, var):
        return _Const(0.0)

    def text(self):
        return repr(self.value)


class _Var(_Node):
    def __init__(self, name: str):
        self.name = name

    def ev(self, env):
        return env[self.name]

    def diff(self, var):
        return _Const(1.0 if var == self.name else 0.0)

    def text(self):
        return self.name


class _Bin(_Node):
    op = "?"

    def __init__(self, left: _Node, right: _Node):
        self.left = left
        self.right = right

    def text(self):
        return f"({self.left.text()} {self.op} {self.right.text()})"


class _Add(_Bin):
    op = "+"

    def ev(self, env):
        return self.left.ev(env) + self.right.ev(env)

    def diff(self, var):
        return _Add(self.left.diff(var), self.right.diff(var))


class _Sub(_Bin):
    op = "-"

    def ev(self, env):
        return self.left.ev(env) - self.right.ev(env)

    def diff(self, var):
        return _Sub(self.left.diff(var), self.right.diff(var))


class _Mul(_Bin):
    op = "*"

    def ev(self, env):
        return self.left.ev(env) * self.right.ev(env)

    def diff(self, var):
        return _Add(
            _Mul(self.left.diff(var), self.right),
            _Mul(self.left, self.right.diff(var)),
        )


class _Div(_Bin):
    op = "/"

    def ev(self, env):
        return self.left.ev(env) / self.right.ev(env)

    def diff(self, var):
        # (u/v)' = u'/v - u v'/v^2
        return _Sub(
            _Div(self.left.diff(var), self.right),
            _Div(_Mul(self.left, self.right.diff(var)), _Mul(self.right, self.right)),
        )


class _Pow(_Bin):
    op = "**"

    def ev(self, env):
        return self.left.ev(env) ** self.right.ev(env)

    def diff(self, var):
        u, v = self.left, self.right
        if isinstance(v, _Const):
            # c * u**(c-1) * u'
            return _Mul(
                _Mul(_Const(v.value), _Pow(u, _Const(v.value - 1.0))),
                u.diff(var),
            )
        # u**v * (v' log u + v u'/u), valid for u > 0
        return _Mul(
            _Pow(u, v),
            _Add(
                _Mul(v.diff(var), _Call("log", [u])),
                _Div(_Mul(v, u.diff(var)), u),
            ),
        )


class _Neg(_Node):
    def __init__(self, arg: _Node):
        self.arg = arg

    def ev(self, env):
        return -self.arg.ev(env)

    def diff(self, var):
        return _Neg(self.arg.diff(var))

    def text(self):
        return f"(-{self.arg.text()})"


_UNARY_FNS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


class _Call(_Node):
    def __init__(self, fn: str, args: Sequence[_Node]):
        self.fn = fn
        self.args = list(args)

    def ev(self, env):
        vals = [a.ev(env) for a in self.args]
        if self.fn in _UNARY_FNS:
            return _UNARY_FNS[self.fn](vals[0])
        if self.fn == "min":
            out = vals[0]
            for v in vals[1:]:
                out = np.minimum(out, v)
            return out
        if self.fn == "max":
            out = vals[0]
            for v in vals[1:]:
                out = np.maximum(out, v)
            return out
        raise ExpressionError(f"unknown function {self.fn!r}")

    def diff(self, var):
        a = self.args[0]
        da = a.diff(var)
        if self.fn == "exp":
            return _Mul(_Call("exp", [a]), da)
        if self.fn == "log":
            return _Div(da, a)
        if self.fn == "sin":
            return _Mul(_Call("cos", [a]), da)
        if self.fn == "cos":
            return _Neg(_Mul(_Call("sin", [a]), da))
        if self.fn == "sqrt":
            return _Div(da, _Mul(_Const(2.0), _Call("sqrt", [a])))
        if self.fn == "abs":
            # a.e. derivative: sign(a) * a' written as (a/abs(a)) * a'
            return _Mul(_Div(a, _Call("abs", [a])), da)
        if self.fn in ("min", "max"):
            # fold right: min(a, b, c) == min(a, min(b, c))
            rest = self.args[1] if len(self.args) == 2 else _Call(self.fn, self.args[1:])
            return _Select(a, rest, self.fn == "min", da, rest.diff(var))
        raise ExpressionError(f"cannot differentiate function {self.fn!r}")

    def text(self):
        return f"{self.fn}({', '.join(a.text() for a in self.args)})"


class _Select(_Node):
    """Branch derivative of min/max: pick left branch where it attains."""

    def __init__(self, a: _Node, b: _Node, is_min: bool, da: _Node, db: _Node):
        self.a, self.b, self.is_min, self.da, self.db = a, b, is_min, da, db

    def ev(self, env):
        av = self.a.ev(env)
        bv = self.b.ev(env)
        cond = av <= bv if self.is_min else av >= bv
        return np.where(cond, self.da.ev(env), self.db.ev(env))

    def diff(self, var):
        return _Select(self.a, self.b, self.is_min, self.da.diff(var), self.db.diff(var))

    def text(self):
        fn = "min" if self.is_min else "max"
        # Piecewise derivative has no closed grammar form; encode with the
        # identity select(c) = (da + db + sign * abs-split) is unwieldy, so we
        # render an equivalent arithmetic form: da where a chosen else db.
        a, b, da, db = self.a.text(), self.b.text(), self.da.text(), self.db.text()
        if self.is_min:
            step = f"((1.0 + ({b} - {a}) / abs({b} - {a})) / 2.0)"
        else:
            step = f"((1.0 + ({a} - {b}) / abs({a} - {b})) / 2.0)"
        return f"(({da}) * {step} + ({db}) * (1.0 - {step}))"


class _DistBoundary(_Node):
    def __init__(self, ax: _Node, ay: _Node):
        self.ax = ax
        self.ay = ay

    def _parts(self, env):
        dom = env.get("domain")
        if dom is None:
            raise ExpressionError("dist_boundary needs a domain=(x0, x1, y0, y1)")
        x0, x1, y0, y1 = dom
        px = self.ax.ev(env)
        py = self.ay.ev(env)
        return [px - x0, x1 - px, py - y0, y1 - py]

    def ev(self, env):
        p = self._parts(env)
        return np.minimum(np.minimum(p[0], p[1]), np.minimum(p[2], p[3]))

    def diff(self, var):
        return _DistBoundaryDeriv(self, var)

    def text(self):
        return f"dist_boundary({self.ax.text()}, {self.ay.text()})"


class _DistBoundaryDeriv(_Node):
    def __init__(self, parent: _DistBoundary, var: str):
        self.parent = parent
        self.var = var

    def ev(self, env):
        p = self.parent._parts(env)
        dax = self.parent.ax.diff(self.var).ev(env)
        day = self.parent.ay.diff(self.var).ev(env)
        # chain rule through the active (arg-min) wall
        grads = [dax, -np.asarray(dax), day, -np.asarray(day)]
        stacked = np.stack([np.broadcast_to(v, np.shape(p[0])) for v in p])
        which = np.argmin(stacked, axis=0)
        gs = np.stack([np.broadcast_to(np.asarray(g, dtype=float), np.shape(p[0])) for g in grads])
        return np.take_along_axis(gs, which[None, ...], axis=0)[0]

    def diff(self, var):
        # second derivative of a piecewise-linear function is 0 a.e.
        return _Const(0.0)

    def text(self):
        raise ExpressionError("derivative of dist_boundary has no grammar form")


# ---------------------------------------------------------------------------
# Parsing (Python ast -> node tree, whitelisted)
# ---------------------------------------------------------------------------

_VARS = {"x", "y", "t"}
_FUNCS = set(_UNARY_FNS) | {"min", "max", "dist_boundary"}


def _convert(node: ast.AST) -> _Node:
    if isinstance(node, ast.Expression):
        return _convert(node.body)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float)):
            return _Const(float(node.value))
        raise ExpressionError(f"literal {node.value!r} is not a number")
    if isinstance(node, ast.Name):
        if node.id in _VARS:
            return _Var(node.id)
        if node.id == "pi":
            return _Const(math.pi)
        raise ExpressionError(f"unknown name {node.id!r} (allowed: x, y, t, pi)")
    if isinstance(node, ast.BinOp):
        left = _convert(node.left)
        right = _convert(node.right)
        if isinstance(node.op, ast.Add):
            return _Add(left, right)
        if isinstance(node.op, ast.Sub):
            return _Sub(left, right)
        if isinstance(node.op, ast.Mult):
            return _Mul(left, right)
        if isinstance(node.op, ast.Div):
            return _Div(left, right)
        if isinstance(node.op, ast.Pow):
            return _Pow(left, right)
        raise ExpressionError(f"operator {type(node.op).__name__} not in grammar")
    if isinstance(node, ast.UnaryOp):
        if isinstance(node.op, ast.USub):
            return _Neg(_convert(node.operand))
        if isinstance(node.op, ast.UAdd):
            return _convert(node.operand)
        raise ExpressionError(f"operator {type(node.op).__name__} not in grammar")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError("only exp/log/sin/cos/sqrt/abs/min/max/dist_boundary calls allowed")
        if node.keywords:
            raise ExpressionError("keyword arguments not in grammar")
        args = [_convert(a) for a in node.args]
        name = node.func.id
        if name in _UNARY_FNS and len(args) != 1:
            raise ExpressionError(f"{name}() takes exactly one argument")
        if name in ("min", "max") and len(args) < 2:
            raise ExpressionError(f"{name}() needs at least two arguments")
        if name == "dist_boundary":
            if len(args) != 2:
                raise ExpressionError("dist_boundary() takes exactly two arguments")
            return _DistBoundary(args[0], args[1])
        return _Call(name, args)
    raise ExpressionError(f"syntax {type(node).__name__} not in grammar")


class FieldExpr:
    """A parsed scalar field f(x, y, t) with exact symbolic derivatives."""

    def __init__(self, root: _Node, source: str):
        self._root = root
        self.source = source

    @classmethod
    def parse(cls, text: str) -> "FieldExpr":
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as err:
            raise ExpressionError(f"cannot parse {text!r}: {err.msg}") from err
        return cls(_convert(tree), text)

    @classmethod
    def constant(cls, value: float) -> "FieldExpr":
        return cls(_Const(value), repr(float(value)))

    def __call__(self, x, y, t: float | np.ndarray = 0.0, domain=None):
        env = {"x": x, "y": y, "t": t, "domain": domain}
        out = self._root.ev(env)
        return np.asarray(out, dtype=np.float64) if np.ndim(out) else float(out)

    def diff(self, var: str) -> "FieldExpr":
        if var not in _VARS:
            raise ExpressionError(f"cannot differentiate with respect to {var!r}")
        return FieldExpr(self._root.diff(var), f"d/d{var}({self.source})")

    def gradient(self) -> tuple["FieldExpr", "FieldExpr"]:
        return self.diff("x"), self.diff("y")

    def text(self) -> str:
        return self._root.text()

    def __repr__(self) -> str:
        return f"FieldExpr({self.source!r})"
