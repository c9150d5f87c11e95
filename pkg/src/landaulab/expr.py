"""Small arithmetic expression language for field definitions.

Configs specify fields (magnetic scalar b, potential V, metric entries) as
closed-form strings such as ``"1 + 0.3*cos(2*pi*x1/L1)*cos(2*pi*x2/L2)"``.
Expressions are parsed once into an AST and evaluated with numpy over whole
coordinate grids, so evaluation is vectorized and bitwise deterministic.

Grammar (usual precedence, ``^`` is right-associative power; ``**`` is an
alias)::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names: coordinates ``x1..xd``, the squared radius ``r2``, domain lengths
``L1..Ld``, constants ``pi``, ``e``; functions ``sin cos exp sqrt abs``.
"""

import math
import re

import numpy as np

from .errors import ExpressionError

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_CONSTANTS = {"pi": math.pi, "e": math.e}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:].strip()
            if not rest:
                break
            raise ExpressionError(f"unexpected character {rest[0]!r} in {text!r}")
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num"))))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name")))
        else:
            op = m.group("op")
            tokens.append(("op", "^" if op == "**" else op))
        pos = m.end()
    tokens.append(("end", None))
    return tokens


class _Num:
    __slots__ = ["value"]

    def __init__(self, value):
        self.value = value

    def eval(self, env):
        return self.value

    def names(self):
        return set()


class _Var:
    __slots__ = ["name"]

    def __init__(self, name):
        self.name = name

    def eval(self, env):
        return env[self.name]

    def names(self):
        return {self.name}


class _Call:
    __slots__ = ["fn", "name", "arg"]

    def __init__(self, name, arg):
        self.fn = _FUNCTIONS[name]
        self.name = name
        self.arg = arg

    def eval(self, env):
        return self.fn(self.arg.eval(env))

    def names(self):
        return self.arg.names()


class _BinOp:
    __slots__ = ["op", "lhs", "rhs"]

    _OPS = {
        "+": np.add,
        "-": np.subtract,
        "*": np.multiply,
        "/": np.divide,
        "^": np.power,
    }

    def __init__(self, op, lhs, rhs):
        self.op = op
        self.lhs = lhs
        self.rhs = rhs

    def eval(self, env):
        return self._OPS[self.op](self.lhs.eval(env), self.rhs.eval(env))

    def names(self):
        return self.lhs.names() | self.rhs.names()


class _Neg:
    __slots__ = ["arg"]

    def __init__(self, arg):
        self.arg = arg

    def eval(self, env):
        return np.negative(self.arg.eval(env))

    def names(self):
        return self.arg.names()


class _Parser:
    def __init__(self, tokens, text):
        self.tokens = tokens
        self.text = text
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val = self.next()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r} in {self.text!r}")

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError(f"trailing input in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.next()[1]
            node = _BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.next()[1]
            node = _BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.next()
            return _Neg(self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek() == ("op", "^"):
            self.next()
            node = _BinOp("^", node, self.unary())
        return node

    def atom(self):
        kind, val = self.next()
        if kind == "num":
            return _Num(val)
        if kind == "name":
            if self.peek() == ("op", "("):
                if val not in _FUNCTIONS:
                    raise ExpressionError(f"unknown function {val!r} in {self.text!r}")
                self.next()
                arg = self.expr()
                self.expect_op(")")
                return _Call(val, arg)
            if val in _CONSTANTS:
                return _Num(_CONSTANTS[val])
            return _Var(val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError(f"unexpected token in {self.text!r}")


class FieldExpression:
    """A parsed expression, callable on coordinate arrays.

    ``expr(x1=..., x2=...)`` broadcasts over the given arrays.  Domain
    lengths and ``r2`` are injected by the caller (see ``model.sample_env``).
    """

    def __init__(self, text):
        self.text = str(text)
        self._ast = _Parser(_tokenize(self.text), self.text).parse()
        self.variables = sorted(self._ast.names())

    def __call__(self, **env):
        try:
            value = self._ast.eval(env)
        except KeyError as exc:
            raise ExpressionError(
                f"unknown name {exc.args[0]!r} in {self.text!r}"
            ) from None
        return value

    def eval_env(self, env):
        try:
            return self._ast.eval(env)
        except KeyError as exc:
            raise ExpressionError(
                f"unknown name {exc.args[0]!r} in {self.text!r}"
            ) from None

    def __repr__(self):
        return f"FieldExpression({self.text!r})"


def parse(text):
    return FieldExpression(text)
