"""Kernel expressions over the torus variables ``u`` and ``v``.

Grammar (whitespace is ignored)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := number | 'u' | 'v' | 'pi' | '(' expr ')' | func '(' expr ')'
            | ('+' | '-') factor
    func   := 'sin' | 'cos' | 'exp' | 'sqrt'

The unary sign is an extension of the core grammar so that ``-1`` parses.
Compiled expressions are evaluated with numpy ufuncs and therefore broadcast
over arrays of ``u`` and ``v``.
"""

import re

import numpy as np

from .errors import ExpressionSyntaxError, UnivariateError, UnknownIdentifierError

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}
_BINARY = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


# Tree nodes are tuples: ("num", x) | ("var", name) | ("call", fname, arg)
# | ("neg", arg) | ("bin", op, left, right).


class _Parser:
    def __init__(self, text, univariate):
        self.text = text
        self.univariate = univariate
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok):
        where = "end of input" if tok[0] == "end" else repr(tok[1])
        raise ExpressionSyntaxError(f"{message}, found {where}", tok[2], self.text)

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] != "op":
            self.fail(f"expected {value!r}", tok)

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.fail("unexpected trailing input", tok)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = ("bin", op, node, self.factor())
        return node

    def factor(self):
        tok = self.take()
        kind, value, pos = tok
        if kind == "num":
            return ("num", float(value))
        if kind == "op" and value in "+-":
            arg = self.factor()
            return arg if value == "+" else ("neg", arg)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if value == "u":
                return ("var", "u")
            if value == "v":
                if self.univariate:
                    raise UnivariateError(
                        f"'v' at position {pos} in an expression of u only: {self.text!r}"
                    )
                return ("var", "v")
            if value == "pi":
                return ("num", float(np.pi))
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return ("call", value, arg)
            raise UnknownIdentifierError(value, pos)
        self.fail("expected a number, variable, function or '('", tok)


def _compile(node):
    kind = node[0]
    if kind == "num":
        x = node[1]
        return lambda u, v: x
    if kind == "var":
        if node[1] == "u":
            return lambda u, v: u
        return lambda u, v: v
    if kind == "neg":
        arg = _compile(node[1])
        return lambda u, v: np.negative(arg(u, v))
    if kind == "call":
        fn = FUNCTIONS[node[1]]
        arg = _compile(node[2])
        return lambda u, v: fn(arg(u, v))
    fn = _BINARY[node[1]]
    left = _compile(node[2])
    right = _compile(node[3])
    return lambda u, v: fn(left(u, v), right(u, v))


def _uses(node, name):
    if node[0] == "var":
        return node[1] == name
    return any(_uses(child, name) for child in node[1:] if isinstance(child, tuple))


class KernelExpression:
    """A parsed closed-form kernel, callable as ``expr(u, v=None)``."""

    def __init__(self, source_text, tree, univariate):
        self.source_text = source_text
        self.tree = tree
        self.univariate = univariate
        self._fn = _compile(tree)

    @property
    def is_zero_literal(self):
        return self.tree == ("num", 0.0)

    def uses_v(self):
        return _uses(self.tree, "v")

    def __call__(self, u, v=None):
        u = np.asarray(u, dtype=float)
        if v is None:
            v = u
        else:
            v = np.asarray(v, dtype=float)
        shape = np.broadcast_shapes(u.shape, v.shape)
        with np.errstate(all="ignore"):
            out = self._fn(u, v)
        out = np.broadcast_to(np.asarray(out, dtype=float), shape)
        return float(out) if out.ndim == 0 else np.array(out)

    def __repr__(self):
        return f"KernelExpression({self.source_text!r})"

    def __eq__(self, other):
        return isinstance(other, KernelExpression) and (
            self.source_text, self.univariate) == (other.source_text, other.univariate)

    def __hash__(self):
        return hash((self.source_text, self.univariate))

    def __reduce__(self):
        return parse_expression, (self.source_text, self.univariate)


def parse_expression(text, univariate=False):
    """Parse ``text`` into a :class:`KernelExpression`.

    With ``univariate=True`` the variable ``v`` is rejected.
    """
    if not isinstance(text, str):
        text = repr(float(text))
    tree = _Parser(text, univariate).parse()
    return KernelExpression(text, tree, univariate)

