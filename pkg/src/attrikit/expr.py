"""A small expression DSL for scalar models of P real inputs.

The surface syntax supports ``+ - * /``, power with a constant exponent
(``x1^2``, ``x2^-1``, ``x3^0.5``), parentheses, unary minus, and calls to
``exp``, ``sqrt``, ``abs``, ``relu`` (one argument) and ``max``, ``min``
(two or more).  Variables are named ``x1 .. xP``.  Precedence, tightest
first: unary minus, power, ``* /``, ``+ -``; so ``-x1^2`` is ``(-x1)^2``.

Evaluation and reverse-mode differentiation are vectorized over batches
of points and are total: applying ``sqrt`` or ``/`` outside their domain
raises :class:`~attrikit.errors.DomainError` instead of propagating NaN.

Subderivative conventions at nondifferentiable points: ``relu'(0) = 0``,
``abs'(0) = 0``, and an exact tie among ``k`` arguments of ``max``/``min``
splits the derivative ``1/k`` per argument.  These choices only matter on
measure-zero sets but keep tied arguments symmetric.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ArityError, DomainError, ParseError

__all__ = [
    "Const",
    "Var",
    "Neg",
    "Bin",
    "Pow",
    "Call",
    "Expr",
    "ExprModel",
    "parse_expression",
    "to_source",
    "load_model_file",
    "save_model_file",
]

UNARY_FUNCS = ("exp", "sqrt", "abs", "relu")
NARY_FUNCS = ("max", "min")


# ---------------------------------------------------------------------------
# AST node types


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: float  # constant integer or half-integer


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Const, Var, Neg, Bin, Pow, Call]


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<sym>[-+*/^(),]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            # nothing but whitespace may remain
            rest = source[pos:].strip()
            if not rest:
                break
            ws = len(source[pos:]) - len(source[pos:].lstrip())
            raise ParseError(f"unexpected character {rest[0]!r}", pos + ws)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("sym", m.group("sym"), m.start("sym")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")


class _Parser:
    """Recursive-descent parser for the grammar described in the module
    docstring."""

    def __init__(self, source: str, arity: int):
        self.source = source
        self.arity = arity
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_sym(self, sym: str):
        kind, text, pos = self.peek()
        if kind != "sym" or text != sym:
            found = repr(text) if kind != "end" else "end of input"
            raise ParseError(f"expected {sym!r}, found {found}", pos)
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"expected end of input, found {text!r}", pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "sym" and text in "+-":
                self.advance()
                node = Bin(text, node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.power()
        while True:
            kind, text, _ = self.peek()
            if kind == "sym" and text in "*/":
                self.advance()
                node = Bin(text, node, self.power())
            else:
                return node

    def power(self) -> Expr:
        node = self.unary()
        while True:
            kind, text, pos = self.peek()
            if kind == "sym" and text == "^":
                self.advance()
                node = Pow(node, self.exponent())
            else:
                return node

    def exponent(self) -> float:
        _, _, pos = self.peek()
        node = self.unary()
        value = _fold_constant(node, pos)
        if not float(2 * value).is_integer():
            raise ParseError(
                f"exponent must be an integer or half-integer, got {value!r}", pos
            )
        return float(value)

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "sym" and text == "-":
            self.advance()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        kind, text, pos = self.advance()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            m = _VAR_RE.match(text)
            if m:
                index = int(m.group(1))
                if index > self.arity:
                    raise ParseError(
                        f"variable {text} out of range for arity {self.arity}", pos
                    )
                return Var(index)
            if text in UNARY_FUNCS or text in NARY_FUNCS:
                return self.call(text, pos)
            raise ParseError(f"unknown identifier {text!r}", pos)
        if kind == "sym" and text == "(":
            node = self.expr()
            self.expect_sym(")")
            return node
        found = repr(text) if kind != "end" else "end of input"
        raise ParseError(f"expected a number, variable, function or '(', found {found}", pos)

    def call(self, func: str, pos: int) -> Expr:
        self.expect_sym("(")
        args = [self.expr()]
        while True:
            kind, text, _ = self.peek()
            if kind == "sym" and text == ",":
                self.advance()
                args.append(self.expr())
            else:
                break
        self.expect_sym(")")
        if func in UNARY_FUNCS and len(args) != 1:
            raise ParseError(f"{func} expects exactly 1 argument, got {len(args)}", pos)
        if func in NARY_FUNCS and len(args) < 2:
            raise ParseError(f"{func} expects at least 2 arguments, got {len(args)}", pos)
        return Call(func, tuple(args))


def _fold_constant(node: Expr, pos: int) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg):
        return -_fold_constant(node.child, pos)
    if isinstance(node, Bin):
        lhs = _fold_constant(node.left, pos)
        rhs = _fold_constant(node.right, pos)
        if node.op == "+":
            return lhs + rhs
        if node.op == "-":
            return lhs - rhs
        if node.op == "*":
            return lhs * rhs
        if rhs == 0:
            raise ParseError("division by zero in constant exponent", pos)
        return lhs / rhs
    if isinstance(node, Pow):
        return _fold_constant(node.base, pos) ** node.exponent
    raise ParseError("non-constant exponent", pos)


def parse_expression(source: str, arity: int) -> Expr:
    """Parse DSL source into an AST, validating variables against ``arity``."""
    if not isinstance(arity, int) or arity < 1:
        raise ArityError(f"arity must be a positive integer, got {arity!r}")
    if not source or not source.strip():
        raise ParseError("empty expression", 0)
    return _Parser(source, arity).parse()


# ---------------------------------------------------------------------------
# Printing

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_POW = 3
_PREC_NEG = 4
_PREC_ATOM = 5


def _fmt_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


def _prec(node: Expr) -> int:
    if isinstance(node, Bin):
        return _PREC_ADD if node.op in "+-" else _PREC_MUL
    if isinstance(node, Pow):
        return _PREC_POW
    if isinstance(node, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def to_source(node: Expr) -> str:
    """Render an AST back to source.  Parsing the result reproduces a
    structurally identical AST (for ASTs with nonnegative constants, which
    is everything the parser itself can produce)."""

    def wrap(child: Expr, minimum: int) -> str:
        text = to_source(child)
        return f"({text})" if _prec(child) < minimum else text

    if isinstance(node, Const):
        return _fmt_number(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return "-" + wrap(node.child, _PREC_NEG)
    if isinstance(node, Pow):
        exp = _fmt_number(node.exponent)
        return wrap(node.base, _PREC_NEG) + "^" + exp
    if isinstance(node, Bin):
        if node.op in "+-":
            mine, right_min = _PREC_ADD, _PREC_MUL
        else:
            mine, right_min = _PREC_MUL, _PREC_POW
        return f"{wrap(node.left, mine)} {node.op} {wrap(node.right, right_min)}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Evaluation and reverse-mode differentiation (batched)


def _is_integral(c: float) -> bool:
    return float(c).is_integer()


def _forward(node: Expr, x: np.ndarray, cache: dict):
    """Evaluate ``node`` on a batch ``x`` of shape (n, P); results are (n,)
    arrays (or scalars for constant subtrees), memoized in ``cache``."""
    key = id(node)
    hit = cache.get(key)
    if hit is not None:
        return hit

    if isinstance(node, Const):
        value = node.value
    elif isinstance(node, Var):
        value = x[:, node.index - 1]
    elif isinstance(node, Neg):
        value = -_forward(node.child, x, cache)
    elif isinstance(node, Bin):
        lhs = _forward(node.left, x, cache)
        rhs = _forward(node.right, x, cache)
        if node.op == "+":
            value = lhs + rhs
        elif node.op == "-":
            value = lhs - rhs
        elif node.op == "*":
            value = lhs * rhs
        else:
            if np.any(rhs == 0.0):
                raise DomainError("division by zero", to_source(node))
            value = lhs / rhs
    elif isinstance(node, Pow):
        base = _forward(node.base, x, cache)
        c = node.exponent
        if not _is_integral(c):
            if np.any(base < 0.0):
                raise DomainError(
                    f"negative base for fractional exponent {_fmt_number(c)}",
                    to_source(node),
                )
            if c < 0 and np.any(base == 0.0):
                raise DomainError("zero base for negative exponent", to_source(node))
        elif c < 0 and np.any(base == 0.0):
            raise DomainError("zero base for negative exponent", to_source(node))
        value = base ** c
    elif isinstance(node, Call):
        args = [_forward(a, x, cache) for a in node.args]
        if node.func == "exp":
            value = np.exp(args[0])
        elif node.func == "sqrt":
            if np.any(args[0] < 0.0):
                raise DomainError("square root of a negative number", to_source(node))
            value = np.sqrt(args[0])
        elif node.func == "abs":
            value = np.abs(args[0])
        elif node.func == "relu":
            value = np.maximum(args[0], 0.0)
        elif node.func == "max":
            value = np.maximum.reduce(np.broadcast_arrays(*args)) if len(args) > 2 else np.maximum(*args)
        elif node.func == "min":
            value = np.minimum.reduce(np.broadcast_arrays(*args)) if len(args) > 2 else np.minimum(*args)
        else:
            raise TypeError(f"unknown function {node.func!r}")
    else:
        raise TypeError(f"not an expression node: {node!r}")

    cache[key] = value
    return value


def _backward(node: Expr, adj, x: np.ndarray, cache: dict, out: np.ndarray):
    """Accumulate d(output)/d(x_i), scaled by the adjoint ``adj``, into
    ``out`` of shape (n, P).  ``cache`` must hold the forward values."""
    if isinstance(node, Const):
        return
    if isinstance(node, Var):
        out[:, node.index - 1] += adj
        return
    if isinstance(node, Neg):
        _backward(node.child, -adj, x, cache, out)
        return
    if isinstance(node, Bin):
        lhs = cache[id(node.left)]
        rhs = cache[id(node.right)]
        if node.op == "+":
            _backward(node.left, adj, x, cache, out)
            _backward(node.right, adj, x, cache, out)
        elif node.op == "-":
            _backward(node.left, adj, x, cache, out)
            _backward(node.right, -adj, x, cache, out)
        elif node.op == "*":
            _backward(node.left, adj * rhs, x, cache, out)
            _backward(node.right, adj * lhs, x, cache, out)
        else:
            _backward(node.left, adj / rhs, x, cache, out)
            _backward(node.right, -adj * lhs / (rhs * rhs), x, cache, out)
        return
    if isinstance(node, Pow):
        c = node.exponent
        if c == 0.0:
            return
        base = cache[id(node.base)]
        if c == 1.0:
            _backward(node.base, adj, x, cache, out)
            return
        if c - 1.0 < 0 and np.any(base == 0.0):
            raise DomainError(
                f"derivative of power {_fmt_number(c)} at zero base", to_source(node)
            )
        _backward(node.base, adj * c * base ** (c - 1.0), x, cache, out)
        return
    if isinstance(node, Call):
        value = cache[id(node)]
        if node.func == "exp":
            _backward(node.args[0], adj * value, x, cache, out)
        elif node.func == "sqrt":
            if np.any(value == 0.0):
                raise DomainError("derivative of sqrt at zero", to_source(node))
            _backward(node.args[0], adj * 0.5 / value, x, cache, out)
        elif node.func == "abs":
            arg = cache[id(node.args[0])]
            _backward(node.args[0], adj * np.sign(arg), x, cache, out)
        elif node.func == "relu":
            arg = cache[id(node.args[0])]
            _backward(node.args[0], adj * (arg > 0.0), x, cache, out)
        else:  # max / min: exact ties split the derivative equally
            vals = [np.asarray(cache[id(a)], dtype=float) for a in node.args]
            hits = [np.asarray(v == value, dtype=float) for v in vals]
            count = sum(hits)
            for a, hit in zip(node.args, hits):
                _backward(a, adj * hit / count, x, cache, out)
        return
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Kink/singularity bookkeeping for straight-line paths


def _critical_subexpressions(node: Expr, acc: list):
    """Collect expressions whose zero crossings make the gradient of the
    tree discontinuous or unbounded: arguments of relu/abs/sqrt, pairwise
    differences of max/min arguments, and bases of fractional or negative
    powers."""
    if isinstance(node, (Const, Var)):
        return
    if isinstance(node, Neg):
        _critical_subexpressions(node.child, acc)
        return
    if isinstance(node, Bin):
        _critical_subexpressions(node.left, acc)
        _critical_subexpressions(node.right, acc)
        return
    if isinstance(node, Pow):
        if not _is_integral(node.exponent) or node.exponent < 0:
            acc.append(node.base)
        _critical_subexpressions(node.base, acc)
        return
    if isinstance(node, Call):
        if node.func in ("relu", "abs", "sqrt"):
            acc.append(node.args[0])
        elif node.func in ("max", "min"):
            for i in range(len(node.args)):
                for j in range(i + 1, len(node.args)):
                    acc.append(Bin("-", node.args[i], node.args[j]))
        for a in node.args:
            _critical_subexpressions(a, acc)
        return
    raise TypeError(f"not an expression node: {node!r}")


def _has_kinks(node: Expr) -> bool:
    acc: list = []
    _critical_subexpressions(node, acc)
    return len(acc) > 0


def find_path_roots(funcs, grid: int = 256, refine: int = 60) -> np.ndarray:
    """Locate zero crossings of each scalar function of alpha in ``funcs``
    over alpha in [0, 1].

    Each entry of ``funcs`` maps a vector of alphas to a vector of values.
    Crossings are bracketed on a uniform grid and refined by bisection, so
    an even number of crossings inside one grid cell can be missed; the
    grid is fine enough for the model families handled here.  Returns the
    sorted crossing positions inside [0, 1] (endpoints included when the
    function vanishes there).
    """
    alphas = np.linspace(0.0, 1.0, grid + 1)
    roots = []
    for fn in funcs:
        values = np.asarray(fn(alphas), dtype=float)
        if values.ndim == 0 or values.shape[0] != alphas.shape[0]:
            values = np.broadcast_to(values, alphas.shape).astype(float)
        exact = alphas[values == 0.0]
        roots.extend(exact.tolist())
        sign_change = np.flatnonzero((values[:-1] * values[1:]) < 0.0)
        if sign_change.size:
            lo = alphas[sign_change]
            hi = alphas[sign_change + 1]
            flo = values[sign_change]
            for _ in range(refine):
                mid = 0.5 * (lo + hi)
                fmid = np.asarray(fn(mid), dtype=float)
                left = (flo * fmid) <= 0.0
                hi = np.where(left, mid, hi)
                lo = np.where(left, lo, mid)
                flo = np.where(left, flo, fmid)
            roots.extend((0.5 * (lo + hi)).tolist())
    if not roots:
        return np.empty(0)
    merged: list = []
    for r in sorted(roots):
        if not merged or r - merged[-1] > 1e-10:
            merged.append(r)
    return np.asarray(merged)


# ---------------------------------------------------------------------------
# Model wrapper


class ExprModel:
    """An immutable scalar model backed by an expression AST.

    Instances are safe to share across threads: evaluation and
    differentiation are pure functions of the inputs.
    """

    def __init__(self, name: str, arity: int, body: Expr):
        if not isinstance(arity, int) or arity < 1:
            raise ArityError(f"arity must be a positive integer, got {arity!r}")
        self.name = name
        self.arity = arity
        self.body = body
        self.has_kinks = _has_kinks(body)

    @classmethod
    def from_source(cls, name: str, arity: int, source: str) -> "ExprModel":
        return cls(name, arity, parse_expression(source, arity))

    def __repr__(self):
        return f"ExprModel({self.name!r}, arity={self.arity}, {to_source(self.body)!r})"

    def source(self) -> str:
        return to_source(self.body)

    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.arity:
            raise ArityError(
                f"expected points of dimension {self.arity}, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ArityError("points must be finite")
        return x

    def evaluate_batch(self, x) -> np.ndarray:
        x = self._check_batch(x)
        value = _forward(self.body, x, {})
        return np.broadcast_to(np.asarray(value, dtype=float), (x.shape[0],)).copy()

    def evaluate(self, x) -> float:
        return float(self.evaluate_batch(np.asarray(x, dtype=float)[None, :])[0])

    def gradient_batch(self, x) -> np.ndarray:
        x = self._check_batch(x)
        cache: dict = {}
        _forward(self.body, x, cache)
        out = np.zeros_like(x)
        _backward(self.body, np.ones(x.shape[0]), x, cache, out)
        return out

    def gradient(self, x) -> np.ndarray:
        return self.gradient_batch(np.asarray(x, dtype=float)[None, :])[0]

    def path_breakpoints(self, x_r, x_o, grid: int = 256) -> np.ndarray:
        """Positions alpha in [0, 1] where the gradient may jump or blow up
        along the straight path from ``x_r`` to ``x_o``."""
        x_r = np.asarray(x_r, dtype=float)
        x_o = np.asarray(x_o, dtype=float)
        crit: list = []
        _critical_subexpressions(self.body, crit)
        if not crit:
            return np.empty(0)
        delta = x_o - x_r

        def on_path(sub):
            def fn(alphas):
                alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
                pts = x_r[None, :] + alphas[:, None] * delta[None, :]
                value = _forward(sub, pts, {})
                return np.broadcast_to(np.asarray(value, dtype=float), alphas.shape)

            return fn

        return find_path_roots([on_path(s) for s in crit], grid=grid)


# ---------------------------------------------------------------------------
# Model files

_DECL_RE = re.compile(
    r"^model\s+(?P<name>[A-Za-z_][A-Za-z_0-9]*)\s+arity\s+(?P<arity>[1-9][0-9]*)"
    r"\s*:=\s*(?P<body>.+)$",
    re.DOTALL,
)


def load_model_file(path) -> ExprModel:
    """Load a single ``model <name> arity <P> := <expression>`` declaration.

    Blank lines and lines starting with ``#`` are ignored; the expression
    may continue over several lines.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    lines = [ln for ln in raw.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    text = " ".join(ln.strip() for ln in lines)
    m = _DECL_RE.match(text)
    if not m:
        raise ParseError(
            "expected a declaration of the form 'model <name> arity <P> := <expression>'",
            0,
        )
    arity = int(m.group("arity"))
    return ExprModel.from_source(m.group("name"), arity, m.group("body"))


def save_model_file(model: ExprModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"model {model.name} arity {model.arity} := {model.source()}\n")
