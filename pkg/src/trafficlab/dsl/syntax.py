"""Candidate-model expression language: AST, parser and canonical renderer.

Grammar (s-expressions, ``;`` starts a comment)::

    model   := (defmodel FAMILY EXTRAS EXPR)
    EXTRAS  := () | (extra-params (NAME LO HI)*)
    EXPR    := NUMBER
             | (const NUMBER) | (param NAME) | (input NAME)
             | (UNARY EXPR)              UNARY  in neg abs exp log sqrt tanh sigmoid
             | (BINARY EXPR EXPR)        BINARY in add sub mul div pow min max
             | (CMP EXPR EXPR)           CMP    in gt ge lt le   -> 1.0 / 0.0
             | (clip EXPR EXPR EXPR)     child, lower, upper
             | (if EXPR EXPR EXPR)       condition > 0 selects the second operand
             | (mean EXPR) | (std EXPR)  collapse the batch to one value
             | (percentile EXPR NUMBER)  linear interpolation, q in [0, 100]

A bare number is shorthand for ``(const NUMBER)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

from trafficlab.errors import ParseError

UNARY_OPS = ("neg", "abs", "exp", "log", "sqrt", "tanh", "sigmoid")
BINARY_OPS = ("add", "sub", "mul", "div", "pow", "min", "max")
CMP_OPS = ("gt", "ge", "lt", "le")
REDUCE_OPS = ("mean", "std")
KNOWN_FAMILIES = ("idm", "mobil", "lwr")
MAX_EXTRA_PARAMS = 2

GRAMMAR = __doc__.split("::", 1)[1].split("A bare number", 1)[0].strip("\n")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Input:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Cmp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Clip:
    child: "Expr"
    lo: "Expr"
    hi: "Expr"


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class Reduce:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class Percentile:
    child: "Expr"
    q: float


Expr = Union[Const, Param, Input, Unary, Binary, Cmp, Clip, If, Reduce, Percentile]


@dataclass(frozen=True)
class ExtraParam:
    name: str
    lower: float
    upper: float


@dataclass(frozen=True)
class CandidateModel:
    family: str
    body: Expr
    extra_params: tuple = ()
    source_text: str = field(default="", compare=False)
    attempts: int = field(default=1, compare=False)

    @property
    def extra_names(self) -> tuple:
        return tuple(p.name for p in self.extra_params)


def children(node) -> tuple:
    if isinstance(node, (Const, Param, Input)):
        return ()
    if isinstance(node, (Unary, Reduce, Percentile)):
        return (node.child,)
    if isinstance(node, (Binary, Cmp)):
        return (node.left, node.right)
    if isinstance(node, Clip):
        return (node.child, node.lo, node.hi)
    if isinstance(node, If):
        return (node.cond, node.then, node.orelse)
    raise TypeError(f"not an expression node: {node!r}")


def node_label(node) -> str:
    if isinstance(node, (Unary, Binary, Cmp, Reduce)):
        return node.op
    return type(node).__name__.lower()


def walk(node, path="body"):
    """Yield ``(path, node)`` pairs depth-first, left to right."""
    yield path, node
    label = node_label(node)
    for i, child in enumerate(children(node)):
        yield from walk(child, f"{path}/{label}[{i}]")


# --------------------------------------------------------------------------
# Lexer
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>;[^\n]*)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?(?![A-Za-z_\-]))
  | (?P<symbol>[A-Za-z_][A-Za-z0-9_\-]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    return toks


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _read_sexpr(toks, i):
    """Read one datum starting at ``toks[i]``; lists become ``(tok, [items])``."""
    if i >= len(toks):
        last = toks[-1] if toks else _Tok("eof", "", 1, 1)
        raise ParseError("unexpected end of input", last.line, last.col)
    tok = toks[i]
    if tok.kind == "rparen":
        raise ParseError("unexpected ')'", tok.line, tok.col)
    if tok.kind != "lparen":
        return tok, i + 1
    items = []
    i += 1
    while True:
        if i >= len(toks):
            raise ParseError("unclosed '('", tok.line, tok.col)
        if toks[i].kind == "rparen":
            return (tok, items), i + 1
        item, i = _read_sexpr(toks, i)
        items.append(item)


def _pos(datum):
    tok = datum[0] if isinstance(datum, tuple) else datum
    return tok.line, tok.col


def _number(datum, what):
    if isinstance(datum, tuple) or datum.kind != "number":
        raise ParseError(f"expected a number for {what}", *_pos(datum))
    value = float(datum.text)
    if not math.isfinite(value):
        raise ParseError(f"non-finite number {datum.text!r}", *_pos(datum))
    return value


def _name(datum, what):
    if isinstance(datum, tuple) or datum.kind != "symbol":
        raise ParseError(f"expected a name for {what}", *_pos(datum))
    return datum.text


def _arity(op, items, n, lparen):
    if len(items) != n:
        raise ParseError(f"operator {op!r} takes {n} operand(s), got {len(items)}", lparen.line, lparen.col)


def _expr(datum) -> Expr:
    if not isinstance(datum, tuple):
        if datum.kind == "number":
            return Const(_number(datum, "constant"))
        raise ParseError(f"bare name {datum.text!r}; use (param NAME) or (input NAME)", datum.line, datum.col)
    lparen, items = datum
    if not items:
        raise ParseError("empty expression '()'", lparen.line, lparen.col)
    head, args = items[0], items[1:]
    if isinstance(head, tuple) or head.kind != "symbol":
        raise ParseError("expression must start with an operator name", *_pos(head))
    op = head.text
    if op == "const":
        _arity(op, args, 1, lparen)
        return Const(_number(args[0], "const"))
    if op in ("param", "input"):
        _arity(op, args, 1, lparen)
        name = _name(args[0], op)
        return Param(name) if op == "param" else Input(name)
    if op in UNARY_OPS:
        _arity(op, args, 1, lparen)
        return Unary(op, _expr(args[0]))
    if op in BINARY_OPS:
        _arity(op, args, 2, lparen)
        return Binary(op, _expr(args[0]), _expr(args[1]))
    if op in CMP_OPS:
        _arity(op, args, 2, lparen)
        return Cmp(op, _expr(args[0]), _expr(args[1]))
    if op == "clip":
        _arity(op, args, 3, lparen)
        return Clip(_expr(args[0]), _expr(args[1]), _expr(args[2]))
    if op == "if":
        _arity(op, args, 3, lparen)
        return If(_expr(args[0]), _expr(args[1]), _expr(args[2]))
    if op in REDUCE_OPS:
        _arity(op, args, 1, lparen)
        return Reduce(op, _expr(args[0]))
    if op == "percentile":
        _arity(op, args, 2, lparen)
        q = _number(args[1], "percentile rank")
        if not 0.0 <= q <= 100.0:
            raise ParseError(f"percentile rank must lie in [0, 100], got {q}", *_pos(args[1]))
        return Percentile(_expr(args[0]), q)
    raise ParseError(f"unknown operator {op!r}", head.line, head.col)


def _extras(datum) -> tuple:
    if not isinstance(datum, tuple):
        raise ParseError("expected '()' or '(extra-params ...)'", *_pos(datum))
    lparen, items = datum
    if not items:
        return ()
    head = items[0]
    if isinstance(head, tuple) or head.text != "extra-params":
        raise ParseError("expected '(extra-params (NAME LO HI) ...)'", *_pos(head))
    out = []
    for spec in items[1:]:
        if not isinstance(spec, tuple) or len(spec[1]) != 3:
            raise ParseError("extra parameter must be '(NAME LO HI)'", *_pos(spec))
        name = _name(spec[1][0], "extra parameter")
        lo = _number(spec[1][1], f"lower bound of {name}")
        hi = _number(spec[1][2], f"upper bound of {name}")
        out.append(ExtraParam(name, lo, hi))
    return tuple(out)


def parse_candidate(text: str, attempts: int = 1) -> CandidateModel:
    toks = tokenize(text)
    if not toks:
        raise ParseError("empty candidate text", 1, 1)
    datum, end = _read_sexpr(toks, 0)
    if end != len(toks):
        extra = toks[end]
        raise ParseError("trailing input after model definition", extra.line, extra.col)
    if not isinstance(datum, tuple):
        raise ParseError("expected '(defmodel FAMILY EXTRAS EXPR)'", *_pos(datum))
    lparen, items = datum
    if not items or isinstance(items[0], tuple) or items[0].text != "defmodel":
        raise ParseError("expected '(defmodel FAMILY EXTRAS EXPR)'", lparen.line, lparen.col)
    if len(items) != 4:
        raise ParseError(
            f"defmodel takes 3 parts (family, extra-params, body), got {len(items) - 1}", lparen.line, lparen.col
        )
    family = _name(items[1], "model family")
    if family not in KNOWN_FAMILIES:
        raise ParseError(f"unknown model family {family!r}", *_pos(items[1]))
    return CandidateModel(family, _expr(items[3]), _extras(items[2]), source_text=text, attempts=attempts)


def parse_expr(text: str) -> Expr:
    toks = tokenize(text)
    datum, end = _read_sexpr(toks, 0)
    if end != len(toks):
        raise ParseError("trailing input after expression", toks[end].line, toks[end].col)
    return _expr(datum)


_FENCE_RE = re.compile(r"```[ \t]*dsl[ \t]*\r?\n(.*?)```", re.DOTALL | re.IGNORECASE)


def extract_dsl_block(text: str) -> str:
    """Return the contents of the first fenced block tagged ``dsl``."""
    m = _FENCE_RE.search(text)
    if m is None:
        raise ParseError("no ```dsl fenced block found in response")
    return m.group(1).strip()


# --------------------------------------------------------------------------
# Renderer
# --------------------------------------------------------------------------


def format_number(value: float) -> str:
    """Canonical numeric text: shortest round-trip repr of the float value."""
    value = float(value)
    if value == 0.0:
        value = 0.0  # drop the sign of negative zero
    return repr(value)


def render_expr(node) -> str:
    if isinstance(node, Const):
        return f"(const {format_number(node.value)})"
    if isinstance(node, Param):
        return f"(param {node.name})"
    if isinstance(node, Input):
        return f"(input {node.name})"
    if isinstance(node, Percentile):
        return f"(percentile {render_expr(node.child)} {format_number(node.q)})"
    parts = " ".join(render_expr(c) for c in children(node))
    return f"({node_label(node)} {parts})"


def render_candidate(cand: CandidateModel) -> str:
    if cand.extra_params:
        specs = " ".join(
            f"({p.name} {format_number(p.lower)} {format_number(p.upper)})" for p in cand.extra_params
        )
        extras = f"(extra-params {specs})"
    else:
        extras = "()"
    return f"(defmodel {cand.family} {extras} {render_expr(cand.body)})"
