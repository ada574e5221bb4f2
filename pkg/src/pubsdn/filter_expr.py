"""Content-filter predicate language.

Grammar::

    expr    := or
    or      := and ("OR" and)*
    and     := not ("AND" not)*
    not     := "NOT" not | primary
    primary := "(" expr ")" | fieldpath op literal
    op      := "=" | "<>" | "<" | "<=" | ">" | ">="
    literal := integer | decimal | 'single-quoted string'

Keywords are case-sensitive. String literals escape a quote by doubling it.
Binary operators associate to the left.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Union

from .errors import PubSdnError

__all__ = [
    "And", "Comparison", "FieldPath", "FilterExpression", "MissingField",
    "Not", "Or", "ParseError", "TypeMismatch", "evaluate", "parse",
    "print_canonical", "referenced_fields",
]

Literal = Union[int, Decimal, str]


class ParseError(PubSdnError):
    """Syntax error. ``offset`` is the 1-based byte column of the bad token."""

    def __init__(self, offset: int, expected: frozenset, found: str):
        self.offset = offset
        self.expected = expected
        self.found = found
        super().__init__(
            f"at offset {offset}: expected one of {sorted(expected)}, found {found}"
        )


class MissingField(PubSdnError):
    pass


class TypeMismatch(PubSdnError):
    pass


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class FieldPath:
    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise ValueError("empty field path")
        for seg in self.segments:
            if not _IDENT.match(seg):
                raise ValueError(f"bad field path segment {seg!r}")

    @classmethod
    def of(cls, dotted: str) -> "FieldPath":
        return cls(tuple(dotted.split(".")))

    def __str__(self):
        return ".".join(self.segments)


@dataclass(frozen=True)
class Comparison:
    field: FieldPath
    op: str
    literal: Literal


@dataclass(frozen=True)
class And:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Or:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Not:
    operand: "Node"


Node = Union[Comparison, And, Or, Not]

OPS = ("=", "<>", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class FilterExpression:
    root: Node
    source_text: str = ""

    def __eq__(self, other):
        # structural equality ignores the source text
        if not isinstance(other, FilterExpression):
            return NotImplemented
        return _same(self.root, other.root)

    def __hash__(self):
        return hash(print_canonical(self))

    def __str__(self):
        return self.source_text or print_canonical(self)

    def evaluate(self, sample) -> bool:
        return evaluate(self, sample)


def _same(a, b) -> bool:
    # int 1 and Decimal('1') compare equal in Python; literal kind matters here
    if type(a) is not type(b):
        return False
    if isinstance(a, Comparison):
        return (
            a.field == b.field and a.op == b.op
            and type(a.literal) is type(b.literal) and a.literal == b.literal
        )
    if isinstance(a, Not):
        return _same(a.operand, b.operand)
    return _same(a.left, b.left) and _same(a.right, b.right)


# -- lexer -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<decimal>-?\d+\.\d+)
  | (?P<integer>-?\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<op><>|<=|>=|=|<|>)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<path>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
    """,
    re.VERBOSE,
)

_KEYWORDS = {"AND", "OR", "NOT"}
_LITERAL_KINDS = frozenset({"integer", "decimal", "string"})


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int  # 1-based


def _tokenize(text: str) -> list:
    toks = []
    pos = 0
    raw = text.encode()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            off = len(text[:pos].encode()) + 1
            raise ParseError(off, frozenset({"token"}), repr(text[pos]))
        kind = m.lastgroup
        if kind != "ws":
            word = m.group()
            if kind == "path" and word in _KEYWORDS:
                kind = word
            toks.append(_Tok(kind, word, len(text[:pos].encode()) + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", len(raw) + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self, *kinds) -> _Tok:
        tok = self.peek()
        if tok.kind not in kinds:
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise ParseError(tok.offset, frozenset(kinds), found)
        self.i += 1
        return tok

    def expr(self) -> Node:
        node = self.and_()
        while self.peek().kind == "OR":
            self.i += 1
            node = Or(node, self.and_())
        return node

    def and_(self) -> Node:
        node = self.not_()
        while self.peek().kind == "AND":
            self.i += 1
            node = And(node, self.not_())
        return node

    def not_(self) -> Node:
        if self.peek().kind == "NOT":
            self.i += 1
            return Not(self.not_())
        return self.primary()

    def primary(self) -> Node:
        tok = self.take("lparen", "path", "NOT")
        if tok.kind == "NOT":  # only reachable via take(); kept for the error set
            return Not(self.not_())
        if tok.kind == "lparen":
            node = self.expr()
            self.take("rparen")
            return node
        op = self.take("op").text
        lit = self.take(*_LITERAL_KINDS)
        return Comparison(FieldPath.of(tok.text), op, _literal(lit))


def _literal(tok: _Tok) -> Literal:
    if tok.kind == "integer":
        return int(tok.text)
    if tok.kind == "decimal":
        return Decimal(tok.text)
    return tok.text[1:-1].replace("''", "'")


def parse(text: str) -> FilterExpression:
    if not text or not text.strip():
        raise ParseError(1, frozenset({"lparen", "path", "NOT"}), "end of input")
    p = _Parser(text)
    root = p.expr()
    p.take("eof")
    return FilterExpression(root, text)


# -- evaluation --------------------------------------------------------------

def _lookup(sample, path: FieldPath):
    fields = getattr(sample, "fields", sample)
    key = str(path)
    if isinstance(fields, Mapping) and key in fields:
        return fields[key]
    # nested mappings are also accepted
    cur = fields
    for seg in path.segments:
        if not isinstance(cur, Mapping) or seg not in cur:
            raise MissingField(key)
        cur = cur[seg]
    return cur


def _is_number(v) -> bool:
    return isinstance(v, (int, float, Decimal)) and not isinstance(v, bool)


def _compare(value, op: str, literal) -> bool:
    if isinstance(literal, str) or isinstance(value, str):
        if not (isinstance(literal, str) and isinstance(value, str)):
            raise TypeMismatch(f"cannot compare {value!r} with {literal!r}")
        if op == "=":
            return value == literal
        if op == "<>":
            return value != literal
        raise TypeMismatch(f"ordering operator {op} on strings")
    if not _is_number(value):
        raise TypeMismatch(f"non-numeric value {value!r}")
    if isinstance(value, float):
        value = Decimal(value)
    if op == "=":
        return value == literal
    if op == "<>":
        return value != literal
    if op == "<":
        return value < literal
    if op == "<=":
        return value <= literal
    if op == ">":
        return value > literal
    return value >= literal


def _eval(node: Node, sample) -> bool:
    if isinstance(node, Comparison):
        return _compare(_lookup(sample, node.field), node.op, node.literal)
    if isinstance(node, Not):
        return not _eval(node.operand, sample)
    # strict: both sides evaluated so schema errors always surface
    left = _eval(node.left, sample)
    right = _eval(node.right, sample)
    if isinstance(node, And):
        return left and right
    return left or right


def evaluate(expr: FilterExpression, sample) -> bool:
    """Evaluate against a DataSample or a plain field mapping."""
    return _eval(expr.root, sample)


def referenced_fields(expr: FilterExpression) -> set:
    out = set()
    stack = [expr.root]
    while stack:
        node = stack.pop()
        if isinstance(node, Comparison):
            out.add(node.field)
        elif isinstance(node, Not):
            stack.append(node.operand)
        else:
            stack.extend((node.left, node.right))
    return out


def _print_literal(lit) -> str:
    if isinstance(lit, str):
        return "'" + lit.replace("'", "''") + "'"
    if isinstance(lit, Decimal):
        text = format(lit, "f")
        return text if "." in text else text + ".0"
    return str(lit)


def _print(node: Node) -> str:
    if isinstance(node, Comparison):
        return f"({node.field} {node.op} {_print_literal(node.literal)})"
    if isinstance(node, Not):
        return f"(NOT {_print(node.operand)})"
    word = "AND" if isinstance(node, And) else "OR"
    return f"({_print(node.left)} {word} {_print(node.right)})"


def print_canonical(expr: FilterExpression) -> str:
    return _print(expr.root)
