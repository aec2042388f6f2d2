"""Attribute-condition language and claim conditions.

The expression language is a deliberately tiny CEL-like subset::

    expr    := or
    or      := and ("||" and)*
    and     := eq ("&&" eq)*
    eq      := unary [("==" | "!=") unary]
    unary   := "!" unary | postfix
    postfix := primary ("." METHOD "(" expr ")")*
    primary := STRING | "true" | "false" | "(" expr ")"
             | "assertion" ("." IDENT)+

``METHOD`` is one of ``endsWith``, ``startsWith``, ``contains``. Expressions
are statically typed (string or bool) at parse time, so a parsed condition
always evaluates to a bool or raises :class:`MissingAttribute`. There is no
arithmetic and no regex on purpose.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Iterator, Union

from .errors import (
    ConditionSyntaxError,
    DepthExceeded,
    MissingAttribute,
    TypeMismatch,
)

MAX_DEPTH = 32
MAX_SOURCE_LENGTH = 4096
METHODS = ("endsWith", "startsWith", "contains")
ROOT = "assertion"


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class StringLiteral:
    value: str


@dataclass(frozen=True)
class BoolLiteral:
    value: bool


@dataclass(frozen=True)
class AttributePath:
    segments: tuple[str, ...]

    @property
    def path(self) -> str:
        return ".".join(self.segments)


@dataclass(frozen=True)
class MethodCall:
    receiver: "ConditionExpr"
    method: str
    argument: "ConditionExpr"


@dataclass(frozen=True)
class Equality:
    op: str  # "==" or "!="
    left: "ConditionExpr"
    right: "ConditionExpr"


@dataclass(frozen=True)
class BoolOp:
    op: str  # "&&" or "||"
    left: "ConditionExpr"
    right: "ConditionExpr"


@dataclass(frozen=True)
class Not:
    operand: "ConditionExpr"


@dataclass(frozen=True)
class Parenthesized:
    inner: "ConditionExpr"


ConditionExpr = Union[
    StringLiteral, BoolLiteral, AttributePath, MethodCall, Equality, BoolOp, Not, Parenthesized
]


def expr_type(node: ConditionExpr) -> str:
    """Static type of a node: ``"string"`` or ``"bool"``."""
    if isinstance(node, (StringLiteral, AttributePath)):
        return "string"
    if isinstance(node, Parenthesized):
        return expr_type(node.inner)
    return "bool"


def depth(node: ConditionExpr) -> int:
    if isinstance(node, (StringLiteral, BoolLiteral, AttributePath)):
        return 1
    if isinstance(node, (Not, Parenthesized)):
        return 1 + depth(node.operand if isinstance(node, Not) else node.inner)
    if isinstance(node, MethodCall):
        return 1 + max(depth(node.receiver), depth(node.argument))
    return 1 + max(depth(node.left), depth(node.right))


# -- printing -----------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "'": "\\'", "\n": "\\n", "\t": "\\t", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "'": "'", '"': '"', "n": "\n", "t": "\t", "r": "\r"}


def quote(value: str) -> str:
    return "'" + "".join(_ESCAPES.get(c, c) for c in value) + "'"


def _prec(node: ConditionExpr) -> int:
    if isinstance(node, BoolOp):
        return 1 if node.op == "||" else 2
    if isinstance(node, Equality):
        return 3
    if isinstance(node, Not):
        return 4
    return 5


def _wrap(node: ConditionExpr, min_prec: int) -> str:
    text = to_source(node)
    return text if _prec(node) >= min_prec else f"({text})"


def to_source(node: ConditionExpr) -> str:
    """Render an AST as source. Parsing the result yields the same AST for
    every tree the parser can produce."""
    if isinstance(node, StringLiteral):
        return quote(node.value)
    if isinstance(node, BoolLiteral):
        return "true" if node.value else "false"
    if isinstance(node, AttributePath):
        return ".".join((ROOT, *node.segments))
    if isinstance(node, Parenthesized):
        return f"({to_source(node.inner)})"
    if isinstance(node, MethodCall):
        return f"{_wrap(node.receiver, 5)}.{node.method}({to_source(node.argument)})"
    if isinstance(node, Not):
        return "!" + _wrap(node.operand, 4)
    if isinstance(node, Equality):
        return f"{_wrap(node.left, 4)} {node.op} {_wrap(node.right, 4)}"
    if isinstance(node, BoolOp):
        own = _prec(node)
        return f"{_wrap(node.left, own)} {node.op} {_wrap(node.right, own + 1)}"
    raise TypeError(f"not a condition node: {node!r}")


# -- lexing -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|&&|\|\||[.()!])
  | (?P<quote>['"])
    """,
    re.VERBOSE,
)
_NEAR_MISSES = {"=": frozenset({"=="}), "&": frozenset({"&&"}), "|": frozenset({"||"})}


@dataclass(frozen=True)
class _Tok:
    kind: str  # "ident", "string", an operator literal, or "eof"
    text: str
    pos: int  # character offset


def _byte_offset(source: str, pos: int) -> int:
    return len(source[:pos].encode("utf-8"))


def _lex(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i = 0
    n = len(source)
    while i < n:
        m = _TOKEN_RE.match(source, i)
        if m is None:
            expected = _NEAR_MISSES.get(source[i], frozenset())
            raise ConditionSyntaxError(f"unexpected character {source[i]!r}", _byte_offset(source, i), expected)
        kind = m.lastgroup
        if kind == "ws":
            i = m.end()
        elif kind == "ident":
            toks.append(_Tok("ident", m.group(), i))
            i = m.end()
        elif kind == "op":
            toks.append(_Tok(m.group(), m.group(), i))
            i = m.end()
        else:
            value, i = _lex_string(source, i)
            toks.append(_Tok("string", value, m.start()))
    toks.append(_Tok("eof", "", n))
    return toks


def _lex_string(source: str, start: int) -> tuple[str, int]:
    q = source[start]
    out: list[str] = []
    i = start + 1
    while i < len(source):
        c = source[i]
        if c == q:
            return "".join(out), i + 1
        if c == "\\":
            if i + 1 >= len(source):
                break
            e = source[i + 1]
            if e not in _UNESCAPES:
                raise ConditionSyntaxError(
                    f"invalid escape \\{e}", _byte_offset(source, i), frozenset("\\" + k for k in _UNESCAPES)
                )
            out.append(_UNESCAPES[e])
            i += 2
            continue
        out.append(c)
        i += 1
    raise ConditionSyntaxError("unterminated string literal", _byte_offset(source, len(source)), frozenset({q}))


# -- parsing ------------------------------------------------------------------

_PRIMARY_START = frozenset({"string", "true", "false", "(", "!", ROOT})


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.toks = _lex(source)
        self.i = 0
        self.nesting = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, message: str, expected: set[str] | frozenset[str], tok: _Tok | None = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ConditionSyntaxError(f"{message}, found {found}", _byte_offset(self.source, tok.pos), frozenset(expected))

    def expect(self, kind: str) -> _Tok:
        if self.tok.kind != kind:
            self.fail(f"expected {kind!r}", {kind})
        return self.advance()

    def node(self, n: ConditionExpr, at: _Tok) -> ConditionExpr:
        if depth(n) > MAX_DEPTH:
            raise DepthExceeded(
                f"expression deeper than {MAX_DEPTH} levels at byte {_byte_offset(self.source, at.pos)}"
            )
        return n

    def require(self, n: ConditionExpr, want: str, at: _Tok, what: str) -> None:
        if expr_type(n) != want:
            raise ConditionSyntaxError(
                f"type mismatch: {what} must be {want}, got {expr_type(n)}",
                _byte_offset(self.source, at.pos),
            )

    def enter(self, at: _Tok) -> None:
        self.nesting += 1
        if self.nesting > MAX_DEPTH:
            raise DepthExceeded(
                f"expression nested deeper than {MAX_DEPTH} levels at byte {_byte_offset(self.source, at.pos)}"
            )

    def parse(self) -> ConditionExpr:
        start = self.tok
        if start.kind == "eof":
            self.fail("empty expression", _PRIMARY_START)
        expr = self.parse_or()
        if self.tok.kind != "eof":
            self.fail("unexpected trailing input", {"&&", "||", "==", "!=", ".", "end of input"})
        self.require(expr, "bool", start, "a condition")
        return expr

    def parse_or(self) -> ConditionExpr:
        first = self.tok
        left = self.parse_and()
        while self.tok.kind == "||":
            op = self.advance()
            right = self.parse_and()
            self.require(left, "bool", first, "left operand of ||")
            self.require(right, "bool", op, "right operand of ||")
            left = self.node(BoolOp("||", left, right), op)
        return left

    def parse_and(self) -> ConditionExpr:
        first = self.tok
        left = self.parse_eq()
        while self.tok.kind == "&&":
            op = self.advance()
            right = self.parse_eq()
            self.require(left, "bool", first, "left operand of &&")
            self.require(right, "bool", op, "right operand of &&")
            left = self.node(BoolOp("&&", left, right), op)
        return left

    def parse_eq(self) -> ConditionExpr:
        first = self.tok
        left = self.parse_unary()
        if self.tok.kind in ("==", "!="):
            op = self.advance()
            right = self.parse_unary()
            self.require(left, "string", first, f"left operand of {op.kind}")
            self.require(right, "string", op, f"right operand of {op.kind}")
            left = self.node(Equality(op.kind, left, right), op)
            if self.tok.kind in ("==", "!="):
                self.fail("equality does not chain", {"&&", "||", ")", "end of input"})
        return left

    def parse_unary(self) -> ConditionExpr:
        if self.tok.kind == "!":
            bang = self.advance()
            self.enter(bang)
            operand = self.parse_unary()
            self.nesting -= 1
            self.require(operand, "bool", bang, "operand of !")
            return self.node(Not(operand), bang)
        return self.parse_postfix()

    def parse_postfix(self) -> ConditionExpr:
        expr = self.parse_primary()
        while self.tok.kind == ".":
            dot = self.advance()
            name = self.tok
            if name.kind != "ident" or name.text not in METHODS:
                self.fail("expected method name", set(METHODS))
            self.advance()
            expr = self.finish_call(expr, name.text, dot)
        return expr

    def finish_call(self, receiver: ConditionExpr, method: str, at: _Tok) -> ConditionExpr:
        self.expect("(")
        self.enter(at)
        arg_start = self.tok
        argument = self.parse_or()
        self.nesting -= 1
        self.expect(")")
        self.require(receiver, "string", at, f"receiver of {method}")
        self.require(argument, "string", arg_start, f"argument of {method}")
        return self.node(MethodCall(receiver, method, argument), at)

    def parse_primary(self) -> ConditionExpr:
        t = self.tok
        if t.kind == "string":
            self.advance()
            return StringLiteral(t.text)
        if t.kind == "(":
            self.advance()
            self.enter(t)
            inner = self.parse_or()
            self.nesting -= 1
            self.expect(")")
            return self.node(Parenthesized(inner), t)
        if t.kind == "ident":
            if t.text in ("true", "false"):
                self.advance()
                return BoolLiteral(t.text == "true")
            if t.text == ROOT:
                return self.parse_path()
            self.fail(f"unknown identifier {t.text!r}; attribute paths start with '{ROOT}'", _PRIMARY_START)
        self.fail("expected an expression", _PRIMARY_START)
        raise AssertionError("unreachable")

    def parse_path(self) -> ConditionExpr:
        self.advance()  # root
        segments: list[str] = []
        while self.tok.kind == ".":
            dot = self.advance()
            seg = self.tok
            if seg.kind != "ident":
                self.fail("expected attribute name", {"identifier"})
            self.advance()
            if self.tok.kind == "(":
                if not segments:
                    self.fail(f"'{ROOT}' itself has no methods; name an attribute first", {"identifier"}, seg)
                if seg.text not in METHODS:
                    self.fail(f"unknown method {seg.text!r}", set(METHODS), seg)
                return self.finish_call(AttributePath(tuple(segments)), seg.text, dot)
            segments.append(seg.text)
        if not segments:
            self.fail(f"'{ROOT}' must be followed by an attribute", {"."})
        return AttributePath(tuple(segments))


def parse_condition(source: str) -> ConditionExpr:
    if not isinstance(source, str):
        raise TypeError("condition source must be a string")
    if len(source) > MAX_SOURCE_LENGTH:
        raise ConditionSyntaxError(
            f"condition longer than {MAX_SOURCE_LENGTH} characters", _byte_offset(source, MAX_SOURCE_LENGTH)
        )
    return _Parser(source).parse()


# -- evaluation ---------------------------------------------------------------


class AssertionContext(Mapping):
    """Asserted attributes keyed by dotted path (``arn``, ``kubernetes.namespace``)."""

    def __init__(self, values: Mapping[str, str] | None = None, **kw: str):
        merged = dict(values or {}, **kw)
        for k, v in merged.items():
            if not isinstance(k, str) or not k:
                raise ValueError("assertion attribute names must be non-empty strings")
            if not isinstance(v, str):
                raise ValueError(f"assertion attribute {k!r} must be a string")
        self._values = merged

    def __getitem__(self, path: str) -> str:
        return self._values[path]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        return f"AssertionContext({self._values!r})"

    def lookup(self, path: str) -> str:
        try:
            return self._values[path]
        except KeyError:
            raise MissingAttribute(path) from None

    @classmethod
    def from_claims(cls, claims: Any) -> "AssertionContext":
        """Flatten verified claims. ``aud`` is only present for single-audience
        tokens; nested maps become dotted paths; non-string leaves are skipped
        except integers, which are rendered in decimal."""
        values: dict[str, str] = {"iss": claims.issuer, "sub": claims.subject}
        if len(claims.audience) == 1:
            values["aud"] = claims.audience[0]
        if claims.jwt_id:
            values["jti"] = claims.jwt_id

        def walk(prefix: str, obj: Any) -> None:
            for k, v in obj.items():
                path = f"{prefix}{k}"
                if isinstance(v, Mapping):
                    walk(path + ".", v)
                elif isinstance(v, str):
                    values[path] = v
                elif isinstance(v, int) and not isinstance(v, bool):
                    values[path] = str(v)

        walk("", claims.extra)
        return cls(values)


def _eval(node: ConditionExpr, ctx: AssertionContext) -> str | bool:
    if isinstance(node, StringLiteral):
        return node.value
    if isinstance(node, BoolLiteral):
        return node.value
    if isinstance(node, AttributePath):
        return ctx.lookup(node.path)
    if isinstance(node, Parenthesized):
        return _eval(node.inner, ctx)
    if isinstance(node, Not):
        return not _bool(node.operand, ctx)
    if isinstance(node, BoolOp):
        left = _bool(node.left, ctx)
        if node.op == "&&":
            return left and _bool(node.right, ctx)
        if node.op == "||":
            return left or _bool(node.right, ctx)
        raise TypeMismatch(f"unknown boolean operator {node.op!r}")
    if isinstance(node, Equality):
        left, right = _str(node.left, ctx), _str(node.right, ctx)
        if node.op == "==":
            return left == right
        if node.op == "!=":
            return left != right
        raise TypeMismatch(f"unknown equality operator {node.op!r}")
    if isinstance(node, MethodCall):
        recv, arg = _str(node.receiver, ctx), _str(node.argument, ctx)
        if node.method == "endsWith":
            return recv.endswith(arg)
        if node.method == "startsWith":
            return recv.startswith(arg)
        if node.method == "contains":
            return arg in recv
        raise TypeMismatch(f"unknown method {node.method!r}")
    raise TypeMismatch(f"not a condition node: {node!r}")


def _bool(node: ConditionExpr, ctx: AssertionContext) -> bool:
    v = _eval(node, ctx)
    if not isinstance(v, bool):
        raise TypeMismatch(f"expected bool, got string from {to_source(node)}")
    return v


def _str(node: ConditionExpr, ctx: AssertionContext) -> str:
    v = _eval(node, ctx)
    if not isinstance(v, str):
        raise TypeMismatch(f"expected string, got bool from {to_source(node)}")
    return v


def eval_condition(expr: ConditionExpr, ctx: AssertionContext | Mapping[str, str]) -> bool:
    """Evaluate with short-circuiting. A missing attribute raises
    :class:`MissingAttribute`; callers decide how to fail closed."""
    if not isinstance(ctx, AssertionContext):
        ctx = AssertionContext(ctx)
    return _bool(expr, ctx)


# -- attribute mapping --------------------------------------------------------


class AttributeMapping:
    """Ordered projection of asserted attributes onto target attribute names.

    Each source is a path or a string literal; no transformations.
    """

    def __init__(self, entries: Mapping[str, ConditionExpr]):
        self.entries: dict[str, ConditionExpr] = {}
        for target, expr in entries.items():
            if not isinstance(target, str) or not target:
                raise ValueError("mapping targets must be non-empty strings")
            inner = expr
            while isinstance(inner, Parenthesized):
                inner = inner.inner
            if not isinstance(inner, (AttributePath, StringLiteral)):
                raise ConditionSyntaxError(
                    f"mapping for {target!r} must be an attribute path or string literal", 0
                )
            self.entries[target] = inner

    @classmethod
    def parse(cls, raw: Mapping[str, str]) -> "AttributeMapping":
        entries = {}
        for target, source in raw.items():
            if not isinstance(source, str):
                raise ConditionSyntaxError(f"mapping for {target!r} must be a string", 0)
            entries[target] = _parse_mapping_source(source)
        return cls(entries)

    def to_dict(self) -> dict[str, str]:
        return {k: to_source(v) for k, v in self.entries.items()}

    def __contains__(self, target: str) -> bool:
        return target in self.entries

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AttributeMapping) and list(self.entries.items()) == list(other.entries.items())

    def __repr__(self) -> str:
        return f"AttributeMapping({self.to_dict()!r})"


def _parse_mapping_source(source: str) -> ConditionExpr:
    if len(source) > MAX_SOURCE_LENGTH:
        raise ConditionSyntaxError("mapping source too long", MAX_SOURCE_LENGTH)
    p = _Parser(source)
    expr = p.parse_postfix() if p.tok.kind != "eof" else p.fail("empty mapping", _PRIMARY_START)
    if p.tok.kind != "eof":
        p.fail("unexpected trailing input in mapping", {"end of input"})
    return expr


def apply_mapping(mapping: AttributeMapping, ctx: AssertionContext | Mapping[str, str]) -> dict[str, str]:
    if not isinstance(ctx, AssertionContext):
        ctx = AssertionContext(ctx)
    return {target: _str(expr, ctx) for target, expr in mapping.entries.items()}


# -- StringEquals -------------------------------------------------------------


@dataclass(frozen=True)
class StringEqualsCondition:
    """Claim key -> required value. Keys look like ``<issuer-host-path>:<claim>``
    or a bare claim name."""

    requirements: Mapping[str, str]

    def __post_init__(self) -> None:
        for k, v in self.requirements.items():
            if not isinstance(k, str) or not k or not isinstance(v, str):
                raise ValueError("StringEquals entries must map non-empty strings to strings")


def issuer_host_path(issuer: str) -> str:
    """``https://idp.local/x/`` -> ``idp.local/x`` (the prefix used in condition keys)."""
    rest = issuer.split("://", 1)[-1]
    return rest.rstrip("/")


def _claim_values(name: str, claims: Any) -> list[str] | None:
    if name == "sub":
        return [claims.subject]
    if name == "aud":
        return list(claims.audience)
    if name == "iss":
        return [claims.issuer]
    if name == "jti":
        return [claims.jwt_id] if claims.jwt_id else None
    obj: Any = claims.extra
    for part in name.split("."):
        if not isinstance(obj, Mapping) or part not in obj:
            return None
        obj = obj[part]
    return [obj] if isinstance(obj, str) else None


def eval_string_equals(cond: StringEqualsCondition, claims: Any) -> bool:
    """Every key must resolve to a claim equal to its required string.

    Missing claims, or a key prefix naming a different issuer, count as a
    mismatch. A multi-valued ``aud`` matches if it contains the value.
    """
    for key, required in cond.requirements.items():
        name = key
        if ":" in key:
            prefix, name = key.rsplit(":", 1)
            if prefix != issuer_host_path(claims.issuer):
                return False
        values = _claim_values(name, claims)
        if values is None or required not in values:
            return False
    return True
