"""A small, terminating predicate language over attestation claims.

Grammar (lowest precedence first)::

    expr    := or
    or      := and ("||" and)*
    and     := unary ("&&" unary)*
    unary   := "!" unary | compare
    compare := primary (("==" | "!=") primary | "in" (list | accessor))?
    primary := literal | accessor | "(" expr ")"
    accessor:= ("claims" | "config") "[" string "]"
    list    := "[" literal ("," literal)* "]"
    literal := integer | hex | string | "true" | "false"

Both sides of ``&&`` and ``||`` are always evaluated, so a reference to an
absent claim is an error wherever it appears.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping, Union

__all__ = [
    "PolicyError",
    "PolicySyntaxError",
    "MissingClaim",
    "TypeMismatch",
    "Hex",
    "Literal",
    "Accessor",
    "ListLit",
    "Not",
    "BinOp",
    "PolicyDocument",
    "parse_policy",
    "pretty",
    "eval_policy",
    "eval_all",
    "check_inheritance",
    "ROLE_TABLE_POLICY",
]


class PolicyError(Exception):
    pass


class PolicySyntaxError(PolicyError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class MissingClaim(PolicyError):
    pass


class TypeMismatch(PolicyError):
    pass


@dataclass(frozen=True)
class Hex:
    value: int

    def __str__(self) -> str:
        return f"0x{self.value:x}"


Value = Union[bool, int, str, Hex, tuple]


@dataclass(frozen=True)
class Literal:
    value: Value


@dataclass(frozen=True)
class Accessor:
    source: str
    key: str


@dataclass(frozen=True)
class ListLit:
    items: tuple[Literal, ...]


@dataclass(frozen=True)
class Not:
    operand: Expr


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Expr
    right: Expr


Expr = Union[Literal, Accessor, ListLit, Not, BinOp]


# ---------------------------------------------------------------------------
# Lexing and parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<hex>0[xX][0-9a-fA-F]+)
  | (?P<int>\d+)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<op>&&|\|\||==|!=|!|\(|\)|\[|\]|,)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _lex(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self, kind: str | None = None, text: str | None = None) -> _Tok:
        tok = self.peek()
        if (kind and tok.kind != kind) or (text and tok.text != text):
            want = text or kind
            got = tok.text or "end of input"
            raise PolicySyntaxError(f"expected {want!r}, found {got!r}", tok.pos)
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.peek().text == text and self.peek().kind in ("op", "ident"):
            self.i += 1
            return True
        return False

    def parse(self) -> Expr:
        expr = self.or_()
        self.take("eof")
        return expr

    def or_(self) -> Expr:
        left = self.and_()
        while self.accept("||"):
            left = BinOp("||", left, self.and_())
        return left

    def and_(self) -> Expr:
        left = self.unary()
        while self.accept("&&"):
            left = BinOp("&&", left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.accept("!"):
            return Not(self.unary())
        return self.compare()

    def compare(self) -> Expr:
        left = self.primary()
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("==", "!="):
            self.i += 1
            return BinOp(tok.text, left, self.primary())
        if tok.kind == "ident" and tok.text == "in":
            self.i += 1
            if self.peek().text == "[":
                return BinOp("in", left, self.list_())
            return BinOp("in", left, self.accessor())
        return left

    def list_(self) -> ListLit:
        self.take("op", "[")
        items = [self.literal()]
        while self.accept(","):
            items.append(self.literal())
        self.take("op", "]")
        return ListLit(tuple(items))

    def literal(self) -> Literal:
        tok = self.peek()
        if tok.kind == "hex":
            self.i += 1
            return Literal(Hex(int(tok.text, 16)))
        if tok.kind == "int":
            self.i += 1
            return Literal(int(tok.text))
        if tok.kind == "str":
            self.i += 1
            return Literal(json.loads(tok.text))
        if tok.kind == "ident" and tok.text in ("true", "false"):
            self.i += 1
            return Literal(tok.text == "true")
        raise PolicySyntaxError(f"expected a literal, found {tok.text or 'end of input'!r}", tok.pos)

    def accessor(self) -> Accessor:
        tok = self.take("ident")
        if tok.text not in ("claims", "config"):
            raise PolicySyntaxError(f"unknown identifier {tok.text!r}", tok.pos)
        self.take("op", "[")
        key = self.take("str")
        self.take("op", "]")
        return Accessor(tok.text, json.loads(key.text))

    def primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            inner = self.or_()
            self.take("op", ")")
            return inner
        if tok.kind == "ident" and tok.text in ("claims", "config"):
            return self.accessor()
        return self.literal()


def parse_policy(text: str) -> Expr:
    try:
        return _Parser(text).parse()
    except json.JSONDecodeError as exc:  # bad escape inside a string literal
        raise PolicySyntaxError(f"bad string literal: {exc.msg}", exc.pos) from None


_LEVEL = {"||": 1, "&&": 2, "==": 4, "!=": 4, "in": 4}


def _fmt_literal(v: Value) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, Hex):
        return str(v)
    if isinstance(v, int):
        return str(v)
    return json.dumps(v)


def pretty(expr: Expr, _need: int = 0) -> str:
    """Canonical source form; ``parse_policy(pretty(e)) == e``."""
    if isinstance(expr, Literal):
        return _fmt_literal(expr.value)
    if isinstance(expr, Accessor):
        return f"{expr.source}[{json.dumps(expr.key)}]"
    if isinstance(expr, ListLit):
        return "[" + ", ".join(_fmt_literal(i.value) for i in expr.items) + "]"
    if isinstance(expr, Not):
        level, text = 3, "!" + pretty(expr.operand, 3)
    else:
        level = _LEVEL[expr.op]
        if level == 4:
            text = f"{pretty(expr.left, 5)} {expr.op} {pretty(expr.right, 5)}"
        else:
            text = f"{pretty(expr.left, level)} {expr.op} {pretty(expr.right, level + 1)}"
    return f"({text})" if level < _need else text


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_HEX_CLAIM = re.compile(r"^0[xX][0-9a-fA-F]+$")


def _lift(v: object) -> Value:
    """Map a claim value onto the language's value domain."""
    if isinstance(v, bool):
        return v
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        return Hex(int(v, 16)) if _HEX_CLAIM.match(v) else v
    if isinstance(v, (list, tuple)):
        return tuple(_lift(i) for i in v)
    raise TypeMismatch(f"unsupported claim value {v!r}")


def _kind(v: Value) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, Hex):
        return "hex"
    if isinstance(v, str):
        return "string"
    return "list"


def _equal(a: Value, b: Value) -> bool:
    ka, kb = _kind(a), _kind(b)
    if ka != kb or ka == "list":
        raise TypeMismatch(f"cannot compare {ka} with {kb}")
    return a == b


def _eval(expr: Expr, claims: Mapping[str, object], config: Mapping[str, object]) -> Value:
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Accessor):
        source = claims if expr.source == "claims" else config
        if expr.key not in source:
            raise MissingClaim(f'{expr.source}["{expr.key}"] is not present')
        return _lift(source[expr.key])
    if isinstance(expr, ListLit):
        return tuple(i.value for i in expr.items)
    if isinstance(expr, Not):
        v = _eval(expr.operand, claims, config)
        if not isinstance(v, bool):
            raise TypeMismatch(f"'!' needs a boolean, got {_kind(v)}")
        return not v
    left = _eval(expr.left, claims, config)
    right = _eval(expr.right, claims, config)
    if expr.op in ("&&", "||"):
        if not isinstance(left, bool) or not isinstance(right, bool):
            raise TypeMismatch(f"'{expr.op}' needs booleans, got {_kind(left)} and {_kind(right)}")
        return (left and right) if expr.op == "&&" else (left or right)
    if expr.op == "==":
        return _equal(left, right)
    if expr.op == "!=":
        return not _equal(left, right)
    # membership
    if not isinstance(right, tuple):
        raise TypeMismatch(f"'in' needs a list on the right, got {_kind(right)}")
    return any([_equal(left, item) for item in right])


def eval_policy(policy: Expr | str, claims: Mapping[str, object], config: Mapping[str, object] | None = None) -> bool:
    if isinstance(policy, str):
        policy = parse_policy(policy)
    result = _eval(policy, claims, config or {})
    if not isinstance(result, bool):
        raise TypeMismatch(f"policy evaluated to {_kind(result)}, not boolean")
    return result


# ---------------------------------------------------------------------------
# Documents and inheritance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyDocument:
    """A zone's own policy plus the verbatim policies of its ancestors,
    ordered from the island apex downwards."""

    kind: str
    zone: str
    own: str
    inherited: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.kind not in ("registration", "delegation"):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def chain(self) -> list[tuple[str, str]]:
        return [*self.inherited, (self.zone, self.own)]

    def child_inheritance(self) -> tuple[tuple[str, str], ...]:
        """What a child's ``inherited`` list must be to pass inheritance."""
        return tuple(self.chain())

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "zone": self.zone,
            "own": self.own,
            "inherited": [[z, t] for z, t in self.inherited],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> PolicyDocument:
        return cls(
            data["kind"],
            data["zone"],
            data["own"],
            tuple((z, t) for z, t in data.get("inherited", ())),
        )


def check_inheritance(child: PolicyDocument, parent: PolicyDocument) -> bool:
    """True iff the child carries the parent's whole chain, byte for byte."""
    if child.kind != "delegation" or parent.kind != "delegation":
        return False
    return list(child.inherited) == parent.chain()


def eval_all(doc: PolicyDocument, claims: Mapping[str, object], config: Mapping[str, object] | None = None) -> bool:
    """Conjunction of every inherited policy and the document's own policy."""
    results = [eval_policy(text, claims, config) for _, text in doc.chain()]
    return all(results)


ROLE_TABLE_POLICY = (
    '(config["role"] == "front-end" && claims["hostdata"] == 0xDEADC0DE'
    ' && claims["measurement"] == 0xFEEDFACE)'
    ' || (config["role"] == "back-end" && claims["hostdata"] == 0xBAADF00D'
    ' && claims["measurement"] == 0x8BADF00D)'
)
