"""Tokenizer and expression parser shared by the program DSL and p4q.

Grammar (lowest precedence first)::

    or      := and ('||' and)*
    and     := rel ('&&' rel)*
    rel     := sum (('=='|'!='|'<'|'<='|'>'|'>=') sum)?
    sum     := unary (('+'|'-') unary)*
    unary   := ('!'|'-') unary | primary
    primary := NUMBER | 'true' | 'false' | NAME ['(' args ')'] | '(' or ')'

NAME may be dotted (``ing.ipv4.ttl``).  Numbers accept decimal, ``0x`` hex,
dotted IPv4 addresses and colon-separated MAC addresses.
"""

import re
from dataclasses import dataclass, field

from .packet import format_ipv4_addr, parse_ipv4_addr, parse_mac


class ExprSyntaxError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<mac>[0-9a-fA-F]{2}(?::[0-9a-fA-F]{2}){5}(?![0-9A-Za-z_:]))
  | (?P<ipv4>\d{1,3}(?:\.\d{1,3}){3}(?![0-9A-Za-z_.]))
  | (?P<hex>0[xX][0-9a-fA-F]+)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<op>==|!=|<=|>=|&&|\|\||->|[<>!+\-(),{}=;\[\]@:/*])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "name", "op", "eof"
    text: str
    line: int
    value: int = None
    style: str = None


def tokenize(text, line=1):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", line)
        kind = m.lastgroup
        s = m.group()
        pos = m.end()
        if kind == "nl":
            line += 1
        elif kind in ("ws", "comment"):
            continue
        elif kind == "mac":
            tokens.append(Token("num", s, line, parse_mac(s), "mac"))
        elif kind == "ipv4":
            try:
                v = parse_ipv4_addr(s)
            except ValueError as e:
                raise ExprSyntaxError(str(e), line) from None
            tokens.append(Token("num", s, line, v, "ipv4"))
        elif kind == "hex":
            tokens.append(Token("num", s, line, int(s, 16), "hex"))
        elif kind == "int":
            tokens.append(Token("num", s, line, int(s), "dec"))
        elif kind == "name":
            tokens.append(Token("name", s, line))
        else:
            tokens.append(Token("op", s, line))
    tokens.append(Token("eof", "", line))
    return tokens


@dataclass(frozen=True)
class Num:
    value: int
    style: str = field(default="dec", compare=False)


@dataclass(frozen=True)
class Ref:
    path: tuple  # ("ing", "ipv4", "ttl"), ("port",) ...

    @property
    def dotted(self):
        return ".".join(self.path)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class Unary:
    op: str
    operand: object


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


RELOPS = ("==", "!=", "<", "<=", ">", ">=")
_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3, "+": 4, "-": 4}


class TokenStream:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self, offset=0):
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def at(self, text, kind=None):
        tok = self.peek()
        if kind is not None and tok.kind != kind:
            return False
        return tok.text == text and tok.kind in ("op", "name")

    def accept(self, text):
        if self.at(text):
            return self.next()
        return None

    def expect(self, text):
        tok = self.next()
        if tok.text != text or tok.kind not in ("op", "name"):
            raise ExprSyntaxError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line)
        return tok

    def expect_name(self):
        tok = self.next()
        if tok.kind != "name":
            raise ExprSyntaxError(f"expected a name, found {tok.text or 'end of input'!r}", tok.line)
        return tok

    @property
    def done(self):
        return self.peek().kind == "eof"


def parse_expr(ts):
    return _parse_binary(ts, 1)


def _parse_binary(ts, min_prec):
    left = _parse_unary(ts)
    compared = False  # ``left`` is an unparenthesized comparison
    while True:
        tok = ts.peek()
        prec = _PREC.get(tok.text) if tok.kind == "op" else None
        if prec is None or prec < min_prec:
            return left
        ts.next()
        right = _parse_binary(ts, prec + 1)
        if prec == 3 and compared:
            raise ExprSyntaxError("chained comparison", tok.line)
        compared = prec == 3
        left = Binary(tok.text, left, right)


def _parse_unary(ts):
    tok = ts.peek()
    if tok.kind == "op" and tok.text in ("!", "-"):
        ts.next()
        return Unary(tok.text, _parse_unary(ts))
    return _parse_primary(ts)


def _parse_primary(ts):
    tok = ts.next()
    if tok.kind == "num":
        return Num(tok.value, tok.style)
    if tok.kind == "name":
        if tok.text == "true":
            return Num(1, "bool")
        if tok.text == "false":
            return Num(0, "bool")
        if ts.at("("):
            ts.next()
            args = []
            if not ts.at(")"):
                args.append(parse_expr(ts))
                while ts.accept(","):
                    args.append(parse_expr(ts))
            ts.expect(")")
            return Call(tok.text, tuple(args))
        return Ref(tuple(tok.text.split(".")))
    if tok.kind == "op" and tok.text == "(":
        inner = parse_expr(ts)
        ts.expect(")")
        return inner
    raise ExprSyntaxError(f"unexpected {tok.text or 'end of input'!r}", tok.line)


def parse_expression(text, line=1):
    ts = TokenStream(tokenize(text, line))
    node = parse_expr(ts)
    if not ts.done:
        tok = ts.peek()
        raise ExprSyntaxError(f"trailing input {tok.text!r}", tok.line)
    return node


def render(node, parent_prec=0, right=False):
    if isinstance(node, Num):
        if node.style == "bool":
            return "true" if node.value else "false"
        if node.style == "hex":
            return hex(node.value)
        if node.style == "ipv4" and node.value < (1 << 32):
            return format_ipv4_addr(node.value)
        if node.style == "mac" and node.value < (1 << 48):
            return ":".join(f"{(node.value >> s) & 0xFF:02x}" for s in range(40, -8, -8))
        return str(node.value)
    if isinstance(node, Ref):
        return node.dotted
    if isinstance(node, Call):
        return f"{node.name}({', '.join(render(a) for a in node.args)})"
    if isinstance(node, Unary):
        inner = render(node.operand, 5)
        return f"{node.op}{inner}"
    if isinstance(node, Binary):
        prec = _PREC[node.op]
        # comparisons do not chain, so a comparison on the left needs parentheses
        chained = node.op in RELOPS and isinstance(node.left, Binary) and node.left.op in RELOPS
        s = f"{render(node.left, prec, chained)} {node.op} {render(node.right, prec, True)}"
        if prec < parent_prec or (right and prec == parent_prec):
            return f"({s})"
        return s
    raise TypeError(node)


def walk(node):
    yield node
    if isinstance(node, Call):
        for a in node.args:
            yield from walk(a)
    elif isinstance(node, Unary):
        yield from walk(node.operand)
    elif isinstance(node, Binary):
        yield from walk(node.left)
        yield from walk(node.right)
