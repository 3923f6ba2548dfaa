"""The ``.p4l`` program language: parser, renderer, validator and static analysis.

A program is line oriented.  Every non-blank, non-comment line holds exactly
one declaration or statement, so an executed statement is identified by its
line number alone.  Example::

    header ipv4 {
      field version : 4
      ...
    }
    parser {
      state start {
        extract ethernet
        select ethernet.ether_type { 0x0800 -> parse_ipv4, default -> accept }
      }
    }
    action forward(port) {
      set std.egress_port = port
    }
    table ipv4_lpm lpm on ipv4.dst_addr { forward, drop_packet } default drop_packet
    control ingress {
      apply ipv4_lpm
    }
    deparser {
      emit ethernet
    }
"""

import re
from dataclasses import dataclass, field

from . import expr as ex
from .packet import HeaderLayout


class ProgramError(Exception):
    pass


class ProgramSyntaxError(ProgramError):
    def __init__(self, line, message):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class UnresolvedIdentifier(ProgramError):
    def __init__(self, line, name):
        self.line = line
        self.name = name
        super().__init__(f"line {line}: unresolved identifier {name!r}")


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


STD_METADATA = "std"
STD_FIELDS = (("ingress_port", 9), ("egress_port", 9), ("instance_type", 8))
# values of std.instance_type
INSTANCE_NORMAL, INSTANCE_RESUBMIT, INSTANCE_CLONE, INSTANCE_REPLICA = 0, 1, 2, 3

_REF_PREFIXES = {"hdr", "meta", "standard_metadata"}


# ---------------------------------------------------------------- AST nodes
# ``line`` never takes part in equality, so two ASTs compare equal when they
# have the same structure regardless of where their statements sit.


def _line():
    return field(default=0, compare=False)


@dataclass
class Set:
    target: ex.Ref
    value: object
    line: int = _line()


@dataclass
class Decrement:
    target: ex.Ref
    line: int = _line()


@dataclass
class ChecksumOp:
    kind: str  # "update" | "verify"
    header: str
    line: int = _line()


@dataclass
class Drop:
    line: int = _line()


@dataclass
class Clone:
    session: object
    line: int = _line()


@dataclass
class Multicast:
    group: object
    line: int = _line()


@dataclass
class Resubmit:
    line: int = _line()


@dataclass
class Apply:
    table: str
    line: int = _line()


@dataclass
class CallAction:
    action: str
    line: int = _line()


@dataclass
class If:
    cond: object
    then_body: list
    else_body: list = None
    line: int = _line()
    else_line: int = _line()
    end_line: int = _line()


@dataclass
class Extract:
    header: str
    line: int = _line()


@dataclass
class Select:
    key: ex.Ref
    cases: list  # [(value or None for default, state)]
    line: int = _line()


@dataclass
class Transition:
    state: str
    line: int = _line()


@dataclass
class Accept:
    line: int = _line()


@dataclass
class Reject:
    line: int = _line()


@dataclass
class Emit:
    header: str
    line: int = _line()


@dataclass
class HeaderDecl:
    name: str
    fields: list  # [(name, width)]
    is_metadata: bool = False
    line: int = _line()
    end_line: int = _line()


@dataclass
class ParserState:
    name: str
    body: list
    line: int = _line()
    end_line: int = _line()


@dataclass
class ActionDecl:
    name: str
    params: list
    body: list
    line: int = _line()
    end_line: int = _line()


@dataclass
class TableDecl:
    name: str
    kind: str  # "lpm" | "exact"
    key: ex.Ref
    actions: list
    default_action: str = None
    line: int = _line()


@dataclass
class Block:
    """A control or deparser body."""

    name: str  # "ingress", "egress" or "deparser"
    body: list
    line: int = _line()
    end_line: int = _line()


@dataclass
class ProgramAst:
    headers: list = field(default_factory=list)
    parser_states: list = field(default_factory=list)
    tables: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    controls: dict = field(default_factory=dict)
    deparser: Block = None
    parser_line: int = _line()
    parser_end_line: int = _line()
    source: tuple = field(default=(), compare=False, repr=False)

    def header(self, name):
        for h in self.headers:
            if h.name == name:
                return h
        return None

    def table(self, name):
        for t in self.tables:
            if t.name == name:
                return t
        return None

    def action(self, name):
        for a in self.actions:
            if a.name == name:
                return a
        return None

    def state(self, name):
        for s in self.parser_states:
            if s.name == name:
                return s
        return None

    def field_width(self, header, fname):
        if header == STD_METADATA:
            return dict(STD_FIELDS).get(fname)
        h = self.header(header)
        if h is None:
            return None
        return dict(h.fields).get(fname)

    def regions(self):
        """Statement-bearing regions in source order."""
        out = [Region("state", s.name, s.line, s.end_line, s.body) for s in self.parser_states]
        out += [Region("action", a.name, a.line, a.end_line, a.body) for a in self.actions]
        for name in ("ingress", "egress"):
            c = self.controls.get(name)
            if c is not None:
                out.append(Region("control", name, c.line, c.end_line, c.body))
        if self.deparser is not None:
            d = self.deparser
            out.append(Region("deparser", "deparser", d.line, d.end_line, d.body))
        return sorted(out, key=lambda r: r.open_line)

    def region_of(self, line):
        for r in self.regions():
            if r.open_line <= line <= r.close_line:
                return r
        return None

    def statement_lines(self):
        lines = set()
        for r in self.regions():
            for st in iter_statements(r.body):
                lines.add(st.line)
        return lines


@dataclass(frozen=True)
class Region:
    kind: str
    name: str
    open_line: int
    close_line: int
    body: list = field(compare=False, repr=False)


def iter_statements(body):
    for st in body:
        yield st
        if isinstance(st, If):
            yield from iter_statements(st.then_body)
            if st.else_body:
                yield from iter_statements(st.else_body)


# ---------------------------------------------------------------- parsing


def source_lines(text):
    """1-based ``(line_number, text)`` pairs."""
    return [(i + 1, t) for i, t in enumerate(text.split("\n"))]


_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"


def _strip(text):
    i = text.find("#")
    if i >= 0:
        text = text[:i]
    return text.strip()


def normalize_ref(ref, line):
    path = ref.path
    if len(path) == 3 and path[0] in _REF_PREFIXES:
        path = path[1:]
    if path and path[0] == "standard_metadata":
        path = (STD_METADATA,) + path[1:]
    return ex.Ref(path)


def _normalize_expr(node, line):
    if isinstance(node, ex.Ref):
        return normalize_ref(node, line)
    if isinstance(node, ex.Unary):
        return ex.Unary(node.op, _normalize_expr(node.operand, line))
    if isinstance(node, ex.Binary):
        return ex.Binary(node.op, _normalize_expr(node.left, line), _normalize_expr(node.right, line))
    if isinstance(node, ex.Call):
        raise ProgramSyntaxError(line, f"function calls are not allowed in expressions ({node.name})")
    return node


def _parse_expr(text, line):
    try:
        return _normalize_expr(ex.parse_expression(text, line), line)
    except ex.ExprSyntaxError as e:
        raise ProgramSyntaxError(line, e.message) from None


def _parse_ref(text, line):
    node = _parse_expr(text, line)
    if not isinstance(node, ex.Ref) or len(node.path) != 2:
        raise ProgramSyntaxError(line, f"expected a header field reference, got {text!r}")
    return node


class _Lines:
    def __init__(self, text):
        self.items = [(n, _strip(t)) for n, t in source_lines(text)]
        self.items = [(n, t) for n, t in self.items if t]
        self.pos = 0

    def next(self):
        if self.pos >= len(self.items):
            return None, None
        item = self.items[self.pos]
        self.pos += 1
        return item

    @property
    def last_line(self):
        return self.items[-1][0] if self.items else 1


def _one_statement(line, text):
    if text.endswith(";"):
        text = text[:-1].rstrip()
    if ";" in text:
        raise ProgramSyntaxError(line, "exactly one statement per line is allowed")
    return text


_PARSER_ONLY = ("extract", "select", "transition", "accept", "reject")


def _parse_statement(line, text, ctx):
    """Parse one non-block statement line."""
    word = text.split(None, 1)[0] if text else ""
    word = word.split("(", 1)[0]
    rest = text[len(word):].strip()
    if word in _PARSER_ONLY and ctx != "parser":
        raise ProgramSyntaxError(line, f"{word!r} is only allowed inside parser states")
    if word == "emit" and ctx != "deparser":
        raise ProgramSyntaxError(line, "'emit' is only allowed in the deparser")
    if word == "set":
        m = re.fullmatch(r"(\S+)\s*=\s*(.+)", rest)
        if not m:
            raise ProgramSyntaxError(line, "expected 'set <field> = <expr>'")
        return Set(_parse_ref(m.group(1), line), _parse_expr(m.group(2), line), line=line)
    if word == "decrement":
        return Decrement(_parse_ref(rest, line), line=line)
    if word in ("update_checksum", "verify_checksum"):
        m = re.fullmatch(r"\(?\s*(?:hdr\.)?(" + _IDENT + r")\s*\)?", rest)
        if not m:
            raise ProgramSyntaxError(line, f"expected '{word}(<header>)'")
        return ChecksumOp(word.split("_")[0], m.group(1), line=line)
    if word in ("drop", "resubmit", "accept", "reject"):
        if rest not in ("", "()"):
            raise ProgramSyntaxError(line, f"unexpected text after {word!r}")
        return {"drop": Drop, "resubmit": Resubmit, "accept": Accept, "reject": Reject}[word](line=line)
    if word == "clone":
        return Clone(_parse_expr(rest, line), line=line)
    if word == "multicast":
        return Multicast(_parse_expr(rest, line), line=line)
    if word in ("apply", "call", "extract", "transition", "emit"):
        m = re.fullmatch(r"(?:hdr\.)?(" + _IDENT + r")", rest)
        if not m:
            raise ProgramSyntaxError(line, f"expected '{word} <name>'")
        name = m.group(1)
        return {"apply": Apply, "call": CallAction, "extract": Extract,
                "transition": Transition, "emit": Emit}[word](name, line=line)
    if word == "select":
        m = re.fullmatch(r"(\S+)\s*\{(.*)\}", rest)
        if not m:
            raise ProgramSyntaxError(line, "expected 'select <field> { <value> -> <state>, ... }'")
        key = _parse_ref(m.group(1), line)
        cases = []
        for part in m.group(2).split(","):
            part = part.strip()
            if not part:
                continue
            cm = re.fullmatch(r"(\S+)\s*->\s*(" + _IDENT + r")", part)
            if not cm:
                raise ProgramSyntaxError(line, f"bad select case {part!r}")
            if cm.group(1) == "default":
                value = None
            else:
                v = _parse_expr(cm.group(1), line)
                if not isinstance(v, ex.Num):
                    raise ProgramSyntaxError(line, f"select case value must be a literal: {cm.group(1)!r}")
                value = v.value
            cases.append((value, cm.group(2)))
        if not cases:
            raise ProgramSyntaxError(line, "select needs at least one case")
        return Select(key, cases, line=line)
    raise ProgramSyntaxError(line, f"unknown statement {text!r}")


def _parse_block(lines, ctx, open_line):
    """Parse statements until a closing line; returns (body, terminator, line)."""
    body = []
    while True:
        line, raw = lines.next()
        if line is None:
            raise ProgramSyntaxError(lines.last_line, f"block opened at line {open_line} is not closed")
        text = _one_statement(line, raw)
        if text == "}":
            return body, "}", line
        if re.fullmatch(r"\}\s*else\s*\{", text):
            return body, "else", line
        if text.startswith("if ") or text.startswith("if("):
            if not text.endswith("{"):
                raise ProgramSyntaxError(line, "expected '{' at end of 'if' line")
            cond = _parse_expr(text[2:-1].strip(), line)
            then_body, term, tline = _parse_block(lines, ctx, line)
            node = If(cond, then_body, None, line=line)
            if term == "else":
                node.else_line = tline
                node.else_body, term2, eline = _parse_block(lines, ctx, tline)
                if term2 != "}":
                    raise ProgramSyntaxError(eline, "unexpected 'else'")
                node.end_line = eline
            else:
                node.end_line = tline
            body.append(node)
            continue
        if text.endswith("{") and not text.startswith("select"):
            raise ProgramSyntaxError(line, f"unexpected block {text!r}")
        body.append(_parse_statement(line, text, ctx))


def parse_program(src):
    """Parse program text (or a list of ``(line, text)`` pairs) into a ProgramAst."""
    if not isinstance(src, str):
        src = "\n".join(t for _, t in src)
    lines = _Lines(src)
    ast = ProgramAst(source=tuple(src.split("\n")))
    seen_parser = False
    while True:
        line, raw = lines.next()
        if line is None:
            break
        text = _one_statement(line, raw)
        m = re.fullmatch(r"(header|metadata)\s+(" + _IDENT + r")\s*\{", text)
        if m:
            decl = HeaderDecl(m.group(2), [], m.group(1) == "metadata", line=line)
            while True:
                fl, ft = lines.next()
                if fl is None:
                    raise ProgramSyntaxError(lines.last_line, f"header {decl.name} is not closed")
                ft = _one_statement(fl, ft)
                if ft == "}":
                    decl.end_line = fl
                    break
                fm = re.fullmatch(r"field\s+(" + _IDENT + r")\s*:\s*(\d+)", ft)
                if not fm:
                    raise ProgramSyntaxError(fl, "expected 'field <name> : <bits>'")
                decl.fields.append((fm.group(1), int(fm.group(2))))
            ast.headers.append(decl)
            continue
        if text == "parser {":
            if seen_parser:
                raise ProgramSyntaxError(line, "duplicate parser block")
            seen_parser = True
            ast.parser_line = line
            while True:
                sl, st = lines.next()
                if sl is None:
                    raise ProgramSyntaxError(lines.last_line, "parser block is not closed")
                st = _one_statement(sl, st)
                if st == "}":
                    ast.parser_end_line = sl
                    break
                sm = re.fullmatch(r"state\s+(" + _IDENT + r")\s*\{", st)
                if not sm:
                    raise ProgramSyntaxError(sl, "expected 'state <name> {'")
                body, term, end = _parse_block(lines, "parser", sl)
                if term != "}":
                    raise ProgramSyntaxError(end, "unexpected 'else'")
                ast.parser_states.append(ParserState(sm.group(1), body, line=sl, end_line=end))
            continue
        m = re.fullmatch(r"action\s+(" + _IDENT + r")\s*(?:\(([^)]*)\))?\s*\{", text)
        if m:
            params = [p.strip() for p in (m.group(2) or "").split(",") if p.strip()]
            body, term, end = _parse_block(lines, "action", line)
            if term != "}":
                raise ProgramSyntaxError(end, "unexpected 'else'")
            ast.actions.append(ActionDecl(m.group(1), params, body, line=line, end_line=end))
            continue
        m = re.fullmatch(
            r"table\s+(" + _IDENT + r")\s+(lpm|exact)\s+on\s+(\S+)\s*\{([^}]*)\}\s*(?:default\s+(" + _IDENT + r"))?",
            text,
        )
        if m:
            acts = [a.strip() for a in m.group(4).split(",") if a.strip()]
            ast.tables.append(TableDecl(m.group(1), m.group(2), _parse_ref(m.group(3), line), acts,
                                        m.group(5), line=line))
            continue
        if text.startswith("table"):
            raise ProgramSyntaxError(line, "expected 'table <name> <lpm|exact> on <field> { <actions> } [default <action>]'")
        m = re.fullmatch(r"control\s+(ingress|egress)\s*\{", text)
        if m or text == "deparser {":
            name = m.group(1) if m else "deparser"
            body, term, end = _parse_block(lines, name if name == "deparser" else "control", line)
            if term != "}":
                raise ProgramSyntaxError(end, "unexpected 'else'")
            block = Block(name, body, line=line, end_line=end)
            if name == "deparser":
                if ast.deparser is not None:
                    raise ProgramSyntaxError(line, "duplicate deparser")
                ast.deparser = block
            else:
                if name in ast.controls:
                    raise ProgramSyntaxError(line, f"duplicate control {name}")
                ast.controls[name] = block
            continue
        raise ProgramSyntaxError(line, f"unexpected line {text!r}")

    starts = [s for s in ast.parser_states if s.name == "start"]
    if not starts:
        raise ProgramSyntaxError(ast.parser_line or 1, "no start state")
    if len(starts) > 1:
        raise ProgramSyntaxError(starts[1].line, "duplicate start state")
    names = {s.name for s in ast.parser_states} | {"accept", "reject"}
    for s in ast.parser_states:
        for st in iter_statements(s.body):
            targets = []
            if isinstance(st, Select):
                targets = [t for _, t in st.cases]
            elif isinstance(st, Transition):
                targets = [st.state]
            for t in targets:
                if t not in names:
                    raise UnresolvedIdentifier(st.line, t)
    return ast


# ---------------------------------------------------------------- rendering


def _render_stmt(st, indent, out):
    pad = "  " * indent
    r = ex.render
    if isinstance(st, If):
        out.append(f"{pad}if {r(st.cond)} {{")
        for s in st.then_body:
            _render_stmt(s, indent + 1, out)
        if st.else_body is not None:
            out.append(f"{pad}}} else {{")
            for s in st.else_body:
                _render_stmt(s, indent + 1, out)
        out.append(f"{pad}}}")
        return
    out.append(pad + render_statement(st))


def render_statement(st):
    """Canonical one-line text of a non-block statement."""
    r = ex.render
    if isinstance(st, Set):
        return f"set {r(st.target)} = {r(st.value)}"
    if isinstance(st, Decrement):
        return f"decrement {r(st.target)}"
    if isinstance(st, ChecksumOp):
        return f"{st.kind}_checksum({st.header})"
    if isinstance(st, Drop):
        return "drop"
    if isinstance(st, Resubmit):
        return "resubmit"
    if isinstance(st, Accept):
        return "accept"
    if isinstance(st, Reject):
        return "reject"
    if isinstance(st, Clone):
        return f"clone {r(st.session)}"
    if isinstance(st, Multicast):
        return f"multicast {r(st.group)}"
    if isinstance(st, Apply):
        return f"apply {st.table}"
    if isinstance(st, CallAction):
        return f"call {st.action}"
    if isinstance(st, Extract):
        return f"extract {st.header}"
    if isinstance(st, Transition):
        return f"transition {st.state}"
    if isinstance(st, Emit):
        return f"emit {st.header}"
    if isinstance(st, Select):
        cases = ", ".join(f"{'default' if v is None else hex(v)} -> {s}" for v, s in st.cases)
        return f"select {r(st.key)} {{ {cases} }}"
    if isinstance(st, If):
        return f"if {r(st.cond)} {{"
    raise TypeError(st)


def render_program(ast):
    out = []
    for h in ast.headers:
        out.append(f"{'metadata' if h.is_metadata else 'header'} {h.name} {{")
        for name, width in h.fields:
            out.append(f"  field {name} : {width}")
        out.append("}")
    out.append("parser {")
    for s in ast.parser_states:
        out.append(f"  state {s.name} {{")
        for st in s.body:
            _render_stmt(st, 2, out)
        out.append("  }")
    out.append("}")
    for a in ast.actions:
        params = f"({', '.join(a.params)})" if a.params else ""
        out.append(f"action {a.name}{params} {{")
        for st in a.body:
            _render_stmt(st, 1, out)
        out.append("}")
    for t in ast.tables:
        line = f"table {t.name} {t.kind} on {ex.render(t.key)} {{ {', '.join(t.actions)} }}"
        if t.default_action:
            line += f" default {t.default_action}"
        out.append(line)
    blocks = [ast.controls[n] for n in ("ingress", "egress") if n in ast.controls]
    if ast.deparser is not None:
        blocks.append(ast.deparser)
    for b in blocks:
        out.append("deparser {" if b.name == "deparser" else f"control {b.name} {{")
        for st in b.body:
            _render_stmt(st, 1, out)
        out.append("}")
    return "\n".join(out) + "\n"


def normalize_statement_text(text):
    """Canonical form of one source line, used for textual presence checks.

    Lines that parse as statements are re-rendered; anything else falls back
    to whitespace removal.
    """
    t = _strip(text)
    if t.endswith(";"):
        t = t[:-1].rstrip()
    if not t:
        return ""
    try:
        if (t.startswith("if ") or t.startswith("if(")) and t.endswith("{"):
            return f"if {ex.render(_parse_expr(t[2:-1].strip(), 0))} {{"
        if t == "}" or re.fullmatch(r"\}\s*else\s*\{", t):
            return re.sub(r"\s+", " ", t)
        for ctx in ("parser", "control", "deparser"):
            try:
                return render_statement(_parse_statement(0, t, ctx))
            except ProgramSyntaxError:
                continue
    except ProgramSyntaxError:
        pass
    return re.sub(r"\s+", "", t)


# ---------------------------------------------------------------- validation


def _expr_refs(node):
    return [n for n in ex.walk(node) if isinstance(n, ex.Ref)]


def validate_program(ast):
    """Return diagnostics; an empty list means the program can be deployed."""
    diags = []
    add = lambda line, msg: diags.append(Diagnostic(line, msg))

    names = set()
    for h in ast.headers:
        if h.name in names or h.name == STD_METADATA:
            add(h.line, f"duplicate header {h.name}")
        names.add(h.name)
        fnames = [f for f, _ in h.fields]
        if len(set(fnames)) != len(fnames):
            add(h.line, f"duplicate field in {h.name}")
        if not h.is_metadata and sum(w for _, w in h.fields) % 8:
            add(h.line, f"header {h.name} width is not a whole number of octets")
        for _, w in h.fields:
            if w <= 0 or w > 64:
                add(h.line, f"field width {w} out of range 1..64")

    def check_ref(ref, line, params=()):
        if len(ref.path) == 1 and ref.path[0] in params:
            return
        if len(ref.path) != 2 or ast.field_width(*ref.path) is None:
            add(line, f"unresolved reference {ref.dotted}")

    def check_expr(node, line, params=()):
        for ref in _expr_refs(node):
            check_ref(ref, line, params)

    def check_body(body, params=(), ctx="control"):
        for st in iter_statements(body):
            if isinstance(st, (Set, Decrement)):
                if len(st.target.path) == 1 and st.target.path[0] in params:
                    add(st.line, f"cannot assign action parameter {st.target.dotted}")
                else:
                    check_ref(st.target, st.line)
                if isinstance(st, Set):
                    check_expr(st.value, st.line, params)
            elif isinstance(st, If):
                check_expr(st.cond, st.line, params)
            elif isinstance(st, (Clone, Multicast)):
                check_expr(st.session if isinstance(st, Clone) else st.group, st.line, params)
            elif isinstance(st, (ChecksumOp, Extract, Emit)):
                h = ast.header(st.header)
                if h is None or (h.is_metadata and not isinstance(st, ChecksumOp)):
                    add(st.line, f"unknown header {st.header}")
            elif isinstance(st, Apply):
                if ast.table(st.table) is None:
                    add(st.line, f"unknown table {st.table}")
                if ctx == "action":
                    add(st.line, "tables cannot be applied inside actions")
            elif isinstance(st, CallAction):
                if ast.action(st.action) is None:
                    add(st.line, f"unknown action {st.action}")
            elif isinstance(st, Select):
                check_ref(st.key, st.line)

    for s in ast.parser_states:
        check_body(s.body, ctx="parser")
        if not s.body or not isinstance(s.body[-1], (Select, Transition, Accept, Reject)):
            add(s.line, f"state {s.name} does not end in a transition")
    seen = set()
    for a in ast.actions:
        if a.name in seen:
            add(a.line, f"duplicate action {a.name}")
        seen.add(a.name)
        check_body(a.body, tuple(a.params), ctx="action")
    seen = set()
    for t in ast.tables:
        if t.name in seen:
            add(t.line, f"duplicate table {t.name}")
        seen.add(t.name)
        check_ref(t.key, t.line)
        for name in t.actions:
            if ast.action(name) is None:
                add(t.line, f"table {t.name} references undeclared action {name}")
        if t.default_action and t.default_action not in t.actions:
            add(t.line, f"default action {t.default_action} is not listed in table {t.name}")
    for c in ast.controls.values():
        check_body(c.body)
    if ast.deparser is not None:
        check_body(ast.deparser.body, ctx="deparser")
    else:
        add(ast.parser_end_line or 1, "missing deparser")
    return diags


# ---------------------------------------------------------------- analysis


@dataclass(frozen=True)
class StaticAnalysis:
    layouts: tuple
    parser_state_names: tuple
    header_names: tuple
    field_names: dict
    metadata_names: tuple
    metadata_fields: dict
    accepts_options: bool
    extract_states: dict  # header -> parser state that extracts it
    table_names: tuple = ()
    table_keys: dict = field(default_factory=dict)  # table -> (kind, "header.field")
    select_keys: tuple = ()  # "header.field" keys the parser branches on

    def layout(self, name):
        for l in self.layouts:
            if l.header_name == name:
                return l
        return None


def analyze_program(ast):
    layouts = tuple(HeaderLayout.from_widths(h.name, h.fields) for h in ast.headers if not h.is_metadata)
    inspects_ihl = False
    extract_states = {}
    select_keys = []
    for s in ast.parser_states:
        for st in iter_statements(s.body):
            refs = []
            if isinstance(st, Select):
                refs = [st.key]
                if st.key.dotted not in select_keys:
                    select_keys.append(st.key.dotted)
            elif isinstance(st, If):
                refs = _expr_refs(st.cond)
            if any(r.path[-1] == "ihl" for r in refs):
                inspects_ihl = True
            if isinstance(st, Extract):
                extract_states.setdefault(st.header, s.name)
    return StaticAnalysis(
        layouts=layouts,
        parser_state_names=tuple(s.name for s in ast.parser_states),
        header_names=tuple(l.header_name for l in layouts),
        field_names={l.header_name: tuple(l.field_names) for l in layouts},
        metadata_names=tuple(h.name for h in ast.headers if h.is_metadata),
        metadata_fields={h.name: tuple(f for f, _ in h.fields) for h in ast.headers if h.is_metadata},
        accepts_options=not inspects_ihl,
        extract_states=extract_states,
        table_names=tuple(t.name for t in ast.tables),
        table_keys={t.name: (t.kind, t.key.dotted) for t in ast.tables},
        select_keys=tuple(select_keys),
    )


def load_program(path):
    with open(path, encoding="utf-8") as f:
        return f.read()
