"""p4q: conditional queries over ingress and egress packets.

A query file holds a sequence of queries::

    # checksum must be verified
    if (ing.ipv4.checksum != calcChksum(ing.ipv4))
    then (egr.dropped == true)

    @clone
    if (table_val(ipv4_lpm, ing.ipv4.dst_addr, session) >= 0)
    then (egr.dropped == true || egr.port == 5), [pd] (...)

Every condition of a ``then`` (or ``else``) list is its own test case.
``@clone`` / ``@multicast`` change which egress copies the conditions
quantify over; ``[pd]`` marks a condition whose violation points at the
target platform rather than the program.

Terms that cannot be evaluated (absent header, table miss, no egress copy)
are undefined.  Any comparison involving an undefined term is false, and
logical operators read undefined as false.
"""

from dataclasses import dataclass, field

from . import expr as ex
from .controlplane import lookup
from .packet import STANDARD_LAYOUTS, decode_packet, ipv4_header_checksum, ipv4_header_octets, snapshot_fields


class QuerySyntaxError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownField(KeyError):
    pass


PASS, FAIL, NOT_APPLICABLE = "pass", "fail", "not_applicable"

SCOPES = {
    "unicast": frozenset({"unicast", "resubmit"}),
    "clone": frozenset({"clone"}),
    "multicast": frozenset({"multicast"}),
}

FUNCTIONS = {"calcChksum": 1, "table_val": 3}


@dataclass(frozen=True)
class Condition:
    expr: object
    pd: bool = False
    branch: str = "then"

    @property
    def text(self):
        return ("[pd] " if self.pd else "") + "(" + ex.render(self.expr) + ")"


@dataclass(frozen=True)
class Query:
    id: int
    guard: object
    then_conds: tuple
    else_conds: tuple = ()
    scope: str = "unicast"
    line: int = field(default=0, compare=False)

    @property
    def if_conds(self):
        return self.guard

    @property
    def conditions(self):
        return self.then_conds + self.else_conds

    @property
    def platform_dependent(self):
        return self.scope != "unicast"

    def condition_is_pd(self, index):
        return self.conditions[index].pd or self.platform_dependent

    def render(self):
        out = [] if self.scope == "unicast" else [f"@{self.scope}"]
        out.append(f"if ({ex.render(self.guard)})")
        out.append("then " + ",\n     ".join(c.text for c in self.then_conds))
        if self.else_conds:
            out.append("else " + ",\n     ".join(c.text for c in self.else_conds))
        return "\n".join(out)


@dataclass(frozen=True)
class ConditionVerdict:
    query_id: int
    condition_index: int
    packet_id: int
    verdict: str


def _check_terms(node, line, allow_egr):
    """Reject unknown functions, malformed terms and egress terms in guards."""
    args = set()
    for n in ex.walk(node):
        if not isinstance(n, ex.Call):
            continue
        arity = FUNCTIONS.get(n.name)
        if arity is None:
            raise QuerySyntaxError(f"unknown function {n.name}", line)
        if len(n.args) != arity:
            raise QuerySyntaxError(f"{n.name} takes {arity} argument(s)", line)
        if n.name == "calcChksum":
            a = n.args[0]
            if not (isinstance(a, ex.Ref) and len(a.path) == 2 and a.path[0] in ("ing", "egr")):
                raise QuerySyntaxError("calcChksum expects ing.<header> or egr.<header>", line)
            if a.path[0] == "egr" and not allow_egr:
                raise QuerySyntaxError("egress terms are not allowed in the if part", line)
            args.add(id(a))
        else:
            t, _, p = n.args
            if not all(isinstance(x, ex.Ref) and len(x.path) == 1 for x in (t, p)):
                raise QuerySyntaxError("table_val expects (table, key, parameter)", line)
            args.update((id(t), id(p)))
    for n in ex.walk(node):
        if not isinstance(n, ex.Ref) or id(n) in args:
            continue
        side = n.path[0]
        if side == "egr" and not allow_egr:
            raise QuerySyntaxError("egress terms are not allowed in the if part", line)
        ok = len(n.path) == 3 and side in ("ing", "egr")
        ok = ok or (side == "egr" and n.path[1:] in (("port",), ("dropped",)))
        if not ok:
            raise QuerySyntaxError(f"unknown term {n.dotted}", line)


def _parse_cond_list(ts, branch):
    conds = []
    while True:
        pd = False
        if ts.at("["):
            ts.next()
            tok = ts.expect_name()
            if tok.text != "pd":
                raise QuerySyntaxError(f"unknown condition tag {tok.text!r}", tok.line)
            ts.expect("]")
            pd = True
        line = ts.peek().line
        e = ex.parse_expr(ts)
        _check_terms(e, line, True)
        conds.append(Condition(e, pd, branch))
        if not ts.accept(","):
            return tuple(conds)


def parse_queries(text):
    try:
        ts = ex.TokenStream(ex.tokenize(text))
        queries = []
        while not ts.done:
            scope = "unicast"
            while ts.at("@"):
                ts.next()
                tok = ts.expect_name()
                if tok.text not in SCOPES:
                    raise QuerySyntaxError(f"unknown annotation @{tok.text}", tok.line)
                scope = tok.text
            tok = ts.expect("if")
            guard = ex.parse_expr(ts)
            _check_terms(guard, tok.line, False)
            ts.expect("then")
            then_conds = _parse_cond_list(ts, "then")
            else_conds = ()
            if ts.accept("else"):
                else_conds = _parse_cond_list(ts, "else")
            queries.append(Query(len(queries) + 1, guard, then_conds, else_conds, scope, line=tok.line))
        return queries
    except ex.ExprSyntaxError as e:
        raise QuerySyntaxError(e.message, e.line) from None


def load_queries(path):
    with open(path, encoding="utf-8") as f:
        return parse_queries(f.read())


# ---------------------------------------------------------------- evaluation


class _Env:
    def __init__(self, ing_packet, ing_fields, record, dropped, cfg, tables):
        self.ing_packet = ing_packet
        self.ing = ing_fields
        self.record = record
        self.egr = snapshot_fields(record.packet) if record is not None else None
        self.dropped = dropped
        self.cfg = cfg
        self.tables = tables


def _field(snapshot, header, fname):
    layout = STANDARD_LAYOUTS.get(header)
    if layout is None or fname not in layout.field_names:
        raise UnknownField(f"{header}.{fname}")
    if snapshot is None or header not in snapshot:
        return None
    return snapshot[header][fname]


def _checksum_of(p):
    hdr = ipv4_header_octets(p)
    return None if hdr is None else ipv4_header_checksum(hdr)


def _eval(node, env):
    if isinstance(node, ex.Num):
        return node.value
    if isinstance(node, ex.Ref):
        side, rest = node.path[0], node.path[1:]
        if side == "ing":
            return _field(env.ing, *rest)
        if rest == ("dropped",):
            return int(env.dropped)
        if rest == ("port",):
            return None if env.record is None else env.record.port
        return _field(env.egr, *rest)
    if isinstance(node, ex.Call):
        if node.name == "calcChksum":
            side, header = node.args[0].path
            if header != "ipv4":
                raise UnknownField(f"calcChksum({header})")
            if side == "ing":
                return _checksum_of(env.ing_packet)
            return None if env.record is None else _checksum_of(env.record.packet)
        table = node.args[0].path[0]
        key = _eval(node.args[1], env)
        if key is None:
            return None
        hit = lookup(env.cfg, table, key, env.tables)
        if hit is None:
            return None
        return hit[1].get(node.args[2].path[0])
    if isinstance(node, ex.Unary):
        v = _eval(node.operand, env)
        if node.op == "!":
            return int(not v)
        return None if v is None else -v
    if isinstance(node, ex.Binary):
        op = node.op
        if op == "&&":
            return int(bool(_eval(node.left, env)) and bool(_eval(node.right, env)))
        if op == "||":
            return int(bool(_eval(node.left, env)) or bool(_eval(node.right, env)))
        a, b = _eval(node.left, env), _eval(node.right, env)
        if op in ("+", "-"):
            if a is None or b is None:
                return None
            return a + b if op == "+" else a - b
        if a is None or b is None:
            return 0
        return int({"==": a == b, "!=": a != b, "<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op])
    raise TypeError(node)


def guard_holds(q, ingress, cfg, tables=None):
    ing = snapshot_fields(ingress)
    return bool(_eval(q.guard, _Env(bytes(ingress), ing, None, False, cfg, tables)))


def condition_holds(q, cond, ingress, result, cfg, tables=None):
    ingress = bytes(ingress)
    ing = snapshot_fields(ingress)
    scope = SCOPES[q.scope]
    records = [r for r in result.egress if r.provenance in scope]
    if not records:
        return bool(_eval(cond.expr, _Env(ingress, ing, None, result.dropped_original, cfg, tables)))
    return all(_eval(cond.expr, _Env(ingress, ing, r, False, cfg, tables)) for r in records)


def evaluate_query(q, ingress, result, cfg, packet_id=0, tables=None):
    """One verdict per condition of ``q`` for a single packet.

    ``ingress`` is the packet as sent; ``result`` is the switch's
    ExecutionResult for it.  ``tables`` lists table names declared by the
    program (so a table without entries is a miss rather than an error).
    """
    g = guard_holds(q, ingress, cfg, tables)
    out = []
    for i, c in enumerate(q.conditions):
        active = g if c.branch == "then" else not g
        if not active:
            v = NOT_APPLICABLE
        else:
            v = PASS if condition_holds(q, c, ingress, result, cfg, tables) else FAIL
        out.append(ConditionVerdict(q.id, i, packet_id, v))
    return out


def evaluate_condition(q, index, ingress, result, cfg, tables=None):
    c = q.conditions[index]
    g = guard_holds(q, ingress, cfg, tables)
    if g != (c.branch == "then"):
        return NOT_APPLICABLE
    return PASS if condition_holds(q, c, ingress, result, cfg, tables) else FAIL


# ---------------------------------------------------------------- boundary values


@dataclass(frozen=True)
class BoundaryValue:
    field: str  # "ipv4.ttl"
    constant: int
    candidates: tuple


def _field_of(node):
    if isinstance(node, ex.Ref) and len(node.path) == 3 and node.path[0] in ("ing", "egr"):
        layout = STANDARD_LAYOUTS.get(node.path[1])
        if layout is not None and node.path[2] in layout.field_names:
            return node.path[1], node.path[2], layout.width_of(node.path[2])
    return None


def extract_boundary_values(queries):
    """Constants compared against header fields, with their clamped neighbours."""
    out = []
    seen = set()
    for q in queries:
        nodes = [q.guard] + [c.expr for c in q.conditions]
        for root in nodes:
            for n in ex.walk(root):
                if not (isinstance(n, ex.Binary) and n.op in ex.RELOPS):
                    continue
                for a, b in ((n.left, n.right), (n.right, n.left)):
                    f = _field_of(a)
                    if f is None or not isinstance(b, ex.Num) or b.style == "bool":
                        continue
                    h, name, width = f
                    c = b.value
                    top = (1 << width) - 1
                    cands = tuple(sorted({v for v in (c - 1, c, c + 1) if 0 <= v <= top}))
                    key = (f"{h}.{name}", c)
                    if key not in seen and cands:
                        seen.add(key)
                        out.append(BoundaryValue(f"{h}.{name}", c, cands))
    return out


def ingress_decodes(p):
    return decode_packet(p).ipv4_status == "ok"
