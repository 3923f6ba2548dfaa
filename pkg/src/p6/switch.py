"""Deterministic interpreter for deployed ``.p4l`` programs.

A packet runs through parser, ingress, the replication engine (PRE), egress
(once per outgoing copy) and deparser.  Every executed statement line is
recorded; the union over all passes is the packet's trace.
"""

import copy
from dataclasses import dataclass, field

from . import expr as ex
from . import program as pg
from .controlplane import lookup
from .packet import HeaderLayout, ones_complement_sum, pack_fields, unpack_fields


class DeployError(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class PreSemantics:
    clone_survives_drop: bool = True
    resubmit_survives_drop: bool = True
    multicast_survives_drop: bool = True
    resubmit_limit: int = 4

    def __post_init__(self):
        if self.resubmit_limit < 1:
            raise ValueError("resubmit_limit must be at least 1")


BMV2_LIKE = PreSemantics()
STRICT = PreSemantics(False, False, False)
PRE_PROFILES = {"bmv2-like": BMV2_LIKE, "strict": STRICT}

UNICAST, CLONE, MULTICAST, RESUBMIT = "unicast", "clone", "multicast", "resubmit"


@dataclass(frozen=True)
class EgressRecord:
    packet: bytes
    port: int
    provenance: str


@dataclass(frozen=True)
class ExecutionResult:
    egress: tuple
    dropped_original: bool
    trace: tuple
    resubmit_count: int = 0


@dataclass(frozen=True)
class ReplicationOutcome:
    emit_original: bool
    clone: bool
    multicast: bool
    resubmit: bool


def pre_resolve(decisions, pre=BMV2_LIKE):
    """Resolve conflicting forwarding decisions.

    ``decisions`` maps any of ``drop``, ``clone``, ``multicast``,
    ``resubmit`` to a truth value.
    """
    drop = bool(decisions.get("drop"))
    resubmit = bool(decisions.get("resubmit")) and (not drop or pre.resubmit_survives_drop)
    multicast = bool(decisions.get("multicast")) and (not drop or pre.multicast_survives_drop)
    clone = bool(decisions.get("clone")) and (not drop or pre.clone_survives_drop)
    emit_original = not drop and not resubmit and not multicast
    if resubmit:
        multicast = False
    return ReplicationOutcome(emit_original, clone, multicast, resubmit)


class _Reject(Exception):
    pass


@dataclass
class _State:
    headers: dict  # name -> field dict, or None when invalid
    meta: dict  # metadata name -> field dict
    trace: set
    drop: bool = False
    clone_session: int = None
    mcast_group: int = None
    resubmit: bool = False
    cursor: int = 0
    raw: bytes = b""
    out: bytearray = None


@dataclass(frozen=True)
class SwitchInstance:
    ast: object
    config: object
    pre: PreSemantics
    layouts: dict = field(repr=False)
    widths: dict = field(repr=False)  # (header, field) -> bits

    def process(self, p, ingress_port=0):
        return process_packet(self, p, ingress_port)


def _check_rules(ast, cfg):
    diags = []
    for table, entries in cfg.entries.items():
        t = ast.table(table)
        if t is None:
            diags.append(pg.Diagnostic(entries[0].line, f"rules reference undeclared table {table}"))
            continue
        for e in entries:
            if e.action not in t.actions:
                diags.append(pg.Diagnostic(e.line, f"action {e.action} not allowed in table {table}"))
                continue
            a = ast.action(e.action)
            extra = set(e.param_dict) - set(a.params if a else ())
            if extra:
                diags.append(pg.Diagnostic(e.line, f"action {e.action} has no parameter {sorted(extra)[0]}"))
            if (t.kind == "lpm") != (e.prefix_len is not None):
                diags.append(pg.Diagnostic(e.line, f"match kind of entry does not fit {t.kind} table {table}"))
    return diags


def deploy(ast, cfg, pre=BMV2_LIKE):
    diags = pg.validate_program(ast) + _check_rules(ast, cfg)
    if diags:
        raise DeployError(diags)
    widths = {(pg.STD_METADATA, f): w for f, w in pg.STD_FIELDS}
    for h in ast.headers:
        for f, w in h.fields:
            widths[(h.name, f)] = w
    hl = {h.name: HeaderLayout.from_widths(h.name, h.fields) for h in ast.headers if not h.is_metadata}
    return SwitchInstance(ast, cfg, pre, hl, widths)


# ---------------------------------------------------------------- evaluation


def _read(inst, st, ref, params):
    if len(ref.path) == 1:
        return params.get(ref.path[0], 0)
    h, f = ref.path
    if h in st.meta:
        return st.meta[h].get(f, 0)
    fields = st.headers.get(h)
    if fields is None:
        return 0
    return fields.get(f, 0)


def _write(inst, st, ref, value):
    h, f = ref.path
    value %= 1 << inst.widths[(h, f)]
    if h in st.meta:
        st.meta[h][f] = value
    elif st.headers.get(h) is not None:
        st.headers[h][f] = value


def _eval(inst, st, node, params):
    if isinstance(node, ex.Num):
        return node.value
    if isinstance(node, ex.Ref):
        return _read(inst, st, node, params)
    if isinstance(node, ex.Unary):
        v = _eval(inst, st, node.operand, params)
        return int(not v) if node.op == "!" else -v
    if isinstance(node, ex.Binary):
        op = node.op
        if op == "&&":
            return int(bool(_eval(inst, st, node.left, params)) and bool(_eval(inst, st, node.right, params)))
        if op == "||":
            return int(bool(_eval(inst, st, node.left, params)) or bool(_eval(inst, st, node.right, params)))
        a = _eval(inst, st, node.left, params)
        b = _eval(inst, st, node.right, params)
        return {
            "+": lambda: a + b,
            "-": lambda: a - b,
            "==": lambda: int(a == b),
            "!=": lambda: int(a != b),
            "<": lambda: int(a < b),
            "<=": lambda: int(a <= b),
            ">": lambda: int(a > b),
            ">=": lambda: int(a >= b),
        }[op]()
    raise TypeError(node)


def header_checksum(layout, fields):
    """Ones-complement checksum of a header with its ``checksum`` field zeroed."""
    data = pack_fields(dict(fields, checksum=0), layout)
    return (~ones_complement_sum(data)) & 0xFFFF


def _run(inst, st, body, params, in_parser=False):
    """Execute statements; returns the next parser state name when in the parser."""
    for s in body:
        st.trace.add(s.line)
        if isinstance(s, pg.Set):
            _write(inst, st, s.target, _eval(inst, st, s.value, params))
        elif isinstance(s, pg.Decrement):
            _write(inst, st, s.target, _read(inst, st, s.target, params) - 1)
        elif isinstance(s, pg.If):
            branch = s.then_body if _eval(inst, st, s.cond, params) else (s.else_body or [])
            nxt = _run(inst, st, branch, params, in_parser)
            if nxt is not None:
                return nxt
        elif isinstance(s, pg.ChecksumOp):
            fields = st.headers.get(s.header)
            layout = inst.layouts.get(s.header)
            if fields is None or layout is None or "checksum" not in fields:
                continue
            good = header_checksum(layout, fields)
            if s.kind == "update":
                fields["checksum"] = good
            elif fields["checksum"] != good:
                if in_parser:
                    raise _Reject()
                st.drop = True
        elif isinstance(s, pg.Drop):
            st.drop = True
        elif isinstance(s, pg.Clone):
            st.clone_session = _eval(inst, st, s.session, params)
        elif isinstance(s, pg.Multicast):
            st.mcast_group = _eval(inst, st, s.group, params)
        elif isinstance(s, pg.Resubmit):
            st.resubmit = True
        elif isinstance(s, pg.Apply):
            _apply_table(inst, st, inst.ast.table(s.table))
        elif isinstance(s, pg.CallAction):
            a = inst.ast.action(s.action)
            _run(inst, st, a.body, {})
        elif isinstance(s, pg.Extract):
            layout = inst.layouts[s.header]
            n = layout.byte_width
            if st.cursor + n > len(st.raw):
                raise _Reject()
            st.headers[s.header] = unpack_fields(st.raw[st.cursor:st.cursor + n], layout)
            st.cursor += n
        elif isinstance(s, pg.Select):
            v = _eval(inst, st, s.key, params)
            for value, state in s.cases:
                if value is None or value == v:
                    return state
            raise _Reject()
        elif isinstance(s, pg.Transition):
            return s.state
        elif isinstance(s, pg.Accept):
            return "accept"
        elif isinstance(s, pg.Reject):
            return "reject"
        elif isinstance(s, pg.Emit):
            fields = st.headers.get(s.header)
            if fields is not None:
                st.out += pack_fields(fields, inst.layouts[s.header])
    return None


def _apply_table(inst, st, table):
    key = _read(inst, st, table.key, {})
    hit = lookup(inst.config, table.name, key, known_tables=(table.name,))
    if hit is not None:
        name, params = hit
    elif table.default_action:
        name, params = table.default_action, {}
    else:
        return
    _run(inst, st, inst.ast.action(name).body, params)


_MAX_PARSER_STEPS = 64


def _parse(inst, st):
    """Run the parser; returns False when the packet is rejected."""
    state = "start"
    try:
        for _ in range(_MAX_PARSER_STEPS):
            if state == "accept":
                return True
            if state == "reject":
                return False
            nxt = _run(inst, st, inst.ast.state(state).body, {}, in_parser=True)
            state = nxt if nxt is not None else "accept"
    except _Reject:
        return False
    return False


def _new_state(inst, raw, ingress_port, instance_type):
    meta = {h.name: {f: 0 for f, _ in h.fields} for h in inst.ast.headers if h.is_metadata}
    meta[pg.STD_METADATA] = {"ingress_port": ingress_port % 512, "egress_port": 0, "instance_type": instance_type}
    st = _State(headers={name: None for name in inst.layouts}, meta=meta, trace=set())
    st.raw = bytes(raw)
    return st


def _egress_and_deparse(inst, st, port, instance_type):
    """Run egress and deparser on a copy of ``st``; returns bytes or None if dropped."""
    cp = _State(copy.deepcopy(st.headers), copy.deepcopy(st.meta), st.trace)
    cp.raw, cp.cursor = st.raw, st.cursor
    cp.meta[pg.STD_METADATA]["egress_port"] = port % 512
    cp.meta[pg.STD_METADATA]["instance_type"] = instance_type
    eg = inst.ast.controls.get("egress")
    if eg is not None:
        _run(inst, cp, eg.body, {})
    if cp.drop:
        return None
    cp.out = bytearray()
    _run(inst, cp, inst.ast.deparser.body, {})
    return bytes(cp.out) + cp.raw[cp.cursor:]


def process_packet(inst, p, ingress_port=0):
    p = bytes(p)
    trace = set()
    egress = []
    count = 0
    while True:
        st = _new_state(inst, p, ingress_port, pg.INSTANCE_RESUBMIT if count else pg.INSTANCE_NORMAL)
        st.trace = trace
        if not _parse(inst, st):
            return ExecutionResult(tuple(egress), True, tuple(sorted(trace)), count)
        ing = inst.ast.controls.get("ingress")
        if ing is not None:
            _run(inst, st, ing.body, {})
        cfg = inst.config
        decisions = {
            "drop": st.drop,
            "clone": st.clone_session is not None and st.clone_session in cfg.clone_sessions,
            "multicast": st.mcast_group is not None and st.mcast_group in cfg.multicast_groups,
            "resubmit": st.resubmit,
        }
        out = pre_resolve(decisions, inst.pre)
        if out.clone:
            port = cfg.clone_sessions[st.clone_session]
            data = _egress_and_deparse(inst, st, port, pg.INSTANCE_CLONE)
            if data is not None:
                egress.append(EgressRecord(data, port, CLONE))
        if out.resubmit:
            if count < inst.pre.resubmit_limit:
                count += 1
                continue
            # resubmission budget exhausted: the packet goes nowhere
            return ExecutionResult(tuple(egress), True, tuple(sorted(trace)), count)
        if out.multicast:
            for port in cfg.multicast_groups[st.mcast_group]:
                data = _egress_and_deparse(inst, st, port, pg.INSTANCE_REPLICA)
                if data is not None:
                    egress.append(EgressRecord(data, port, MULTICAST))
            return ExecutionResult(tuple(egress), st.drop, tuple(sorted(trace)), count)
        dropped = True
        if out.emit_original:
            port = st.meta[pg.STD_METADATA]["egress_port"]
            data = _egress_and_deparse(inst, st, port, st.meta[pg.STD_METADATA]["instance_type"])
            if data is not None:
                egress.append(EgressRecord(data, port, RESUBMIT if count else UNICAST))
                dropped = False
        return ExecutionResult(tuple(egress), dropped, tuple(sorted(trace)), count)
