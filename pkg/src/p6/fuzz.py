"""Fuzzing environment: mutation dictionary, action space, episodes, baselines."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import p4q
from .packet import (
    ETH_HEADER_LEN,
    ETHERTYPE_IPV4,
    IPV4_LAYOUT,
    MAX_PACKET_LEN,
    decode_packet,
    encode_packet,
    ipv4_header_checksum,
    ipv4_header_octets,
    pack_fields,
    recompute_ipv4_checksum,
    with_ipv4_checksum,
)

FIELD_KINDS = ("set_field_dict_low", "set_field_dict_high", "set_field_random", "set_field_zero", "set_field_max")
CHECKSUM_KINDS = ("recompute_checksum", "corrupt_checksum")
STRUCTURAL_KINDS = ("append_random_octets", "truncate_octets")
STRUCTURAL_SIZES = (1, 8)
MIN_FRAME = 14
SEED_PAYLOAD = bytes(40)
SEED_TTL = 64
DEFAULT_MAX_EP_LEN = 32
DEFAULT_BUDGET = 5000


@dataclass(frozen=True)
class MutationDictionary:
    layouts: tuple
    field_boundary_values: dict  # "ipv4.ttl" -> sorted tuple
    forwarding_values: dict  # "ipv4.dst_addr" -> sorted tuple
    platform_values: tuple = ()
    excluded_fields: tuple = ()  # parser select keys: mutating them changes the layout
    lpm_hosts: tuple = ()  # one routable address per lpm entry
    exact_hosts: tuple = ()  # exact-match keys on a field that an lpm table also routes on

    def field_offsets(self):
        return self._offsets

    @cached_property
    def _offsets(self):
        """``{"hdr.field": (bit_offset_in_packet, width)}`` for mutable fields."""
        out = {}
        base = 0
        for layout in self.layouts:
            for name, off, width in layout.fields:
                key = f"{layout.header_name}.{name}"
                if key not in self.excluded_fields:
                    out[key] = (base + off, width)
            base += layout.bit_width
        return out

    def informed_values(self, key):
        vals = set(self.field_boundary_values.get(key, ())) | set(self.forwarding_values.get(key, ()))
        return tuple(sorted(vals))

    def values_for(self, key):
        """Every dictionary value of a field: informed values plus range edges."""
        width = self.field_offsets()[key][1]
        top = (1 << width) - 1
        edges = {0, min(1, top), max(top - 1, 0), top}
        return tuple(sorted(set(self.informed_values(key)) | edges))


def build_dictionary(sa, cfg, queries):
    widths = {f"{l.header_name}.{n}": w for l in sa.layouts for n, _, w in l.fields}
    boundary = {}
    for bv in p4q.extract_boundary_values(queries):
        if bv.field in widths:
            boundary.setdefault(bv.field, set()).update(bv.candidates)
    forwarding = {}
    hosts = set()
    exact = {}
    for table, entries in cfg.entries.items():
        kind_key = sa.table_keys.get(table)
        if kind_key is None or kind_key[1] not in widths:
            continue
        key = kind_key[1]
        top = (1 << widths[key]) - 1
        for e in entries:
            if e.prefix_len is not None and e.prefix_len < widths[key]:
                v = e.key + 1
                hosts.add(v)
            else:
                v = e.key
                if e.prefix_len is not None:
                    hosts.add(v)
                else:
                    exact.setdefault(key, set()).add(v)
            if v <= top:
                forwarding.setdefault(key, set()).add(v)
    lpm_keys = {k for kind, k in sa.table_keys.values() if kind == "lpm"}
    exact_hosts = sorted(set().union(*(exact.get(k, set()) for k in lpm_keys)) - hosts)
    platform = sorted(set(cfg.clone_sessions) | set(cfg.multicast_groups))
    return MutationDictionary(
        layouts=tuple(sa.layouts),
        field_boundary_values={k: tuple(sorted(v)) for k, v in sorted(boundary.items())},
        forwarding_values={k: tuple(sorted(v)) for k, v in sorted(forwarding.items())},
        platform_values=tuple(platform),
        excluded_fields=tuple(sa.select_keys),
        lpm_hosts=tuple(sorted(hosts)),
        exact_hosts=tuple(exact_hosts),
    )


@dataclass(frozen=True)
class MutationAction:
    kind: str
    target: str = ""  # "header.field" for field actions
    size: int = 0  # octet count for structural actions

    def __str__(self):
        if self.target:
            return f"{self.kind}({self.target})"
        if self.size:
            return f"{self.kind}({self.size})"
        return self.kind


def enumerate_actions(d):
    actions = []
    offsets = d.field_offsets()
    for key in offsets:
        actions.extend(MutationAction(k, key) for k in FIELD_KINDS)
    if any("checksum" in l.field_names for l in d.layouts):
        actions.extend(MutationAction(k) for k in CHECKSUM_KINDS)
    for kind in STRUCTURAL_KINDS:
        actions.extend(MutationAction(kind, size=k) for k in STRUCTURAL_SIZES)
    return actions


def _set_bits(p, bit_offset, width, value):
    first = bit_offset // 8
    last = (bit_offset + width - 1) // 8
    if last >= len(p):
        return bytes(p)
    span = last - first + 1
    word = int.from_bytes(p[first:last + 1], "big")
    shift = span * 8 - (bit_offset - first * 8) - width
    mask = ((1 << width) - 1) << shift
    word = (word & ~mask) | ((value << shift) & mask)
    out = bytearray(p)
    out[first:last + 1] = word.to_bytes(span, "big")
    return bytes(out)


def get_field(p, d, key):
    off, width = d.field_offsets()[key]
    first, last = off // 8, (off + width - 1) // 8
    if last >= len(p):
        return None
    span = last - first + 1
    word = int.from_bytes(p[first:last + 1], "big")
    return (word >> (span * 8 - (off - first * 8) - width)) & ((1 << width) - 1)


def _random_value(rng, width):
    return int(rng.integers(0, 1 << width, dtype=np.uint64)) if width < 64 else int(rng.integers(0, 2**63))


def apply_action(p, a, d, rng):
    """Return a mutated copy of ``p``."""
    p = bytes(p)
    if a.kind in FIELD_KINDS:
        off, width = d.field_offsets()[a.target]
        top = (1 << width) - 1
        informed = d.informed_values(a.target)
        if a.kind == "set_field_zero":
            v = 0
        elif a.kind == "set_field_max":
            v = top
        elif a.kind == "set_field_random" or not informed:
            v = _random_value(rng, width)
        else:
            v = informed[0] if a.kind == "set_field_dict_low" else informed[-1]
        return _set_bits(p, off, width, v)
    if a.kind == "recompute_checksum":
        return recompute_ipv4_checksum(p)
    if a.kind == "corrupt_checksum":
        hdr = ipv4_header_octets(p)
        if hdr is None:
            return p
        return with_ipv4_checksum(p, ipv4_header_checksum(hdr) ^ 0x0001)
    if a.kind == "append_random_octets":
        k = min(a.size, MAX_PACKET_LEN - len(p))
        return p + rng.integers(0, 256, size=max(k, 0), dtype=np.uint8).tobytes()
    if a.kind == "truncate_octets":
        return p[:max(MIN_FRAME, len(p) - a.size)]
    raise ValueError(f"unknown action {a.kind}")


def seed_packets(d):
    """Valid IPv4 packets: one per routable destination, then one per exact-match destination."""
    hosts = (d.lpm_hosts + d.exact_hosts) or (0x0A000002,)
    has_ipv4 = any(l.header_name == "ipv4" for l in d.layouts)
    out = []
    for h in hosts:
        if has_ipv4:
            p = encode_packet({"ether_type": ETHERTYPE_IPV4},
                              {"dst_addr": h, "ttl": SEED_TTL, "total_len": 20 + len(SEED_PAYLOAD)}, SEED_PAYLOAD)
            out.append(recompute_ipv4_checksum(p))
        else:
            out.append(encode_packet({"ether_type": 0x88B5}, None, SEED_PAYLOAD))
    return out


def encode_state(p, length=MAX_PACKET_LEN):
    s = np.zeros(length)
    b = np.frombuffer(bytes(p)[:length], dtype=np.uint8)
    s[:len(b)] = b / 255.0
    return s


@dataclass
class StepRecord:
    packet: bytes
    action: str
    verdict: str
    reward: int
    terminal: bool
    trace: tuple = ()


@dataclass
class EpisodeLog:
    steps: list = field(default_factory=list)

    @property
    def packets_sent(self):
        return len(self.steps)


class FuzzEnv:
    """Environment bound to one test case (a query condition).

    ``step`` applies an action to the current packet, sends it through the
    switch and evaluates only the bound condition.
    """

    def __init__(self, inst, query, cond_index, dictionary, cfg=None, max_ep_len=DEFAULT_MAX_EP_LEN,
                 rng=None, record=True, tables=None, state_len=MAX_PACKET_LEN):
        self.inst = inst
        self.query = query
        self.cond_index = cond_index
        self.dictionary = dictionary
        self.cfg = cfg if cfg is not None else inst.config
        self.max_ep_len = max_ep_len
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.record = record
        self.tables = tables if tables is not None else tuple(t.name for t in inst.ast.tables)
        self.state_len = state_len
        self.actions = enumerate_actions(dictionary)
        self.seeds = seed_packets(dictionary)
        self.log = EpisodeLog()
        self.packet = self.seeds[0]
        self.t = 0

    @property
    def num_actions(self):
        return len(self.actions)

    def reset(self):
        self.packet = self.seeds[int(self.rng.integers(len(self.seeds)))]
        self.t = 0
        return encode_state(self.packet, self.state_len)

    def send(self, p, action=""):
        """Process one packet and judge it; returns (verdict, ExecutionResult)."""
        res = self.inst.process(p)
        verdict = p4q.evaluate_condition(self.query, self.cond_index, p, res, self.cfg, self.tables)
        return verdict, res

    def step(self, action_index):
        a = self.actions[action_index]
        self.packet = apply_action(self.packet, a, self.dictionary, self.rng)
        self.t += 1
        verdict, res = self.send(self.packet)
        reward = int(verdict == p4q.FAIL)
        terminal = bool(reward) or self.t >= self.max_ep_len
        if self.record:
            self.log.steps.append(StepRecord(self.packet, str(a), verdict, reward, terminal, res.trace))
        return encode_state(self.packet, self.state_len), reward, terminal, verdict


# ---------------------------------------------------------------- baselines


def policy_advanced(env, rng):
    return int(rng.integers(env.num_actions))


def policy_ipv4(rng, base):
    """Random values in every IPv4 field except options and destination; nothing recomputed."""
    d = decode_packet(base)
    if d.ipv4 is None:
        return bytes(base)
    ip = {}
    for name, _, width in IPV4_LAYOUT.fields:
        ip[name] = d.ipv4.dst_addr if name == "dst_addr" else _random_value(rng, width)
    return bytes(base[:ETH_HEADER_LEN]) + pack_fields(ip, IPV4_LAYOUT) + bytes(base[ETH_HEADER_LEN + 20:])


def policy_naive(rng):
    n = int(rng.integers(MIN_FRAME, 129))
    return rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()


@dataclass
class CampaignResult:
    detected: bool
    packets_to_detection: int  # None when not detected
    packets_sent: int
    episode_rewards: list = field(default_factory=list)
    records: list = field(default_factory=list, repr=False)


def run_campaign(env, mode, budget=DEFAULT_BUDGET, rng=None, model=None, epsilon=0.0, stop_on_detect=True,
                 extra_after_detect=0):
    """Send up to ``budget`` packets with the given policy.

    ``mode`` is one of ``agent`` (needs ``model``), ``advanced``, ``ipv4``
    or ``naive``.  Episodes restart from a seed packet on detection or after
    ``max_ep_len`` steps.  With ``stop_on_detect`` the campaign ends once
    ``extra_after_detect`` more packets followed the first detection.
    """
    from . import agent as ag

    rng = rng if rng is not None else np.random.default_rng(0)
    sent = 0
    first = None
    rewards = []
    ep_reward = 0
    start = len(env.log.steps)
    while sent < budget:
        if mode in ("agent", "advanced"):
            s = env.reset()
            ep_reward = 0
            terminal = False
            while not terminal and sent < budget:
                if mode == "agent":
                    a = ag.select_action(model, s, epsilon, rng)
                else:
                    a = policy_advanced(env, rng)
                s, r, terminal, _ = env.step(a)
                sent += 1
                ep_reward += r
                if r and first is None:
                    first = sent
            rewards.append(ep_reward)
        else:
            if mode == "ipv4":
                base = env.seeds[int(rng.integers(len(env.seeds)))]
                p = policy_ipv4(rng, base)
            elif mode == "naive":
                p = policy_naive(rng)
            else:
                raise ValueError(f"unknown mode {mode}")
            verdict, res = env.send(p)
            sent += 1
            r = int(verdict == p4q.FAIL)
            if env.record:
                env.log.steps.append(StepRecord(p, mode, verdict, r, True, res.trace))
            if r and first is None:
                first = sent
        if first is not None and stop_on_detect and sent >= first + extra_after_detect:
            break
    return CampaignResult(first is not None, first, sent, rewards, env.log.steps[start:])
