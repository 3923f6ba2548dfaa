"""Forwarding rules, clone sessions and multicast groups (``.rules`` files).

One entry per line::

    ipv4_lpm 10.0.1.0/24 -> forward port=2 smac=00:00:00:00:01:01 dmac=aa:bb:cc:dd:ee:01
    acl 10.0.9.9 -> deny rule=1
    clone_session 7 port=5
    mcast_group 3 ports=2,3,4
"""

import re
from dataclasses import dataclass, field

from .packet import format_ipv4_addr, parse_ipv4_addr, parse_mac


class ConfigError(ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnknownTable(KeyError):
    pass


class MissEntry(LookupError):
    pass


class UnknownParam(LookupError):
    pass


CLONE_SESSION_TABLE = "clone_session"


def parse_value(text):
    """Integer literal, ``0x`` hex, dotted IPv4 or colon-separated MAC."""
    text = text.strip()
    if re.fullmatch(r"\d+", text):
        return int(text)
    if re.fullmatch(r"0[xX][0-9a-fA-F]+", text):
        return int(text, 16)
    if re.fullmatch(r"\d{1,3}(\.\d{1,3}){3}", text):
        return parse_ipv4_addr(text)
    if re.fullmatch(r"[0-9a-fA-F]{1,2}(:[0-9a-fA-F]{1,2}){5}", text):
        return parse_mac(text)
    raise ValueError(f"bad value {text!r}")


@dataclass(frozen=True)
class TableEntry:
    key: int
    prefix_len: int  # None for exact entries
    action: str
    params: tuple  # sorted (name, value) pairs
    line: int = field(default=0, compare=False)

    @property
    def param_dict(self):
        return dict(self.params)


@dataclass
class ForwardingConfig:
    entries: dict = field(default_factory=dict)  # table -> [TableEntry]
    clone_sessions: dict = field(default_factory=dict)  # session -> port
    multicast_groups: dict = field(default_factory=dict)  # group -> [ports]
    key_width: int = 32

    def num_entries(self):
        return sum(len(v) for v in self.entries.values())

    def tables(self):
        return sorted(self.entries)


def _params(tokens, line):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(line, f"expected name=value, got {tok!r}")
        name, value = tok.split("=", 1)
        if name in out:
            raise ConfigError(line, f"duplicate parameter {name}")
        try:
            out[name] = parse_value(value)
        except ValueError as e:
            raise ConfigError(line, str(e)) from None
    return out


def load_config(text, key_width=32):
    cfg = ForwardingConfig(key_width=key_width)
    seen = set()
    for n, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        if words[0] == "clone_session":
            if len(words) != 3:
                raise ConfigError(n, "expected 'clone_session <id> port=<n>'")
            p = _params(words[2:], n)
            if set(p) != {"port"}:
                raise ConfigError(n, "clone_session needs exactly port=<n>")
            sid = _int(words[1], n)
            if sid in cfg.clone_sessions:
                raise ConfigError(n, f"duplicate clone session {sid}")
            cfg.clone_sessions[sid] = p["port"]
            continue
        if words[0] == "mcast_group":
            m = re.fullmatch(r"mcast_group\s+(\S+)\s+ports=([\d,\s]+)", line)
            if not m:
                raise ConfigError(n, "expected 'mcast_group <id> ports=<n,n,...>'")
            gid = _int(m.group(1), n)
            if gid in cfg.multicast_groups:
                raise ConfigError(n, f"duplicate multicast group {gid}")
            ports = [int(p) for p in m.group(2).replace(" ", "").split(",") if p]
            if not ports:
                raise ConfigError(n, "multicast group needs at least one port")
            cfg.multicast_groups[gid] = ports
            continue
        m = re.fullmatch(r"(\w+)\s+(\S+?)(?:/(\d+))?\s*->\s*(\w+)((?:\s+\S+)*)", line)
        if not m:
            raise ConfigError(n, f"cannot parse rule {line!r}")
        table, key_text, plen, action, rest = m.groups()
        try:
            key = parse_value(key_text)
        except ValueError as e:
            raise ConfigError(n, str(e)) from None
        prefix_len = None
        if plen is not None:
            prefix_len = int(plen)
            if not 0 <= prefix_len <= key_width:
                raise ConfigError(n, f"prefix length {prefix_len} outside 0..{key_width}")
            key &= _mask(prefix_len, key_width)
        params = _params(rest.split(), n)
        ident = (table, key, prefix_len)
        if ident in seen:
            raise ConfigError(n, f"duplicate entry for {table} {key_text}")
        seen.add(ident)
        entry = TableEntry(key, prefix_len, action, tuple(sorted(params.items())), line=n)
        cfg.entries.setdefault(table, []).append(entry)
    return cfg


def load_config_file(path, key_width=32):
    with open(path, encoding="utf-8") as f:
        return load_config(f.read(), key_width)


def _int(text, line):
    try:
        return parse_value(text)
    except ValueError:
        raise ConfigError(line, f"bad integer {text!r}") from None


def _mask(prefix_len, width):
    return ((1 << prefix_len) - 1) << (width - prefix_len) if prefix_len else 0


def lookup(config, table, key, known_tables=None):
    """Matching ``(action, params)`` or None on a miss.

    Entries with a prefix length are matched longest-prefix first; entries
    without one must equal the key.  ``known_tables`` (names declared by the
    program) widens the set of tables that exist but have no entries.
    """
    if table == CLONE_SESSION_TABLE:
        port = config.clone_sessions.get(key)
        return None if port is None else ("clone_session", {"port": port})
    if table not in config.entries:
        if known_tables is not None and table in known_tables:
            return None
        raise UnknownTable(table)
    best = None
    for e in config.entries[table]:
        if e.prefix_len is None:
            if e.key == key:
                return e.action, e.param_dict
            continue
        if key & _mask(e.prefix_len, config.key_width) == e.key:
            if best is None or e.prefix_len > best.prefix_len:
                best = e
    return None if best is None else (best.action, best.param_dict)


def table_val(config, table, key, param_name, known_tables=None):
    hit = lookup(config, table, key, known_tables)
    if hit is None:
        raise MissEntry(f"{table}: no entry for key {key}")
    _, params = hit
    if param_name not in params:
        raise UnknownParam(f"{table}: action {hit[0]} has no parameter {param_name}")
    return params[param_name]


def render_config(config):
    """Canonical text (used in run reports)."""
    out = []
    for table in config.tables():
        for e in sorted(config.entries[table], key=lambda e: (e.key, e.prefix_len or 0)):
            k = format_ipv4_addr(e.key) if config.key_width == 32 else str(e.key)
            if e.prefix_len is not None:
                k += f"/{e.prefix_len}"
            ps = "".join(f" {n}={v}" for n, v in e.params)
            out.append(f"{table} {k} -> {e.action}{ps}")
    for sid in sorted(config.clone_sessions):
        out.append(f"clone_session {sid} port={config.clone_sessions[sid]}")
    for gid in sorted(config.multicast_groups):
        out.append(f"mcast_group {gid} ports={','.join(map(str, config.multicast_groups[gid]))}")
    return "\n".join(out) + "\n"
