import os
import sys

import pytest

from p6 import pipeline as pl
from p6 import program as pg
from p6 import switch as sw
from p6.controlplane import load_config
from p6.p4q import load_queries
from p6.packet import encode_packet, parse_ipv4_addr, recompute_ipv4_checksum

FIXTURES = pl.bundled_path("fixtures")
STEMS = ("l3switch", "tunnel", "clone_acl", "multicast")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


def read_fixture(name):
    with open(fixture_path(name), encoding="utf-8") as f:
        return f.read()


def rules_for(stem):
    return load_config(read_fixture(stem + ".rules"))


def deployed(stem, variant="buggy", profile="bmv2-like"):
    ast = pg.parse_program(read_fixture(f"{stem}_{variant}.p4l"))
    return sw.deploy(ast, rules_for(stem), sw.PRE_PROFILES[profile])


def ipv4_packet(dst="10.0.1.5", **fields):
    """Valid IPv4 packet (checksum computed unless given)."""
    fields = dict(fields)
    fields["dst_addr"] = parse_ipv4_addr(dst)
    payload = fields.pop("payload", bytes(40))
    fields.setdefault("total_len", 20 + len(payload))
    explicit = "checksum" in fields
    p = encode_packet(ipv4_fields=fields, payload=payload)
    return p if explicit else recompute_ipv4_checksum(p)


@pytest.fixture(scope="session")
def queries():
    return load_queries(pl.default_queries_path())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(mod.RESULTS.get(n, f"criterion {n:>2}: FAIL  (not run or errored)"))
