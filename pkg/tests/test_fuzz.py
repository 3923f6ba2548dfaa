import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p6 import fuzz, p4q
from p6 import program as pg
from p6.packet import IPV4_LAYOUT, checksum_valid, decode_packet, ipv4_header_checksum, ipv4_header_octets, parse_ipv4_addr
from conftest import deployed, ipv4_packet, read_fixture, rules_for


def dictionary(stem, queries):
    sa = pg.analyze_program(pg.parse_program(read_fixture(f"{stem}_buggy.p4l")))
    return fuzz.build_dictionary(sa, rules_for(stem), queries)


def env_for(stem, variant, case, queries, seed=0, **kw):
    inst = deployed(stem, variant)
    return fuzz.FuzzEnv(inst, queries[case[0] - 1], case[1], dictionary(stem, queries),
                        rng=np.random.default_rng(seed), **kw)


ADDR = parse_ipv4_addr


def test_dictionary_contents(queries):
    d = dictionary("l3switch", queries)
    assert d.forwarding_values["ipv4.dst_addr"] == tuple(sorted(map(ADDR, ["10.0.0.1", "10.0.1.1", "10.0.9.1",
                                                                          "10.0.9.9"])))
    assert d.lpm_hosts == tuple(sorted(map(ADDR, ["10.0.0.1", "10.0.1.1", "10.0.9.1"])))
    assert d.exact_hosts == (ADDR("10.0.9.9"),)
    assert d.field_boundary_values["ipv4.ttl"] == (0, 1, 2)
    assert d.excluded_fields == ("ethernet.ether_type",)
    assert dictionary("clone_acl", queries).platform_values == (7,)
    assert dictionary("multicast", queries).platform_values == (3,)


def test_values_include_edges(queries):
    d = dictionary("l3switch", queries)
    assert d.values_for("ipv4.ttl") == (0, 1, 2, 254, 255)
    assert d.values_for("ipv4.flags") == (0, 1, 6, 7)


def test_action_space(queries):
    acts = fuzz.enumerate_actions(dictionary("l3switch", queries))
    # 14 mutable fields x 5, two checksum actions, four structural actions
    assert len(acts) == 76
    assert len(set(acts)) == 76
    assert fuzz.MutationAction("set_field_zero", "ipv4.ttl") in acts
    assert not any(a.target == "ethernet.ether_type" for a in acts)


def test_seed_packets_are_valid(queries):
    seeds = fuzz.seed_packets(dictionary("l3switch", queries))
    assert len(seeds) == 4
    for p in seeds:
        assert checksum_valid(p)
        assert decode_packet(p).ipv4.ttl == fuzz.SEED_TTL
    assert decode_packet(seeds[-1]).ipv4.dst_addr == ADDR("10.0.9.9")


@settings(max_examples=150)
@given(st.integers(0, 75), st.integers(0, 2**32 - 1))
def test_field_actions_touch_only_their_field(queries, idx, seed):
    d = dictionary("l3switch", queries)
    a = fuzz.enumerate_actions(d)[idx]
    p = ipv4_packet("10.0.1.5", ttl=17)
    q = fuzz.apply_action(p, a, d, np.random.default_rng(seed))
    assert fuzz.MIN_FRAME <= len(q) <= 1500
    if a.kind not in fuzz.FIELD_KINDS:
        return
    before, after = decode_packet(p), decode_packet(q)
    hdr, name = a.target.split(".")
    for layout, b, c in (("ethernet", before.ethernet, after.ethernet),
                         ("ipv4", before.ipv4.as_dict(), after.ipv4.as_dict())):
        for f in b:
            if (layout, f) != (hdr, name):
                assert b[f] == c[f]
    assert fuzz.get_field(q, d, a.target) == (after.ipv4.as_dict() if hdr == "ipv4" else after.ethernet)[name]


def test_field_action_values(queries):
    d = dictionary("l3switch", queries)
    rng = np.random.default_rng(0)
    p = ipv4_packet(ttl=17)
    get = lambda kind: fuzz.get_field(fuzz.apply_action(p, fuzz.MutationAction(kind, "ipv4.ttl"), d, rng), d,
                                      "ipv4.ttl")
    assert get("set_field_zero") == 0
    assert get("set_field_max") == 255
    assert get("set_field_dict_low") == 0
    assert get("set_field_dict_high") == 2
    # informed destination values come from the rules
    hi = fuzz.apply_action(p, fuzz.MutationAction("set_field_dict_high", "ipv4.dst_addr"), d, rng)
    assert fuzz.get_field(hi, d, "ipv4.dst_addr") == ADDR("10.0.9.9")


def test_checksum_actions(queries):
    d = dictionary("l3switch", queries)
    rng = np.random.default_rng(0)
    p = fuzz.apply_action(ipv4_packet(), fuzz.MutationAction("set_field_zero", "ipv4.ttl"), d, rng)
    assert not checksum_valid(p)
    fixed = fuzz.apply_action(p, fuzz.MutationAction("recompute_checksum"), d, rng)
    assert checksum_valid(fixed)
    bad = fuzz.apply_action(fixed, fuzz.MutationAction("corrupt_checksum"), d, rng)
    assert decode_packet(bad).ipv4.checksum == ipv4_header_checksum(ipv4_header_octets(fixed)) ^ 1


def test_structural_bounds(queries):
    d = dictionary("l3switch", queries)
    rng = np.random.default_rng(0)
    big = bytes(1499)
    assert len(fuzz.apply_action(big, fuzz.MutationAction("append_random_octets", size=8), d, rng)) == 1500
    assert len(fuzz.apply_action(bytes(16), fuzz.MutationAction("truncate_octets", size=8), d, rng)) == 14


def test_step_detects_ttl_bug(queries):
    for variant, want in (("buggy", 1), ("clean", 0)):
        env = env_for("l3switch", variant, (5, 0), queries)
        env.reset()
        env.packet = env.seeds[0]  # routable, not denied
        i = env.actions.index(fuzz.MutationAction("set_field_zero", "ipv4.ttl"))
        _, r, terminal, v = env.step(i)
        assert (r, terminal) == (want, bool(want))
        # on the clean program the stale checksum alone gets the packet dropped
        assert v == (p4q.FAIL if want else p4q.PASS)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 75), min_size=1, max_size=40), st.integers(0, 1000))
def test_reward_is_fail_indicator(queries, picks, seed):
    env = env_for("l3switch", "buggy", (2, 0), queries, seed=seed, max_ep_len=8)
    env.reset()
    for i in picks:
        s, r, terminal, v = env.step(i)
        assert r == int(v == p4q.FAIL)
        assert s.shape == (1500,)
        assert terminal == (r == 1 or env.t >= 8)
        if terminal:
            env.reset()
    assert env.log.packets_sent == len(picks)


def test_clean_valid_packets_never_reward(queries):
    env = env_for("l3switch", "clean", (6, 0), queries)
    for p in env.seeds:
        v, _ = env.send(p)
        assert v != p4q.FAIL


@pytest.mark.parametrize("mode", ["advanced", "ipv4", "naive"])
def test_campaigns_are_reproducible(queries, mode):
    runs = []
    for _ in range(2):
        env = env_for("l3switch", "buggy", (4, 0), queries, seed=3)
        res = fuzz.run_campaign(env, mode, 300, np.random.default_rng(9))
        runs.append([(r.packet, r.verdict, r.reward) for r in res.records])
    assert runs[0] == runs[1]


def test_campaign_budget_and_stop(queries):
    env = env_for("l3switch", "buggy", (5, 0), queries)
    res = fuzz.run_campaign(env, "advanced", 5000, np.random.default_rng(0))
    assert res.detected and res.packets_sent == res.packets_to_detection
    env = env_for("l3switch", "clean", (5, 0), queries)
    res = fuzz.run_campaign(env, "advanced", 200, np.random.default_rng(0))
    assert not res.detected and res.packets_sent == 200 and res.packets_to_detection is None


def test_extra_packets_after_detection(queries):
    env = env_for("l3switch", "buggy", (5, 0), queries)
    res = fuzz.run_campaign(env, "advanced", 5000, np.random.default_rng(0), extra_after_detect=50)
    assert res.packets_sent >= res.packets_to_detection + 50


def test_ipv4_policy_keeps_destination(queries):
    rng = np.random.default_rng(1)
    base = ipv4_packet("10.0.1.5")
    for _ in range(50):
        p = fuzz.policy_ipv4(rng, base)
        d = decode_packet(p)
        assert d.ipv4.dst_addr == ADDR("10.0.1.5")
        assert len(p) == len(base)


def test_naive_policy_lengths():
    rng = np.random.default_rng(2)
    lens = {len(fuzz.policy_naive(rng)) for _ in range(500)}
    assert min(lens) >= 14 and max(lens) <= 128


def test_encode_state():
    s = fuzz.encode_state(b"\xff\x00\x80")
    assert s.shape == (1500,)
    assert s[0] == 1.0 and s[2] == pytest.approx(128 / 255) and not s[3:].any()


def test_unknown_mode(queries):
    env = env_for("l3switch", "buggy", (5, 0), queries)
    with pytest.raises(ValueError):
        fuzz.run_campaign(env, "telepathy", 10, np.random.default_rng(0))


def test_layout_offsets(queries):
    d = dictionary("l3switch", queries)
    off = d.field_offsets()
    assert off["ipv4.ttl"] == (14 * 8 + 64, 8)
    assert off["ethernet.src_addr"] == (48, 48)
    assert IPV4_LAYOUT.width_of("ttl") == off["ipv4.ttl"][1]
