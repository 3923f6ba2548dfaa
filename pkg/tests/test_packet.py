import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p6.packet import (
    ETH_HEADER_LEN, ETHERNET_LAYOUT, IPV4_LAYOUT, BadHeaderLength, FieldOverflow, PacketError, checksum_valid,
    decode_packet, encode_packet, format_ipv4_addr, from_hex, ipv4_header_checksum, ones_complement_sum,
    pack_fields, parse_ipv4_addr, parse_mac, recompute_ipv4_checksum, snapshot_fields, to_hex, unpack_fields,
    with_ipv4_checksum,
)


def oracle_checksum(header):
    # independent: struct words, end-around carry via modulo 0xFFFF
    words = struct.unpack(f"!{len(header) // 2}H", header)
    s = sum(words) - words[5]
    folded = s % 0xFFFF
    if folded == 0 and s:
        folded = 0xFFFF
    return 0xFFFF - folded


def test_known_header_checksum():
    # widely used worked example: 192.168.0.1 -> 192.168.0.199, UDP
    hdr = from_hex("450000730000400040110000c0a80001c0a800c7")
    assert ipv4_header_checksum(hdr) == 0xB861


def test_zero_header_checksum_is_all_ones():
    assert ipv4_header_checksum(bytes(20)) == 0xFFFF


@settings(max_examples=200)
@given(st.binary(min_size=20, max_size=20))
def test_checksum_matches_oracle(hdr):
    assert ipv4_header_checksum(hdr) == oracle_checksum(hdr)


@given(st.integers(0, 10).map(lambda k: 20 + 4 * k).flatmap(lambda n: st.binary(min_size=n, max_size=n)))
def test_installed_checksum_sums_to_ffff(hdr):
    c = ipv4_header_checksum(hdr)
    full = hdr[:10] + c.to_bytes(2, "big") + hdr[12:]
    assert ones_complement_sum(full) == 0xFFFF


@pytest.mark.parametrize("n", [0, 19, 22, 64])
def test_bad_header_lengths(n):
    with pytest.raises(BadHeaderLength):
        ipv4_header_checksum(bytes(n))


def test_ones_complement_sum_pads_odd_tail():
    assert ones_complement_sum(b"\x01") == 0x0100
    assert ones_complement_sum(b"\xff\xff\x00\x01") == 0x0001


def test_layout_widths():
    assert ETHERNET_LAYOUT.byte_width == 14
    assert IPV4_LAYOUT.byte_width == 20
    assert IPV4_LAYOUT.width_of("frag_offset") == 13


ipv4_values = st.fixed_dictionaries({name: st.integers(0, (1 << w) - 1) for name, _, w in IPV4_LAYOUT.fields})


@given(ipv4_values)
def test_pack_unpack_roundtrip(values):
    assert unpack_fields(pack_fields(values, IPV4_LAYOUT), IPV4_LAYOUT) == values


def test_pack_rejects_overflow():
    with pytest.raises(FieldOverflow):
        pack_fields({"version": 16}, IPV4_LAYOUT)
    with pytest.raises(FieldOverflow):
        pack_fields({"ttl": -1}, IPV4_LAYOUT)


def test_bit_placement_of_nibbles():
    raw = pack_fields({"version": 4, "ihl": 5, "flags": 0b010, "frag_offset": 0}, IPV4_LAYOUT)
    assert raw[0] == 0x45
    assert raw[6] == 0x40


@given(ipv4_values.filter(lambda v: v["ihl"] <= 5), st.binary(max_size=64))
def test_encode_decode_roundtrip(values, payload):
    p = encode_packet(ipv4_fields=values, payload=payload)
    d = decode_packet(p)
    assert d.ipv4_status == "ok"
    assert d.ipv4.as_dict() == values
    assert d.payload == payload


def test_options_roundtrip_and_length_check():
    p = encode_packet(ipv4_fields={"ihl": 6, "options": b"\x01\x02\x03\x04"})
    d = decode_packet(p)
    assert d.ipv4.options == b"\x01\x02\x03\x04"
    assert d.ipv4.header_len == 24
    with pytest.raises(PacketError):
        encode_packet(ipv4_fields={"ihl": 6})


def test_decode_statuses():
    assert decode_packet(b"\x00" * 10).ipv4_status == "absent"
    assert decode_packet(encode_packet({"ether_type": 0x86DD})).ipv4_status == "absent"
    assert decode_packet(encode_packet(payload=bytes(10))).ipv4_status == "malformed"
    # ihl claims 60 octets of header, only 20 present
    assert decode_packet(encode_packet(ipv4_fields={"ihl": 15, "options": bytes(40)})[:34]).ipv4_status == "malformed"


def test_encode_length_limits():
    with pytest.raises(PacketError):
        encode_packet(ipv4_fields={}, payload=bytes(1500))


def test_checksum_helpers():
    p = recompute_ipv4_checksum(encode_packet(ipv4_fields={"ttl": 9}, payload=bytes(8)))
    assert checksum_valid(p)
    c = decode_packet(p).ipv4.checksum
    assert not checksum_valid(with_ipv4_checksum(p, c ^ 1))
    assert not checksum_valid(b"\x00" * 14)
    assert recompute_ipv4_checksum(b"\x00" * 14) == b"\x00" * 14
    with pytest.raises(FieldOverflow):
        with_ipv4_checksum(p, 0x10000)


def test_snapshot_and_hex():
    p = encode_packet(ipv4_fields={"ttl": 3})
    snap = snapshot_fields(p)
    assert snap["ipv4"]["ttl"] == 3
    assert snap["ethernet"]["ether_type"] == 0x0800
    assert from_hex(to_hex(p)) == p
    assert len(p) == ETH_HEADER_LEN + 20


def test_address_parsing():
    assert parse_ipv4_addr("10.0.1.5") == 0x0A000105
    assert format_ipv4_addr(0x0A000105) == "10.0.1.5"
    assert parse_mac("aa:bb:cc:dd:ee:01") == 0xAABBCCDDEE01
    for bad in ("10.0.1", "10.0.1.256"):
        with pytest.raises(ValueError):
            parse_ipv4_addr(bad)
    with pytest.raises(ValueError):
        parse_mac("aa:bb")
