"""Byte-exact Ethernet/IPv4 packet model.

Packets are plain ``bytes``.  Header fields are described by
:class:`HeaderLayout` objects so the same bit-level packing is shared with the
switch interpreter.  Malformed packets are ordinary values: decoding never
raises, it reports the IPv4 view as absent or malformed instead.
"""

from dataclasses import dataclass, field

ETH_HEADER_LEN = 14
IPV4_MIN_HEADER_LEN = 20
MAX_PACKET_LEN = 1500
ETHERTYPE_IPV4 = 0x0800


class PacketError(ValueError):
    pass


class FieldOverflow(PacketError):
    pass


class BadHeaderLength(PacketError):
    pass


@dataclass(frozen=True)
class HeaderLayout:
    """Ordered, contiguous bit fields of one header."""

    header_name: str
    fields: tuple  # of (field_name, bit_offset, bit_width)

    @classmethod
    def from_widths(cls, name, widths):
        fields = []
        offset = 0
        for fname, width in widths:
            fields.append((fname, offset, width))
            offset += width
        return cls(name, tuple(fields))

    @property
    def bit_width(self):
        if not self.fields:
            return 0
        _, off, w = self.fields[-1]
        return off + w

    @property
    def byte_width(self):
        return self.bit_width // 8

    def width_of(self, field_name):
        for name, _, width in self.fields:
            if name == field_name:
                return width
        raise KeyError(field_name)

    @property
    def field_names(self):
        return [f[0] for f in self.fields]


ETHERNET_LAYOUT = HeaderLayout.from_widths(
    "ethernet", [("dst_addr", 48), ("src_addr", 48), ("ether_type", 16)]
)

IPV4_LAYOUT = HeaderLayout.from_widths(
    "ipv4",
    [
        ("version", 4),
        ("ihl", 4),
        ("diffserv", 8),
        ("total_len", 16),
        ("identification", 16),
        ("flags", 3),
        ("frag_offset", 13),
        ("ttl", 8),
        ("protocol", 8),
        ("checksum", 16),
        ("src_addr", 32),
        ("dst_addr", 32),
    ],
)

STANDARD_LAYOUTS = {"ethernet": ETHERNET_LAYOUT, "ipv4": IPV4_LAYOUT}


def unpack_fields(data, layout):
    """Read the fields of ``layout`` from the first ``layout.byte_width`` octets."""
    n = layout.byte_width
    if len(data) < n:
        raise PacketError(f"{layout.header_name}: need {n} octets, have {len(data)}")
    word = int.from_bytes(data[:n], "big")
    total = layout.bit_width
    out = {}
    for name, offset, width in layout.fields:
        shift = total - offset - width
        out[name] = (word >> shift) & ((1 << width) - 1)
    return out


def pack_fields(values, layout):
    total = layout.bit_width
    word = 0
    for name, offset, width in layout.fields:
        v = int(values.get(name, 0))
        if v < 0 or v >= (1 << width):
            raise FieldOverflow(f"{layout.header_name}.{name}={v} exceeds {width} bits")
        word |= v << (total - offset - width)
    return word.to_bytes(layout.byte_width, "big")


@dataclass(frozen=True)
class Ipv4HeaderView:
    version: int
    ihl: int
    diffserv: int
    total_len: int
    identification: int
    flags: int
    frag_offset: int
    ttl: int
    protocol: int
    checksum: int
    src_addr: int
    dst_addr: int
    options: bytes = b""

    def as_dict(self):
        d = {name: getattr(self, name) for name in IPV4_LAYOUT.field_names}
        return d

    @property
    def header_len(self):
        return max(5, self.ihl) * 4


@dataclass(frozen=True)
class DecodedPacket:
    ethernet: dict
    ipv4: Ipv4HeaderView = None
    # "ok", "absent" (not IPv4) or "malformed" (IPv4 EtherType, bad length)
    ipv4_status: str = "absent"
    payload: bytes = field(default=b"", repr=False)


ETH_DEFAULTS = {"dst_addr": 0x000000000002, "src_addr": 0x000000000001, "ether_type": ETHERTYPE_IPV4}

IPV4_DEFAULTS = {
    "version": 4,
    "ihl": 5,
    "diffserv": 0,
    "total_len": 20,
    "identification": 0,
    "flags": 0,
    "frag_offset": 0,
    "ttl": 64,
    "protocol": 6,
    "checksum": 0,
    "src_addr": 0x0A000001,
    "dst_addr": 0x0A000002,
}


def encode_packet(eth_fields=None, ipv4_fields=None, payload=b""):
    """Build packet bytes.

    ``ipv4_fields`` may carry an ``options`` entry; its length must equal
    ``4 * (ihl - 5)``.  The checksum is written exactly as given.
    """
    eth = dict(ETH_DEFAULTS)
    eth.update(eth_fields or {})
    out = bytearray(pack_fields(eth, ETHERNET_LAYOUT))
    if ipv4_fields is not None:
        ip = dict(IPV4_DEFAULTS)
        ip.update(ipv4_fields)
        options = bytes(ip.pop("options", b""))
        ihl = ip["ihl"]
        if ihl >= 5 and len(options) != 4 * (ihl - 5):
            raise PacketError(f"ihl={ihl} needs {4 * (ihl - 5)} option octets, got {len(options)}")
        out += pack_fields(ip, IPV4_LAYOUT)
        out += options
    out += bytes(payload)
    if not ETH_HEADER_LEN <= len(out) <= MAX_PACKET_LEN:
        raise PacketError(f"packet length {len(out)} outside {ETH_HEADER_LEN}..{MAX_PACKET_LEN}")
    return bytes(out)


def decode_packet(p):
    if len(p) < ETH_HEADER_LEN:
        return DecodedPacket(ethernet={}, ipv4=None, ipv4_status="absent", payload=bytes(p))
    eth = unpack_fields(p, ETHERNET_LAYOUT)
    rest = bytes(p[ETH_HEADER_LEN:])
    if eth["ether_type"] != ETHERTYPE_IPV4:
        return DecodedPacket(eth, None, "absent", rest)
    if len(rest) < IPV4_MIN_HEADER_LEN:
        return DecodedPacket(eth, None, "malformed", rest)
    ip = unpack_fields(rest, IPV4_LAYOUT)
    ihl = ip["ihl"]
    if ihl >= 5 and len(rest) < 4 * ihl:
        return DecodedPacket(eth, None, "malformed", rest)
    hlen = max(5, ihl) * 4
    view = Ipv4HeaderView(**ip, options=rest[IPV4_MIN_HEADER_LEN:hlen])
    return DecodedPacket(eth, view, "ok", rest[hlen:])


def ones_complement_sum(data):
    """16-bit ones-complement sum of big-endian words (odd tail padded)."""
    if len(data) % 2:
        data = bytes(data) + b"\x00"
    total = sum(int.from_bytes(data[i:i + 2], "big") for i in range(0, len(data), 2))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def ipv4_header_checksum(header_octets):
    n = len(header_octets)
    if n % 4 or not IPV4_MIN_HEADER_LEN <= n <= 60:
        raise BadHeaderLength(f"IPv4 header length {n} not a multiple of 4 in 20..60")
    zeroed = bytes(header_octets[:10]) + b"\x00\x00" + bytes(header_octets[12:])
    return (~ones_complement_sum(zeroed)) & 0xFFFF


def ipv4_header_octets(p):
    """Header octets (options included) of an IPv4 packet, or None if not decodable."""
    d = decode_packet(p)
    if d.ipv4 is None:
        return None
    return bytes(p[ETH_HEADER_LEN:ETH_HEADER_LEN + d.ipv4.header_len])


def checksum_valid(p):
    hdr = ipv4_header_octets(p)
    if hdr is None:
        return False
    return ones_complement_sum(hdr) == 0xFFFF


def with_ipv4_checksum(p, value):
    if not 0 <= value <= 0xFFFF:
        raise FieldOverflow(f"checksum {value}")
    b = bytearray(p)
    b[ETH_HEADER_LEN + 10:ETH_HEADER_LEN + 12] = value.to_bytes(2, "big")
    return bytes(b)


def recompute_ipv4_checksum(p):
    hdr = ipv4_header_octets(p)
    if hdr is None:
        return bytes(p)
    return with_ipv4_checksum(p, ipv4_header_checksum(hdr))


def snapshot_fields(p):
    """Header fields as ``{header: {field: value}}`` for headers present in ``p``."""
    d = decode_packet(p)
    out = {}
    if d.ethernet:
        out["ethernet"] = dict(d.ethernet)
    if d.ipv4 is not None:
        out["ipv4"] = d.ipv4.as_dict()
    return out


def to_hex(p):
    return bytes(p).hex()


def from_hex(s):
    return bytes.fromhex(s)


def parse_ipv4_addr(text):
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"bad IPv4 address {text!r}")
    value = 0
    for part in parts:
        octet = int(part)
        if not 0 <= octet <= 255:
            raise ValueError(f"bad IPv4 address {text!r}")
        value = (value << 8) | octet
    return value


def format_ipv4_addr(value):
    return ".".join(str((value >> s) & 0xFF) for s in (24, 16, 8, 0))


def parse_mac(text):
    parts = text.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return int("".join(p.zfill(2) for p in parts), 16)
