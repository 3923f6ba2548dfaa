"""Expired packet on the buggy router: watch it leave with ttl 255, then localize and patch."""

from p6 import controlplane, localizer, patcher, pipeline, switch
from p6 import program as pg
from p6.p4q import FAIL, PASS
from p6.packet import decode_packet, encode_packet, parse_ipv4_addr, recompute_ipv4_checksum


def packet(ttl):
    p = encode_packet(ipv4_fields={"dst_addr": parse_ipv4_addr("10.0.1.5"), "ttl": ttl, "total_len": 60},
                      payload=bytes(40))
    return recompute_ipv4_checksum(p)


def load(name):
    with open(pipeline.bundled_path("fixtures", name), encoding="utf-8") as f:
        return f.read()


src = load("l3switch_buggy.p4l")
cfg = controlplane.load_config(load("l3switch.rules"))
ast = pg.parse_program(src)
inst = switch.deploy(ast, cfg)

out = inst.process(packet(0))
print("ttl 0 in  ->", [(e.port, decode_packet(e.packet).ipv4.ttl) for e in out.egress], "out (port, ttl)")

samples = [(FAIL if t <= 1 else PASS, inst.process(packet(t)).trace) for t in (0, 1, 2, 64)]
report = localizer.localize(ast, samples)
print(localizer.annotate(src, report))

result = patcher.run_patcher(src, pg.analyze_program(ast), report, (5, 0))
print(result.outcome, result.patch_id, "lines", result.lines_added)
fixed = switch.deploy(pg.parse_program(result.patched_source), cfg)
for t in (0, 1, 2):
    print(f"patched, ttl {t}:", "dropped" if fixed.process(packet(t)).dropped_original else "forwarded")
