"""The same clone/drop program under the two replication-engine profiles."""

from p6 import pipeline as pl

for profile in ("bmv2-like", "strict"):
    cfg = pl.RunConfig(program_path=pl.bundled_path("fixtures", "clone_acl_buggy.p4l"), pre_profile=profile,
                       budget=2000, num_episodes=50)
    run = pl.detect(cfg, [(7, 1)])[(7, 1)]
    print(f"{profile:>9}: condition 7.1 " + (f"violated after {run.packets_to_detection} packets"
                                             if run.detected else f"held for {run.packets_sent} packets"))
