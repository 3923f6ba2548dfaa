"""Packets-to-detection on the TTL test case: trained agent against random action selection."""

from p6 import pipeline as pl

cfg = pl.RunConfig(program_path=pl.bundled_path("fixtures", "l3switch_buggy.p4l"), runs=5,
                   baselines=("advanced", "ipv4"))
print(pl.summarize(pl.run_baseline_comparison(cfg, cases=[(5, 0)])))
curves = pl.reward_curves(cfg, (5, 0))
print("mean cumulative training reward at the last episode:",
      {m: round(c[-1], 1) for m, c in curves.items()})
