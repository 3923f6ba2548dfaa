import argparse
import sys
import time

from . import pipeline as pl
from .agent import DimensionMismatch
from .controlplane import ConfigError
from .p4q import QuerySyntaxError, UnknownField
from .patcher import TemplateError
from .program import ProgramSyntaxError, UnresolvedIdentifier
from .switch import DeployError

BASELINES = ("advanced", "ipv4", "naive")

INPUT_ERRORS = (pl.InputError, ConfigError, QuerySyntaxError, UnknownField, TemplateError, ProgramSyntaxError,
                UnresolvedIdentifier, DeployError, DimensionMismatch, OSError, ValueError)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="p6",
        description="Fuzz a mini-P4 program against p4q queries, localize violations and patch them.",
    )
    ap.add_argument("program", help="program source (.p4l)")
    ap.add_argument("--default", action="store_true",
                    help="run the full detect/localize/patch pipeline (the default when --baseline is absent)")
    ap.add_argument("--queries", help="p4q query file (default: bundled queries)")
    ap.add_argument("--rules", help="forwarding rules (default: <stem>.rules next to the program)")
    ap.add_argument("--patch-lib", help="directory of .patch templates (default: bundled library)")
    ap.add_argument("--budget", type=int, default=pl.fuzz.DEFAULT_BUDGET, help="packets per test case")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--runs", type=int, default=1, help="paired runs for --baseline")
    ap.add_argument("--baseline", choices=BASELINES + ("all",),
                    help="compare packets-to-detection of the agent with a baseline fuzzer instead of patching")
    ap.add_argument("--pre-profile", choices=sorted(pl.sw.PRE_PROFILES), default="bmv2-like")
    ap.add_argument("--jobs", type=int, default=1, help="test cases run in parallel")
    ap.add_argument("--report", default="p6-report.json", help="JSON report path")
    ap.add_argument("--episodes", type=int, default=100, help="training episodes per test case")
    ap.add_argument("--train", dest="train", action=argparse.BooleanOptionalAction, default=True,
                    help="train an agent per test case (--no-train needs --load-model)")
    ap.add_argument("--load-model", help="model file used instead of training")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    say = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        cfg = pl.RunConfig(
            program_path=args.program,
            rules_path=args.rules,
            queries_path=args.queries,
            patch_lib=args.patch_lib,
            budget=args.budget,
            seed=args.seed,
            runs=args.runs,
            pre_profile=args.pre_profile,
            jobs=max(1, args.jobs),
            train=args.train,
            load_model=None if args.train else args.load_model,
            num_episodes=args.episodes,
            baselines=() if not args.baseline else (BASELINES if args.baseline == "all" else (args.baseline,)),
        )
        t0 = time.perf_counter()
        if args.baseline:
            report = pl.run_baseline_comparison(cfg)
            status = 0
        else:
            report = pl.run_default_pipeline(cfg, log=say)
            status = pl.exit_status(report)
        pl.emit_report(report, args.report)
    except INPUT_ERRORS as e:
        print(f"p6: error: {e}", file=sys.stderr)
        return 2
    if not args.quiet:
        print(pl.summarize(report))
        print(f"report written to {args.report} ({time.perf_counter() - t0:.1f}s)")
    return status


if __name__ == "__main__":
    sys.exit(main())
