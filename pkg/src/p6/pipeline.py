"""Closed loop: fuzz each test case, localize and patch program bugs, report platform issues."""

import hashlib
import json
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import agent as ag
from . import fuzz, localizer, p4q, patcher
from . import program as pg
from . import switch as sw
from .controlplane import load_config

MODES = ("p6", "advanced", "ipv4", "naive")


class InputError(Exception):
    """Bad paths or malformed inputs (exit status 2)."""


@dataclass
class RunConfig:
    program_path: str
    rules_path: str = None
    queries_path: str = None
    patch_lib: str = None
    budget: int = fuzz.DEFAULT_BUDGET
    seed: int = 0
    mode: str = "p6"
    runs: int = 1
    pre_profile: str = "bmv2-like"
    jobs: int = 1
    train: bool = True
    load_model: str = None
    num_episodes: int = 100
    max_ep_len: int = fuzz.DEFAULT_MAX_EP_LEN
    exploit_epsilon: float = 0.05
    max_rounds: int = 4
    baselines: tuple = ()

    def __post_init__(self):
        if self.budget < 1:
            raise InputError("budget must be at least 1")
        if self.runs < 1:
            raise InputError("runs must be at least 1")
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode}")
        if self.pre_profile not in sw.PRE_PROFILES:
            raise InputError(f"unknown PRE profile {self.pre_profile}")
        if not self.train and not self.load_model:
            raise InputError("--no-train needs --load-model")

    def hyperparams(self):
        return ag.Hyperparams(num_episodes=self.num_episodes, max_ep_len=self.max_ep_len)


DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


def bundled_path(*parts):
    return os.path.join(DATA_DIR, *parts)


def default_queries_path():
    return bundled_path("queries", "default.p4q")


def resolve_rules(program_path):
    """``foo_buggy.p4l`` looks for ``foo_buggy.rules`` then ``foo.rules`` next to it."""
    d, base = os.path.split(program_path)
    stem = os.path.splitext(base)[0]
    for cand in (stem, re.sub(r"_(buggy|clean)$", "", stem)):
        p = os.path.join(d, cand + ".rules")
        if os.path.exists(p):
            return p
    raise InputError(f"no rules file found for {program_path}; pass --rules")


def _read(path):
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise InputError(str(e)) from None


@dataclass
class Inputs:
    """Everything a worker needs, as plain text so it pickles cheaply."""

    source: str
    rules: str
    queries: str
    pre_profile: str
    budget: int
    seed: int
    num_episodes: int
    max_ep_len: int
    exploit_epsilon: float

    @property
    def bundled_queries(self):
        return self.queries == _read(default_queries_path())


def load_inputs(cfg):
    rules_path = cfg.rules_path or resolve_rules(cfg.program_path)
    return Inputs(
        source=_read(cfg.program_path),
        rules=_read(rules_path),
        queries=_read(cfg.queries_path or default_queries_path()),
        pre_profile=cfg.pre_profile,
        budget=cfg.budget,
        seed=cfg.seed,
        num_episodes=cfg.num_episodes,
        max_ep_len=cfg.max_ep_len,
        exploit_epsilon=cfg.exploit_epsilon,
    )


def case_streams(seed, case, n=4):
    """Independent generators for one test case, derived from the run seed."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(case))
    return [np.random.default_rng(s) for s in ss.spawn(n)]


@dataclass
class World:
    ast: object
    sa: object
    cfg: object
    inst: object
    queries: list
    dictionary: object


def build_world(source, rules, queries, pre_profile):
    ast = pg.parse_program(source)
    cfg = load_config(rules)
    inst = sw.deploy(ast, cfg, sw.PRE_PROFILES[pre_profile])
    sa = pg.analyze_program(ast)
    qs = p4q.parse_queries(queries) if isinstance(queries, str) else queries
    return World(ast, sa, cfg, inst, qs, fuzz.build_dictionary(sa, cfg, qs))


def test_cases(queries):
    return [(q.id, i) for q in queries for i in range(len(q.conditions))]


def case_name(case):
    return f"{case[0]}.{case[1]}"


# bug classes of the bundled queries, keyed by the condition that exposes them
BUG_CLASSES = {
    (1, 0): (1, "accepted wrong checksum"),
    (6, 3): (2, "generated wrong checksum"),
    (2, 0): (3, "incorrect IP version"),
    (3, 0): (4, "IHL out of bounds"),
    (4, 0): (5, "total length too small"),
    (5, 0): (6, "TTL 0 or 1 accepted"),
    (6, 2): (7, "TTL not decremented"),
    (7, 1): (8, "clone not dropped"),
    (6, 4): (9, "resubmitted packet not dropped"),
    (8, 1): (10, "multicast packet not dropped"),
}

LOCALIZE_EXTRA = 256  # packets kept fuzzing after a detection, as localization evidence


@dataclass
class CaseRun:
    detected: bool
    packets_to_detection: int
    packets_sent: int
    samples: list = field(default_factory=list, repr=False)  # applicable (verdict, trace, packet)
    episode_rewards: list = field(default_factory=list, repr=False)


def train_case(world, case, seed, hp):
    q = world.queries[case[0] - 1]
    env_rng, agent_seed_rng, _, _ = case_streams(seed, case)
    env = fuzz.FuzzEnv(world.inst, q, case[1], world.dictionary, rng=env_rng, record=False,
                       max_ep_len=hp.max_ep_len)
    return ag.train_agent(env, hp, int(agent_seed_rng.integers(2**32)))


def exploit_case(world, case, seed, mode, budget, model=None, epsilon=0.0, max_ep_len=fuzz.DEFAULT_MAX_EP_LEN,
                 extra=0):
    q = world.queries[case[0] - 1]
    _, _, env_rng, pol_rng = case_streams(seed, case)
    env = fuzz.FuzzEnv(world.inst, q, case[1], world.dictionary, rng=env_rng, max_ep_len=max_ep_len)
    res = fuzz.run_campaign(env, "agent" if mode == "p6" else mode, budget, pol_rng, model=model, epsilon=epsilon,
                            extra_after_detect=extra)
    samples = [(r.verdict, r.trace, r.packet) for r in res.records if r.verdict != p4q.NOT_APPLICABLE]
    return CaseRun(res.detected, res.packets_to_detection, res.packets_sent, samples, res.episode_rewards)


def _detect_job(args):
    """Train on the program under test, then fuzz it with the trained agent."""
    inp, case, model = args
    world = build_world(inp.source, inp.rules, inp.queries, inp.pre_profile)
    if model is None:
        hp = ag.Hyperparams(num_episodes=inp.num_episodes, max_ep_len=inp.max_ep_len)
        model = train_case(world, case, inp.seed, hp).online
    run = exploit_case(world, case, inp.seed, "p6", inp.budget, model, inp.exploit_epsilon, inp.max_ep_len,
                       extra=LOCALIZE_EXTRA)
    return case, run


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def sanity_packet(world):
    return fuzz.seed_packets(world.dictionary)[0]


def _failing(world, p):
    res = world.inst.process(p)
    tables = world.sa.table_names
    bad = {(q.id, v.condition_index) for q in world.queries
           for v in p4q.evaluate_query(q, p, res, world.cfg, 0, tables) if v.verdict == p4q.FAIL}
    return res, bad


def sanity_check(before, after):
    """A routable valid packet still leaves the patched switch and fails nothing new."""
    p = sanity_packet(after)
    res, bad = _failing(after, p)
    if not res.egress:
        return False
    return bad <= _failing(before, p)[1]


def replay(world, evidence, cases):
    """Conditions among ``cases`` that some of their own evidence packets now violate."""
    tables = world.sa.table_names
    results = {}
    bad = []
    for case in cases:
        q = world.queries[case[0] - 1]
        for p in evidence.get(case, ()):
            if p not in results:
                results[p] = world.inst.process(p)
            if p4q.evaluate_condition(q, case[1], p, results[p], world.cfg, tables) == p4q.FAIL:
                bad.append(case)
                break
    return bad


def final_check(world, corpus):
    """Conditions violated by any corpus packet on the given program."""
    bad = set()
    for p in corpus:
        bad |= _failing(world, p)[1]
    return sorted(bad)


def _sha(text):
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _top(report, n=8):
    return [[line, round(score, 6)] for line, score in report.scores[:n]]


def detect(cfg, cases=None, inp=None, model=None):
    """Fuzz each test case on the program as given; {case: CaseRun}.

    Every case draws from its own seeded streams, so a subset of cases
    gives the same runs as the full set.
    """
    inp = inp or load_inputs(cfg)
    if cases is None:
        cases = test_cases(build_world(inp.source, inp.rules, inp.queries, inp.pre_profile).queries)
    return dict(_map(_detect_job, [(inp, tuple(c), model) for c in cases], cfg.jobs))


def run_default_pipeline(cfg, log=None):
    """Detect on the program as given, then localize and patch program violations one by one."""
    say = log or (lambda msg: None)
    inp = load_inputs(cfg)
    library = patcher.load_library(cfg.patch_lib)
    loaded = ag.load_model(cfg.load_model) if cfg.load_model else None
    original = build_world(inp.source, inp.rules, inp.queries, inp.pre_profile)
    cases = test_cases(original.queries)

    runs = detect(cfg, cases, inp, loaded)
    evidence = {c: list(dict.fromkeys(p for _, _, p in runs[c].samples)) for c in cases}

    source, world = inp.source, original
    passing = [c for c in cases if not runs[c].detected]
    entries, notices = [], []
    for case in cases:
        q = original.queries[case[0] - 1]
        run = runs[case]
        pd = q.condition_is_pd(case[1])
        entry = {"condition": case_name(case), "platform_dependent": pd, "text": q.conditions[case[1]].text,
                 "detected": run.detected, "packets_to_detection": run.packets_to_detection,
                 "packets_sent": run.packets_sent}
        if inp.bundled_queries and case in BUG_CLASSES:
            entry["bug_class"] = {"id": BUG_CLASSES[case][0], "name": BUG_CLASSES[case][1]}
        entries.append(entry)
        say(f"{case_name(case)}: " + (f"detected after {run.packets_to_detection} packets" if run.detected
                                      else f"no violation in {run.packets_sent} packets"))
        if not run.detected:
            continue
        if pd:
            note = ("replication behaviour of the target's packet replication engine violates the condition; "
                    "reported to the vendor, program left unchanged")
            notices.append({"condition": case_name(case), "note": note})
            entry["vendor_notice"] = note
            entry["patch"] = {"outcome": patcher.VENDOR_NOTICE}
            continue
        report = localizer.localize(original.ast, run.samples)
        entry["localization"] = {"top": _top(report), "inputs_digest": report.inputs_digest}
        result = patcher.run_patcher(source, world.sa, report, case, library, report_ast=original.ast)
        entry["patch"] = result.to_dict()
        say(f"  suspicious lines {[l for l, _ in report.scores[:3]]}; patch {result.outcome}"
            + (f" ({result.patch_id})" if result.patch_id else ""))
        if result.outcome != patcher.APPLIED:
            continue
        new_world = build_world(result.patched_source, inp.rules, original.queries, inp.pre_profile)
        still = replay(new_world, evidence, [case])
        broken = replay(new_world, evidence, passing)
        sane = sanity_check(world, new_world)
        entry["retest"] = {"violated": bool(still), "packets": len(evidence[case])}
        entry["regression"] = {"checked": [case_name(c) for c in passing],
                               "failed": [case_name(c) for c in broken]}
        entry["sanity"] = sane
        if broken or not sane:
            entry["reverted"] = True
            say(f"  patch reverted (regressions {[case_name(c) for c in broken]}, sanity {sane})")
            continue
        # a second pass over the patched program must find the check in place
        again = patcher.run_patcher(result.patched_source, new_world.sa, report, case, library,
                                    report_ast=original.ast)
        entry["second_pass"] = again.outcome
        source, world = result.patched_source, new_world
        if not still:
            passing.append(case)

    corpus = list(dict.fromkeys(p for c in cases for p in evidence[c])) + [sanity_packet(world)]
    violations = final_check(world, corpus)
    pi_left = [case_name(c) for c in violations if not original.queries[c[0] - 1].condition_is_pd(c[1])]
    applied = [e for e in entries if e.get("patch", {}).get("outcome") == patcher.APPLIED and not e.get("reverted")]
    return {
        "program": os.path.basename(cfg.program_path),
        "pre_profile": cfg.pre_profile,
        "seed": cfg.seed,
        "budget": cfg.budget,
        "num_episodes": cfg.num_episodes,
        "test_cases": entries,
        "vendor_notices": notices,
        "final": {
            "violations": [case_name(c) for c in violations],
            "unresolved_program_violations": pi_left,
            "corpus_packets": len(corpus),
            "source_sha256": _sha(source),
        },
        "patched_source": source if source != inp.source else None,
        "summary": {
            "detections": sum(e["detected"] for e in entries),
            "program_detections": sum(e["detected"] and not e["platform_dependent"] for e in entries),
            "platform_detections": sum(e["detected"] and e["platform_dependent"] for e in entries),
            "patches_applied": len(applied),
        },
    }


def exit_status(report):
    return 1 if report["final"]["unresolved_program_violations"] else 0


# ---------------------------------------------------------------- baselines


def _compare_job(args):
    inp, case, mode, run_seed = args
    world = build_world(inp.source, inp.rules, inp.queries, inp.pre_profile)
    model = None
    if mode == "p6":
        model = train_case(world, case, run_seed, ag.Hyperparams(num_episodes=inp.num_episodes,
                                                                  max_ep_len=inp.max_ep_len)).online
    run = exploit_case(world, case, run_seed, mode, inp.budget, model, 0.0, inp.max_ep_len)
    return case, mode, run_seed, run.packets_to_detection


def advanced_episode_rewards(world, case, seed, num_episodes, max_ep_len):
    """Per-episode rewards of random action selection, episodes shaped like training."""
    q = world.queries[case[0] - 1]
    env_rng, _, _, pol_rng = case_streams(seed, case)
    env = fuzz.FuzzEnv(world.inst, q, case[1], world.dictionary, rng=env_rng, record=False, max_ep_len=max_ep_len)
    rewards = []
    for _ in range(num_episodes):
        env.reset()
        total, terminal = 0, False
        while not terminal:
            _, r, terminal, _ = env.step(fuzz.policy_advanced(env, pol_rng))
            total += r
        rewards.append(total)
    return rewards


def _curve_job(args):
    inp, case, mode, run_seed = args
    world = build_world(inp.source, inp.rules, inp.queries, inp.pre_profile)
    if mode == "p6":
        hp = ag.Hyperparams(num_episodes=inp.num_episodes, max_ep_len=inp.max_ep_len)
        return mode, run_seed, train_case(world, case, run_seed, hp).episode_rewards
    return mode, run_seed, advanced_episode_rewards(world, case, run_seed, inp.num_episodes, inp.max_ep_len)


def reward_curves(cfg, case):
    """Mean cumulative training reward per episode, agent vs random actions, over paired seeds."""
    inp = load_inputs(cfg)
    jobs = [(inp, tuple(case), m, cfg.seed + r) for m in ("p6", "advanced") for r in range(cfg.runs)]
    out = {}
    for mode in ("p6", "advanced"):
        per_run = [np.cumsum(rw) for m, _, rw in _map(_curve_job, [j for j in jobs if j[2] == mode], cfg.jobs)]
        out[mode] = np.mean(per_run, axis=0).tolist()
    return out


def run_baseline_comparison(cfg, modes=None, cases=None):
    """Packets-to-detection per test case and mode over paired seeds (no patching).

    The agent is trained per run and then fuzzes greedily. Runs without a
    detection count as ``budget + 1`` in the order statistics.
    """
    inp = load_inputs(cfg)
    world = build_world(inp.source, inp.rules, inp.queries, inp.pre_profile)
    modes = list(modes or ("p6",) + tuple(cfg.baselines))
    cases = cases or test_cases(world.queries)
    jobs = [(inp, c, m, cfg.seed + r) for c in cases for m in modes for r in range(cfg.runs)]
    results = _map(_compare_job, jobs, cfg.jobs)
    rows = []
    for c in cases:
        row = {"condition": case_name(c)}
        for m in modes:
            vals = [ptd for cc, mm, _, ptd in results if cc == c and mm == m]
            censored = [cfg.budget + 1 if v is None else v for v in vals]
            row[m] = {
                "detections": sum(v is not None for v in vals),
                "runs": len(vals),
                "packets_to_detection": vals,
                "median": float(np.median(censored)),
                "q1": float(np.percentile(censored, 25)),
                "q3": float(np.percentile(censored, 75)),
            }
        rows.append(row)
    return {"program": os.path.basename(cfg.program_path), "pre_profile": cfg.pre_profile, "seed": cfg.seed,
            "runs": cfg.runs, "budget": cfg.budget, "modes": modes, "rows": rows}


# ---------------------------------------------------------------- reports


def dumps_report(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def emit_report(report, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_report(report))


def read_report(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def summarize(report):
    """Human-readable lines for a pipeline or comparison report."""
    out = []
    if "rows" in report:
        out.append(f"{report['program']}: {report['runs']} run(s), budget {report['budget']}")
        head = "condition  " + "  ".join(f"{m:>12}" for m in report["modes"])
        out.append(head)
        for row in report["rows"]:
            cells = []
            for m in report["modes"]:
                r = row[m]
                cells.append(f"{'-' if r['median'] is None else r['median']:>8} ({r['detections']}/{r['runs']})"[-12:]
                             .rjust(12))
            out.append(f"{row['condition']:<9}  " + "  ".join(cells))
        return "\n".join(out)
    out.append(f"{report['program']} [{report['pre_profile']}], seed {report['seed']}")
    for c in report["test_cases"]:
        status = f"detected after {c['packets_to_detection']}" if c["detected"] else "ok"
        extra = ""
        if c["detected"]:
            extra = " -> " + c["patch"]["outcome"]
            if "bug_class" in c:
                extra += f"  [bug {c['bug_class']['id']}: {c['bug_class']['name']}]"
        out.append(f"  {c['condition']:<5} {'PD' if c['platform_dependent'] else 'PI'}  {status}{extra}")
    s = report["summary"]
    out.append(f"detections: {s['detections']} ({s['program_detections']} program, "
               f"{s['platform_detections']} platform), patches applied: {s['patches_applied']}")
    left = report["final"]["unresolved_program_violations"]
    out.append("final state: " + ("clean" if not report["final"]["violations"] else
                                  f"violations {', '.join(report['final']['violations'])}"
                                  + (" (program)" if left else " (platform only)")))
    return "\n".join(out)


def timed(fn, *a, **kw):
    t = time.perf_counter()
    r = fn(*a, **kw)
    return r, time.perf_counter() - t
