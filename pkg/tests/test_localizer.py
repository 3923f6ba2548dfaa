import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from p6 import localizer as lc
from p6 import program as pg
from p6.p4q import FAIL, NOT_APPLICABLE, PASS
from conftest import deployed, ipv4_packet, read_fixture


def oracle_scores(samples):
    # direct transcription of the counting procedure, one line at a time
    lines = sorted({l for v, t in samples if v in (PASS, FAIL) for l in t})
    total_f = sum(v == FAIL for v, _ in samples)
    total_p = sum(v == PASS for v, _ in samples)
    out = {}
    for j in lines:
        f = sum(1 for v, t in samples if v == FAIL and j in t)
        p = sum(1 for v, t in samples if v == PASS and j in t)
        fr = f / total_f if total_f else 0.0
        pr = p / total_p if total_p else 0.0
        out[j] = fr / (fr + pr) if fr + pr else 0.0
    return out


def random_samples(rng):
    n = int(rng.integers(1, 40))
    samples = []
    for _ in range(n):
        v = rng.choice([PASS, FAIL, NOT_APPLICABLE], p=[0.5, 0.35, 0.15])
        trace = tuple(sorted(set(rng.integers(1, 30, size=int(rng.integers(0, 12))).tolist())))
        samples.append((str(v), trace))
    samples.append((FAIL, (1,)))
    return samples


def test_matches_counting_oracle_on_random_sets():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        samples = random_samples(rng)
        got = dict(lc.localize(None, samples).scores)
        want = oracle_scores(samples)
        assert set(got) == set(want)
        worst = max(worst, max(abs(got[k] - want[k]) for k in want))
    assert worst <= 1e-12


def test_analytic_cases():
    samples = [(FAIL, (1, 3)), (PASS, (2, 3)), (PASS, (2,))]
    r = lc.localize(None, samples)
    assert r.score_of(1) == 1.0
    assert r.score_of(2) == 0.0
    assert r.score_of(3) == 2 / 3
    assert r.score_of(9) is None


def test_ordering_and_threshold():
    r = lc.localize(None, [(FAIL, (5, 1)), (FAIL, (5, 2)), (PASS, (1, 2, 7))])
    # line 1: failed ratio 1/2, passed ratio 1 -> 1/3
    assert r.scores == ((5, 1.0), (1, 1 / 3), (2, 1 / 3), (7, 0.0))
    assert r.lines_above(0.3) == [5, 1, 2]
    assert r.max_score == 1.0


def test_needs_a_failure():
    with pytest.raises(lc.NoFailingInput):
        lc.localize(None, [(PASS, (1,)), (NOT_APPLICABLE, (2,))])


def test_trace_must_match_program():
    ast = pg.parse_program(read_fixture("l3switch_buggy.p4l"))
    with pytest.raises(lc.TraceProgramMismatch):
        lc.localize(ast, [(FAIL, (1, 30))])  # line 1 is a comment


@given(st.lists(st.tuples(st.sampled_from([PASS, FAIL]), st.frozensets(st.integers(1, 20), max_size=6)),
                min_size=1, max_size=25))
def test_scores_in_unit_interval_and_permutation_invariant(raw):
    samples = [(v, tuple(t)) for v, t in raw] + [(FAIL, (3,))]
    r = lc.localize(None, samples)
    assert all(0.0 <= s <= 1.0 for _, s in r.scores)
    assert lc.localize(None, samples[::-1]).scores == r.scores


def test_counters():
    c = lc.count_spectrum([(FAIL, (1, 1, 2)), (PASS, (2,)), (NOT_APPLICABLE, (9,))])
    assert (c.total_failed, c.total_passed) == (1, 1)
    assert c.failed == {1: 1, 2: 1} and c.passed == {2: 1}


def test_real_traces_rank_the_missing_check_region():
    # ttl 0 fails query 5 on the buggy router, ttl 64 packets with ttl <= 1 absent pass nothing,
    # so use both routable and unroutable expired packets: only the routed ones fail
    src = read_fixture("l3switch_buggy.p4l")
    ast = pg.parse_program(src)
    inst = deployed("l3switch")
    samples = []
    for dst, ttl in (("10.0.1.5", 0), ("10.0.2.5", 1), ("192.168.0.1", 0), ("10.0.9.9", 1)):
        p = ipv4_packet(dst, ttl=ttl)
        res = inst.process(p)
        samples.append((PASS if res.dropped_original else FAIL, res.trace, p))
    r = lc.localize(ast, samples)
    lines = src.split("\n")
    extract_line = next(n for n, t in enumerate(lines, 1) if t.strip() == "extract ipv4")
    assert r.score_of(extract_line) == 0.5
    top = [lines[n - 1].strip() for n in r.lines_above(r.max_score)]
    assert "decrement ipv4.ttl" in top
    assert len(r.inputs_digest) == 16


def test_annotate():
    src = "a\nb\nc"
    out = lc.annotate(src, lc.localize(None, [(FAIL, (2,))]))
    assert out.split("\n")[1].startswith("1.000")
    assert out.split("\n")[0].startswith("     ")
