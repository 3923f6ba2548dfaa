"""Spectrum-based fault localization (Tarantula) over switch traces."""

import hashlib
from dataclasses import dataclass

from .p4q import FAIL, PASS


class NoFailingInput(ValueError):
    pass


class TraceProgramMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SpectrumCounters:
    passed: dict  # line -> number of passing packets executing it
    failed: dict
    total_passed: int
    total_failed: int


@dataclass(frozen=True)
class LocalizationReport:
    scores: tuple  # ((line, score), ...) sorted by score desc, line asc
    inputs_digest: str

    def score_of(self, line):
        return dict(self.scores).get(line)

    @property
    def max_score(self):
        return max((s for _, s in self.scores), default=0.0)

    def lines_above(self, threshold):
        return [line for line, s in self.scores if s >= threshold]

    def to_dict(self):
        return {"scores": [[line, s] for line, s in self.scores], "inputs_digest": self.inputs_digest}


def count_spectrum(samples):
    """``samples`` are ``(verdict, trace)`` pairs; not-applicable ones are ignored."""
    passed, failed = {}, {}
    tp = tf = 0
    for verdict, trace in samples:
        if verdict == PASS:
            tp += 1
            bucket = passed
        elif verdict == FAIL:
            tf += 1
            bucket = failed
        else:
            continue
        for line in set(trace):
            bucket[line] = bucket.get(line, 0) + 1
    return SpectrumCounters(passed, failed, tp, tf)


def suspiciousness(fail_j, pass_j, total_failed, total_passed):
    f = fail_j / total_failed if total_failed else 0.0
    p = pass_j / total_passed if total_passed else 0.0
    if f + p == 0:
        return 0.0
    return f / (p + f)


def _digest(samples):
    h = hashlib.sha256()
    for verdict, trace, packet in samples:
        h.update(verdict.encode())
        h.update(bytes(packet))
        h.update(",".join(map(str, sorted(set(trace)))).encode())
        h.update(b";")
    return h.hexdigest()[:16]


def localize(program, samples):
    """Score every executed line.

    ``program`` is a ProgramAst (used to check that traced lines are
    statements) or None; ``samples`` are ``(verdict, trace)`` or
    ``(verdict, trace, packet)`` tuples.
    """
    samples = [tuple(s) + (b"",) * (3 - len(s)) for s in samples]
    c = count_spectrum([(v, t) for v, t, _ in samples])
    if c.total_failed == 0:
        raise NoFailingInput("localization needs at least one failing packet")
    if program is not None:
        stmts = program.statement_lines()
        lines = set(c.passed) | set(c.failed)
        bad = sorted(lines - stmts)
        if bad:
            raise TraceProgramMismatch(f"traced lines {bad} are not statements")
    lines = set(c.passed) | set(c.failed)
    scored = [
        (line, suspiciousness(c.failed.get(line, 0), c.passed.get(line, 0), c.total_failed, c.total_passed))
        for line in lines
    ]
    scored.sort(key=lambda ls: (-ls[1], ls[0]))
    return LocalizationReport(tuple(scored), _digest(samples))


def annotate(source, report):
    """Source listing with the score of each executed line."""
    scores = dict(report.scores)
    out = []
    for n, text in enumerate(source.split("\n"), start=1):
        tag = f"{scores[n]:.3f}" if n in scores else "     "
        out.append(f"{tag} {n:4d}  {text}")
    return "\n".join(out)
