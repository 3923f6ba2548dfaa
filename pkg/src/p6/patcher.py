"""Template-based patching of missing checks.

A template file (``.patch``) has a ``key: value`` header, a ``---`` line and a
body::

    patch_id: ttl_check
    applies_to: 5.0
    anchor: after_extract
    header: ipv4
    field: ttl
    ---
    if {header}.{field} <= 1 {
      reject
    }

Anchors: ``after_extract`` (right after the ``extract {header}`` line of the
parser state that extracts the header), ``egress_start`` and ``egress_end``.
Placeholders: ``{header}``, ``{field}``, ``{parser_state}``, ``{metadata}``.
"""

import os
import re
from dataclasses import dataclass, field

from . import program as pg

ANCHORS = ("after_extract", "egress_start", "egress_end")
PLACEHOLDER_RE = re.compile(r"\{(header|field|parser_state|metadata)\}")
DEFAULT_THRESHOLD = 0.5

APPLIED, ALREADY_PRESENT, NO_PATCH, VENDOR_NOTICE = "applied", "already_present", "no_patch_available", "vendor_notice"


class MissingName(KeyError):
    def __init__(self, placeholder):
        self.placeholder = placeholder
        super().__init__(placeholder)


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PatchTemplate:
    patch_id: str
    applies_to: tuple  # ((query_id, condition_index), ...)
    anchor: str
    body: tuple  # template lines
    header: str = "ipv4"
    field: str = None
    note: str = ""

    def placeholders(self):
        return sorted({m.group(1) for line in self.body for m in PLACEHOLDER_RE.finditer(line)})


@dataclass
class PatchResult:
    outcome: str
    patched_source: str = None
    lines_added: list = field(default_factory=list)
    patch_id: str = None
    report_note: str = ""

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "patch_id": self.patch_id,
            "lines_added": list(self.lines_added),
            "note": self.report_note,
        }


def parse_template(text, name="<template>"):
    head, sep, body = text.partition("\n---\n")
    if not sep:
        raise TemplateError(f"{name}: missing '---' separator")
    meta = {}
    for raw in head.split("\n"):
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        k, colon, v = raw.partition(":")
        if not colon:
            raise TemplateError(f"{name}: bad header line {raw!r}")
        meta[k.strip()] = v.strip()
    for key in ("patch_id", "applies_to", "anchor"):
        if key not in meta:
            raise TemplateError(f"{name}: missing {key}")
    if meta["anchor"] not in ANCHORS:
        raise TemplateError(f"{name}: unknown anchor {meta['anchor']}")
    applies = []
    for item in meta["applies_to"].split(","):
        q, _, c = item.strip().partition(".")
        applies.append((int(q), int(c or 0)))
    lines = tuple(l for l in body.rstrip("\n").split("\n") if l.strip())
    if not lines:
        raise TemplateError(f"{name}: empty body")
    return PatchTemplate(meta["patch_id"], tuple(applies), meta["anchor"], lines,
                         meta.get("header", "ipv4"), meta.get("field"), meta.get("note", ""))


def load_library(path=None):
    """Templates from a directory (default: the bundled library), sorted by file name."""
    if path is None:
        path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "patches")
    items = []
    for fn in sorted(os.listdir(path)):
        if fn.endswith(".patch"):
            with open(os.path.join(path, fn), encoding="utf-8") as f:
                items.append((fn, f.read()))
    return [parse_template(text, name) for name, text in items]


def instantiate(template, sa):
    """Substitute program names; returns the concrete body lines."""
    names = {}
    if template.header in sa.header_names:
        names["header"] = template.header
        names["parser_state"] = sa.extract_states.get(template.header)
        if template.field and template.field in sa.field_names.get(template.header, ()):
            names["field"] = template.field
    if sa.metadata_names:
        names["metadata"] = sa.metadata_names[0]

    def sub(m):
        v = names.get(m.group(1))
        if v is None:
            raise MissingName(m.group(1))
        return v

    lines = [PLACEHOLDER_RE.sub(sub, line) for line in template.body]
    if template.anchor == "after_extract" and "header" not in names:
        raise MissingName("header")
    return lines


def _anchor_region(template, ast, sa):
    if template.anchor == "after_extract":
        state = sa.extract_states.get(template.header)
        if state is None:
            return None
        return next((r for r in ast.regions() if r.kind == "state" and r.name == state), None)
    return next((r for r in ast.regions() if r.kind == "control" and r.name == "egress"), None)


def _insertion(template, region, lines):
    """(index in ``lines`` to insert before, indentation) for a region."""
    def indent_of(n):
        t = lines[n - 1]
        return t[:len(t) - len(t.lstrip())]

    body = region.body
    if template.anchor == "after_extract":
        ext = next((s for s in body if isinstance(s, pg.Extract) and s.header == template.header), None)
        if ext is None:
            return None
        return ext.line, indent_of(ext.line)
    if template.anchor == "egress_start":
        ind = indent_of(body[0].line) if body else indent_of(region.open_line) + "  "
        return region.open_line, ind
    ind = indent_of(body[0].line) if body else indent_of(region.open_line) + "  "
    return region.close_line - 1, ind


def _normalized_region(lines, region):
    return [pg.normalize_statement_text(t) for t in lines[region.open_line:region.close_line - 1]]


def patch_present(source, patch_lines, region=None):
    """True iff the patch lines appear contiguously (normalized) in the region.

    Without a region the whole program is searched.
    """
    lines = source.split("\n")
    if region is None:
        hay = [pg.normalize_statement_text(t) for t in lines]
    else:
        hay = _normalized_region(lines, region)
    hay = [h for h in hay if h]
    needle = [pg.normalize_statement_text(t) for t in patch_lines]
    needle = [n for n in needle if n]
    n = len(needle)
    return any(hay[i:i + n] == needle for i in range(len(hay) - n + 1))


def apply_template(source, template, sa, ast=None):
    """Insert an instantiated template; returns (new_source, added_line_numbers) or None."""
    ast = ast if ast is not None else pg.parse_program(source)
    region = _anchor_region(template, ast, sa)
    if region is None:
        return None
    lines = source.split("\n")
    where = _insertion(template, region, lines)
    if where is None:
        return None
    after, indent = where
    body = instantiate(template, sa)
    new = [indent + l for l in body]
    out = lines[:after] + new + lines[after:]
    return "\n".join(out), list(range(after + 1, after + 1 + len(new)))


def _same_region(a, b):
    return a is not None and b is not None and (a.kind, a.name) == (b.kind, b.name)


def run_patcher(source, sa, report, violated, library=None, threshold=DEFAULT_THRESHOLD, report_ast=None):
    """Walk suspicious lines and apply the first template whose anchor region holds one.

    ``violated`` is a ``(query_id, condition_index)`` pair. ``report_ast`` is
    the program the report's line numbers refer to when it differs from
    ``source`` (e.g. after earlier patches); regions are matched by name.
    """
    library = load_library() if library is None else library
    templates = [t for t in library if tuple(violated) in t.applies_to]
    if not templates:
        return PatchResult(NO_PATCH, report_note=f"no template for condition {violated[0]}.{violated[1]}")
    ast = pg.parse_program(source)
    traced = report_ast if report_ast is not None else ast
    for line in report.lines_above(threshold):
        region = traced.region_of(line)
        if region is None:
            continue
        for t in templates:
            anchor = _anchor_region(t, ast, sa)
            if not _same_region(anchor, region):
                continue
            try:
                body = instantiate(t, sa)
            except MissingName:
                continue
            if patch_present(source, body, anchor):
                return PatchResult(ALREADY_PRESENT, None, [], t.patch_id,
                                   f"{t.patch_id} already present near line {line}; programmer informed")
            applied = apply_template(source, t, sa, ast)
            if applied is None:
                continue
            new_source, added = applied
            new_ast = pg.parse_program(new_source)
            if pg.validate_program(new_ast):
                continue
            return PatchResult(APPLIED, new_source, added, t.patch_id,
                               f"{t.patch_id} inserted at line {added[0]} (suspicious line {line})")
    return PatchResult(NO_PATCH, report_note="no suspicious line lies in a patchable region")
