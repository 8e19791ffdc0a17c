"""Parsing of change-request documents.

A change request is a coversheet followed by a revision-marked body.  The
coversheet carries a header row plus labelled fields:

    ``<spec> CR <cr> rev <rev> Current version <version>``
    ``Title:`` / ``Date:`` / ``Category:`` / ``Release:`` single-line fields
    ``Reason for change:`` / ``Summary of change:`` /
    ``Consequences if not approved:`` (or ``... if not revised:``) sections
    ``Changes:`` terminator, everything after it is the marked body

Labels are matched case-insensitively at the start of a line.  Field text
collapses runs of spaces and tabs but preserves line breaks.  The body is kept
byte-exact.
"""

from __future__ import annotations

import datetime
import logging
import re
from dataclasses import dataclass
from typing import Mapping

from .corpus import (
    Mark,
    RevisionMarkedDocument,
    Segment,
    parse_line_marked,
    render_marked_lines,
    render_post,
    render_pre,
)

logger = logging.getLogger(__name__)

CATEGORIES = frozenset("ABCDF")

_HEADER_RE = re.compile(
    r"^(\d{2}\.\d{3}) CR (\S+) rev (\S+) Current version (\S+)$",
    re.IGNORECASE,
)
_CATEGORY_RE = re.compile(r"^([A-Za-z])(?:\s*\(.*\))?$")

_SINGLE_LABELS = ("title", "date", "category", "release")
_SECTION_LABELS = (
    "reason for change",
    "summary of change",
    "consequences if not approved",
    "consequences if not revised",
    "changes",
)
_MANDATORY_DISPLAY = (
    "header",
    "Title",
    "Date",
    "Category",
    "Release",
    "Reason for change",
    "Summary of change",
    "Consequences",
    "Changes",
)


class ParserError(Exception):
    """Base class for change-request parsing failures."""


class CoversheetError(ParserError):
    """The coversheet is malformed; ``missing`` lists every absent label."""

    def __init__(self, message: str, missing: tuple[str, ...] = ()) -> None:
        super().__init__(message)
        self.missing = missing


@dataclass(frozen=True)
class ChangedSpan:
    """One maximal run of marked lines, positioned against the pre-change text."""

    orig_start: int
    deleted: tuple[str, ...]
    inserted: tuple[str, ...]


@dataclass(frozen=True)
class RevisionExtract:
    original: str
    revised: str
    spans: tuple[ChangedSpan, ...]


@dataclass(frozen=True)
class Validity:
    valid: bool
    reason: str | None = None


@dataclass(frozen=True)
class ChangeRequest:
    spec_number: str
    cr_number: str
    revision: str
    current_version: str
    title: str
    date: datetime.date
    category: str
    release: str
    reason_for_change: str
    summary_of_change: str
    consequences: str
    body: RevisionMarkedDocument

    @property
    def cr_id(self) -> str:
        return f"{self.spec_number}_{self.cr_number}_{self.revision}"

    @property
    def original_statements(self) -> str:
        return render_pre(self.body)

    @property
    def revised_statements(self) -> str:
        return render_post(self.body)

    @property
    def no_diff(self) -> bool:
        return not self.body.has_marks

    def to_record(self) -> dict[str, object]:
        return {
            "spec_number": self.spec_number,
            "cr_number": self.cr_number,
            "revision": self.revision,
            "current_version": self.current_version,
            "title": self.title,
            "date": self.date.isoformat(),
            "category": self.category,
            "release": self.release,
            "reason_for_change": self.reason_for_change,
            "summary_of_change": self.summary_of_change,
            "consequences": self.consequences,
            "body": render_marked_lines(self.body.segments),
            "doc_id": self.body.doc_id,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> ChangeRequest:
        body = parse_line_marked(str(record["body"]), doc_id=str(record.get("doc_id", "")))
        return cls(
            spec_number=str(record["spec_number"]),
            cr_number=str(record["cr_number"]),
            revision=str(record["revision"]),
            current_version=str(record["current_version"]),
            title=str(record["title"]),
            date=datetime.date.fromisoformat(str(record["date"])),
            category=str(record["category"]),
            release=str(record["release"]),
            reason_for_change=str(record["reason_for_change"]),
            summary_of_change=str(record["summary_of_change"]),
            consequences=str(record["consequences"]),
            body=body,
        )


def _collapse(line: str) -> str:
    return re.sub(r"[ \t]+", " ", line).strip()


def _match_label(line: str) -> tuple[str, str] | None:
    stripped = line.strip()
    lowered = stripped.lower()
    for name in _SINGLE_LABELS + _SECTION_LABELS:
        if lowered.startswith(name):
            rest = stripped[len(name) :].lstrip()
            if rest.startswith(":"):
                return name, rest[1:].strip()
    return None


def _strip_blank_edges(lines: list[str]) -> list[str]:
    start, end = 0, len(lines)
    while start < end and not lines[start]:
        start += 1
    while end > start and not lines[end - 1]:
        end -= 1
    return lines[start:end]


def parse_coversheet(doc: RevisionMarkedDocument) -> ChangeRequest:
    """Parse a normalized document into a change request.

    Raises :class:`CoversheetError` naming every missing mandatory label at
    once, so a malformed document is diagnosed in a single pass.
    """
    where = doc.doc_id or "document"

    changes_idx: int | None = None
    for i, seg in enumerate(doc.segments):
        if seg.mark is Mark.UNCHANGED:
            match = _match_label(seg.text)
            if match is not None and match[0] == "changes":
                changes_idx = i
                break

    head = doc.segments if changes_idx is None else doc.segments[:changes_idx]
    body_segments = () if changes_idx is None else doc.segments[changes_idx + 1 :]
    if any(seg.mark is not Mark.UNCHANGED for seg in head):
        raise CoversheetError(f"{where}: revision mark inside the coversheet")

    lines = [_collapse(seg.text) for seg in head]

    header: tuple[str, str, str, str] | None = None
    singles: dict[str, str] = {}
    sections: dict[str, list[str]] = {}
    current_section: list[str] | None = None

    start = 0
    while start < len(lines) and not lines[start]:
        start += 1
    if start < len(lines):
        header_match = _HEADER_RE.match(lines[start])
        if header_match is not None:
            header = header_match.groups()
            start += 1

    for line in lines[start:]:
        match = _match_label(line)
        if match is None:
            if current_section is not None:
                current_section.append(line)
            elif line:
                logger.debug("%s: ignoring coversheet preamble line %r", where, line)
            continue
        name, value = match
        if name in _SINGLE_LABELS:
            if name in singles:
                raise CoversheetError(f"{where}: duplicate label {name.title()!r}")
            singles[name] = value
            current_section = None
        else:
            if name in sections:
                raise CoversheetError(f"{where}: duplicate label {name.title()!r}")
            sections[name] = [value] if value else []
            current_section = sections[name]

    missing = []
    if header is None:
        missing.append("header")
    for name in _SINGLE_LABELS:
        if name not in singles:
            missing.append(name.title())
    if "reason for change" not in sections:
        missing.append("Reason for change")
    if "summary of change" not in sections:
        missing.append("Summary of change")
    if "consequences if not approved" not in sections and "consequences if not revised" not in sections:
        missing.append("Consequences")
    if changes_idx is None:
        missing.append("Changes")
    if missing:
        ordered = tuple(m for m in _MANDATORY_DISPLAY if m in missing)
        raise CoversheetError(f"{where}: coversheet is missing: {', '.join(ordered)}", missing=ordered)

    category_match = _CATEGORY_RE.match(singles["category"])
    if category_match is None:
        raise CoversheetError(f"{where}: unreadable category {singles['category']!r}")
    category = category_match.group(1).upper()
    if category not in CATEGORIES:
        raise CoversheetError(f"{where}: category must be one of A, B, C, D, F, got {category!r}")

    try:
        date = datetime.date.fromisoformat(singles["date"])
    except ValueError as exc:
        raise CoversheetError(f"{where}: unreadable date {singles['date']!r}") from exc

    def section_text(*names: str) -> str:
        for name in names:
            if name in sections:
                return "\n".join(_strip_blank_edges(sections[name]))
        return ""

    return ChangeRequest(
        spec_number=header[0],
        cr_number=header[1],
        revision=header[2],
        current_version=header[3],
        title=singles["title"],
        date=date,
        category=category,
        release=singles["release"],
        reason_for_change=section_text("reason for change"),
        summary_of_change=section_text("summary of change"),
        consequences=section_text("consequences if not approved", "consequences if not revised"),
        body=RevisionMarkedDocument(doc_id=doc.doc_id, segments=tuple(body_segments)),
    )


def parse_cr_text(text: str, doc_id: str = "") -> ChangeRequest:
    """Parse canonical line-marked change-request text."""
    return parse_coversheet(parse_line_marked(text, doc_id=doc_id))


def serialize_cr(cr: ChangeRequest) -> str:
    """Render a change request to its canonical text form.

    The document id is external identity (the source file name), not content:
    ``parse_cr_text(serialize_cr(cr), doc_id=cr.body.doc_id)`` returns an
    equal value object.
    """
    parts = [
        f"{cr.spec_number} CR {cr.cr_number} rev {cr.revision} Current version {cr.current_version}",
        "",
        f"Title: {cr.title}",
        f"Date: {cr.date.isoformat()}",
        f"Category: {cr.category}",
        f"Release: {cr.release}",
        "",
        "Reason for change:",
        cr.reason_for_change,
        "",
        "Summary of change:",
        cr.summary_of_change,
        "",
        "Consequences if not approved:",
        cr.consequences,
        "",
        "Changes:",
        render_marked_lines(cr.body.segments),
    ]
    return "\n".join(parts)


def extract_revisions(body: RevisionMarkedDocument) -> RevisionExtract:
    """Split a marked body into pre-change text, post-change text, and change spans.

    Each span covers one maximal run of marked lines.  ``orig_start`` is the
    line offset into the pre-change text where the span's deletions begin (and
    where its insertions are spliced in).
    """
    spans: list[ChangedSpan] = []
    deleted: list[str] = []
    inserted: list[str] = []
    span_start = 0
    orig_line = 0

    def flush() -> None:
        if deleted or inserted:
            spans.append(ChangedSpan(span_start, tuple(deleted), tuple(inserted)))
            deleted.clear()
            inserted.clear()

    for seg in body.segments:
        if seg.mark is Mark.UNCHANGED:
            flush()
            orig_line += 1
            span_start = orig_line
        elif seg.mark is Mark.DELETED:
            if not deleted and not inserted:
                span_start = orig_line
            deleted.append(seg.text)
            orig_line += 1
        else:
            if not deleted and not inserted:
                span_start = orig_line
            inserted.append(seg.text)
    flush()

    return RevisionExtract(
        original=render_pre(body),
        revised=render_post(body),
        spans=tuple(spans),
    )


def apply_spans(original: str, spans: tuple[ChangedSpan, ...]) -> str:
    """Apply change spans to pre-change text, reproducing the post-change text."""
    lines = original.split("\n") if original else []
    offset = 0
    for span in spans:
        start = span.orig_start + offset
        end = start + len(span.deleted)
        if lines[start:end] != list(span.deleted):
            raise ParserError(f"span at line {span.orig_start} does not match the original text")
        lines[start:end] = list(span.inserted)
        offset += len(span.inserted) - len(span.deleted)
    return "\n".join(lines)


def validate_cr(cr: ChangeRequest, task_kind: str) -> Validity:
    """Check whether a change request can seed a task of the given kind."""
    if task_kind == "fill-cr" and not cr.original_statements.strip():
        return Validity(False, "empty-original-statements")
    if not cr.reason_for_change.strip() and not cr.consequences.strip():
        return Validity(False, "empty-rationale")
    return Validity(True)
