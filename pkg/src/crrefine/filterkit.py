"""Dataset hygiene: relevance classifiers, heuristic cleaning, and decontamination.

Word tokenization everywhere in this module is ``text.lower().split()``, so any
Unicode whitespace separates words and matching is case-insensitive.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Collection, Iterable, Mapping, Sequence

from . import modelgateway, templateio

if TYPE_CHECKING:
    from .taskforge import TaskInstance

logger = logging.getLogger(__name__)

DEFAULT_NGRAM_ORDER = 20
DEFAULT_MIN_QUERY_WORDS = 30

SECURITY_KEYWORDS = (
    "security",
    "authentication",
    "authorization",
    "integrity",
    "encryption",
    "ciphering",
    "confidentiality",
    "attack",
    "vulnerability",
    "threat",
    "privacy",
    "spoofing",
    "replay",
)
CELLULAR_KEYWORDS = (
    "3gpp",
    "lte",
    "nr",
    "umts",
    "gsm",
    "nas",
    "rrc",
    "amf",
    "mme",
    "ue",
    "gnb",
    "enb",
    "5g",
    "4g",
    "epc",
    "imsi",
    "paging",
    "handover",
)
DEFAULT_KEYWORD_SETS: tuple[tuple[str, ...], ...] = (CELLULAR_KEYWORDS, SECURITY_KEYWORDS)


class FilterError(Exception):
    """Base class for filtering failures."""


class UnparseableVerdictError(FilterError):
    """The classifier model never produced a recognizable verdict keyword."""


class LabelKind(Enum):
    SECURITY_RELEVANCE = "SecurityRelevance"
    EDUCATIONAL_VALUE = "EducationalValue"


@dataclass(frozen=True)
class FilterLabel:
    """A classifier verdict for one subject (a change request or a task instance)."""

    subject_id: str
    kind: LabelKind
    verdict: str
    raw_model_output: str

    def to_record(self) -> dict[str, object]:
        return {
            "subject_id": self.subject_id,
            "kind": self.kind.value,
            "verdict": self.verdict,
            "raw_model_output": self.raw_model_output,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> FilterLabel:
        return cls(
            subject_id=str(record["subject_id"]),
            kind=LabelKind(str(record["kind"])),
            verdict=str(record["verdict"]),
            raw_model_output=str(record.get("raw_model_output", "")),
        )


@dataclass
class NgramIndex:
    """Set of word n-grams drawn from a collection of texts."""

    n: int
    grams: set[str] = field(default_factory=set)
    source_count: int = 0

    def add_text(self, text: str) -> None:
        words = text.lower().split()
        for i in range(len(words) - self.n + 1):
            self.grams.add(" ".join(words[i : i + self.n]))
        self.source_count += 1

    def first_hit(self, text: str) -> str | None:
        """Return the first n-gram of ``text`` present in the index, if any."""
        words = text.lower().split()
        for i in range(len(words) - self.n + 1):
            gram = " ".join(words[i : i + self.n])
            if gram in self.grams:
                return gram
        return None


@dataclass(frozen=True)
class RemovedInstance:
    """A decontamination removal and the n-gram that triggered it."""

    instance: "TaskInstance"
    witness: str


def build_ngram_index(texts: Iterable[str], n: int = DEFAULT_NGRAM_ORDER) -> NgramIndex:
    """Index every n-gram of every text; texts shorter than n words contribute none."""
    if n < 1:
        raise ValueError("n-gram order must be at least 1")
    index = NgramIndex(n=n)
    for text in texts:
        index.add_text(text)
    return index


def decontaminate(
    instances: Sequence["TaskInstance"],
    index: NgramIndex,
    include_queries: bool = False,
) -> tuple[list["TaskInstance"], list[RemovedInstance]]:
    """Drop every instance sharing an n-gram with the index; keep removal evidence.

    Only reference answers are checked by default; ``include_queries`` extends
    the check to query texts.  Order of retained instances is preserved.
    """
    retained: list[TaskInstance] = []
    removed: list[RemovedInstance] = []
    for instance in instances:
        witness = index.first_hit(instance.reference_answer)
        if witness is None and include_queries:
            witness = index.first_hit(instance.query)
        if witness is None:
            retained.append(instance)
        else:
            removed.append(RemovedInstance(instance, witness))
    return retained, removed


def _parse_keyword_verdict(raw: str, keywords: Sequence[str]) -> str | None:
    """Return the canonical form of the last keyword occurrence in ``raw``.

    Longer keywords win where they overlap shorter ones, so Non-educational is
    never misread as Educational.
    """
    ordered = sorted(keywords, key=len, reverse=True)
    pattern = re.compile("|".join(re.escape(k) for k in ordered), re.IGNORECASE)
    canonical = {k.lower(): k for k in keywords}
    last: str | None = None
    for match in pattern.finditer(raw):
        last = canonical[match.group(0).lower()]
    return last


def _classify(
    handle: modelgateway.ModelHandle,
    prompt: str,
    keywords: Sequence[str],
    subject_id: str,
    kind: LabelKind,
    max_attempts: int,
) -> FilterLabel:
    raw = ""
    for _ in range(max_attempts):
        response = modelgateway.complete_chat(
            handle,
            modelgateway.ChatRequest(user=prompt, temperature=0.0),
        )
        raw = response.text
        verdict = _parse_keyword_verdict(raw, keywords)
        if verdict is not None:
            return FilterLabel(subject_id=subject_id, kind=kind, verdict=verdict, raw_model_output=raw)
    raise UnparseableVerdictError(
        f"{subject_id}: no {'/'.join(keywords)} keyword in {max_attempts} attempts; last output: {raw!r}"
    )


def classify_security_relevance(
    reason_for_change: str,
    consequences: str,
    judge: modelgateway.ModelHandle,
    subject_id: str = "",
    max_attempts: int = 3,
) -> FilterLabel:
    """Label a change request High-Risk or Low-Risk from its rationale fields."""
    prompt = templateio.render_template(
        "security_relevance.txt",
        reason_for_change=reason_for_change,
        consequences_if_not_revised=consequences,
    )
    return _classify(
        judge, prompt, ("High-Risk", "Low-Risk"), subject_id, LabelKind.SECURITY_RELEVANCE, max_attempts
    )


def classify_educational_value(
    instance: "TaskInstance",
    judge: modelgateway.ModelHandle,
    max_attempts: int = 3,
) -> FilterLabel:
    """Label a task instance Educational or Non-educational."""
    prompt = templateio.render_template(
        "educational_value.txt",
        instruction=instance.instruction,
        query=instance.query,
        answer=instance.reference_answer,
    )
    return _classify(
        judge,
        prompt,
        ("Non-educational", "Educational"),
        instance.instance_id,
        LabelKind.EDUCATIONAL_VALUE,
        max_attempts,
    )


def heuristic_clean(
    instances: Sequence["TaskInstance"],
    min_query_words: int = DEFAULT_MIN_QUERY_WORDS,
) -> tuple[list["TaskInstance"], list[tuple["TaskInstance", str]]]:
    """Drop instances failing cheap sanity rules; report (instance, reason) drops.

    Rules: the query payload after the task sentinel must have at least
    ``min_query_words`` words, and the reference answer must not contain
    revision-marker line prefixes.
    """
    from .taskforge import sentinel_for  # local import, taskforge depends on this module

    retained: list[TaskInstance] = []
    dropped: list[tuple[TaskInstance, str]] = []
    for instance in instances:
        sentinel = sentinel_for(instance.task_kind)
        payload = instance.query.split(sentinel, 1)[-1]
        if len(payload.split()) < min_query_words:
            dropped.append((instance, "short-query"))
            continue
        if _has_marker_lines(instance.reference_answer):
            dropped.append((instance, "marker-in-answer"))
            continue
        retained.append(instance)
    return retained, dropped


def _has_marker_lines(text: str) -> bool:
    for line in text.split("\n"):
        if line.startswith(("[+] ", "[-] ")) or line in ("[+]", "[-]"):
            return True
    return False


def cross_reference(labeled_ids: Collection[str], catalog_ids: Collection[str]) -> set[str]:
    """Ids present both in our labeled set and in an external catalog."""
    return set(labeled_ids) & set(catalog_ids)


def filter_general_corpus(
    docs: Sequence[str],
    keyword_sets: Sequence[Collection[str]] = DEFAULT_KEYWORD_SETS,
    word_boundary: bool = True,
) -> list[str]:
    """Keep documents containing at least one keyword from every keyword set.

    With ``word_boundary`` (the default) a keyword must equal a whole
    whitespace-delimited token, so ``aka`` does not match inside ``5g-aka``.
    Without it a bare substring match suffices.
    """
    retained = []
    for doc in docs:
        if word_boundary:
            tokens = set(doc.lower().split())
            hit = all(any(kw.lower() in tokens for kw in kws) for kws in keyword_sets)
        else:
            lowered = doc.lower()
            hit = all(any(kw.lower() in lowered for kw in kws) for kws in keyword_sets)
        if hit:
            retained.append(doc)
    return retained
