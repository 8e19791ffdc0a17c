"""Evaluation loop: sample completions, score them with a judge, report pass@k.

The judge is reference-aware and point-wise: it sees the reference report and
the drafted report, never the query, and returns a Likert score in [-2, 2] on
its last line.  A draft is accepted when its score is at least 1.  pass@k uses
the unbiased estimator

    pass@k = 1 - C(n - c, k) / C(n, k)

computed in product form for numerical stability.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from . import filterkit, modelgateway, templateio
from .taskforge import TaskInstance

logger = logging.getLogger(__name__)

SCORE_MIN = -2
SCORE_MAX = 2
ACCEPT_THRESHOLD = 1
HINTS_HEADER = ">>> Expert Hints:"
DEFAULT_HINT_COUNT = 5

_SCORE_RE = re.compile(r"(?<![A-Za-z])s\s*:\s*(-?\d+)", re.IGNORECASE)


class HarnessError(Exception):
    """Base class for evaluation failures."""


class HintLeakError(HarnessError):
    """A distilled hint still shares an n-gram with the reference answer."""


class HintSelectionError(HarnessError):
    """The helper model never picked a valid catalog line."""


class HintMode(Enum):
    DISTILLED = "distilled"
    DIRECTIONS = "directions"


@dataclass(frozen=True)
class CompletionRecord:
    instance_id: str
    model_id: str
    trial_index: int
    temperature: float
    top_p: float
    text: str | None
    gap: bool = False

    def to_record(self) -> dict[str, object]:
        return {
            "instance_id": self.instance_id,
            "model_id": self.model_id,
            "trial_index": self.trial_index,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "text": self.text,
            "gap": self.gap,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> CompletionRecord:
        text = record.get("text")
        return cls(
            instance_id=str(record["instance_id"]),
            model_id=str(record.get("model_id", "")),
            trial_index=int(record["trial_index"]),
            temperature=float(record.get("temperature", 0.0)),
            top_p=float(record.get("top_p", 1.0)),
            text=None if text is None else str(text),
            gap=bool(record.get("gap", False)),
        )


@dataclass(frozen=True)
class JudgeVerdict:
    instance_id: str
    trial_index: int
    raw_output: str
    score: int | None
    accepted: bool
    unscored: bool = False
    audit: tuple[str, ...] = ()

    def to_record(self) -> dict[str, object]:
        return {
            "instance_id": self.instance_id,
            "trial_index": self.trial_index,
            "raw_output": self.raw_output,
            "score": self.score,
            "accepted": self.accepted,
            "unscored": self.unscored,
            "audit": list(self.audit),
        }

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> JudgeVerdict:
        score = record.get("score")
        return cls(
            instance_id=str(record["instance_id"]),
            trial_index=int(record["trial_index"]),
            raw_output=str(record.get("raw_output", "")),
            score=None if score is None else int(score),
            accepted=bool(record["accepted"]),
            unscored=bool(record.get("unscored", False)),
            audit=tuple(str(a) for a in record.get("audit", ())),
        )


@dataclass(frozen=True)
class PassAtKReport:
    ks: tuple[int, ...]
    cumulative: dict[int, float]
    per_instance: dict[str, tuple[int, int]]
    score_histogram: dict[int, int]
    instance_count: int

    def to_record(self) -> dict[str, object]:
        return {
            "ks": list(self.ks),
            "cumulative": {str(k): v for k, v in sorted(self.cumulative.items())},
            "per_instance": {
                iid: {"n": n, "c": c} for iid, (n, c) in sorted(self.per_instance.items())
            },
            "score_histogram": {str(s): c for s, c in sorted(self.score_histogram.items())},
            "instance_count": self.instance_count,
        }


def generate_completions(
    instances: Sequence[TaskInstance],
    model: modelgateway.ModelHandle,
    n: int = 10,
    temperature: float = 0.8,
    top_p: float = 0.95,
    retries: int = 2,
) -> list[CompletionRecord]:
    """Sample ``n`` completions per instance; persistent failures leave gap records."""
    if n < 1:
        raise ValueError("n must be at least 1")
    records: list[CompletionRecord] = []
    for instance in instances:
        request = modelgateway.ChatRequest(
            system=instance.instruction,
            user=instance.query,
            temperature=temperature,
            top_p=top_p,
        )
        for trial in range(n):
            text: str | None = None
            for attempt in range(retries + 1):
                try:
                    text = modelgateway.complete_chat(model, request).text
                    break
                except modelgateway.GatewayError as exc:
                    logger.warning(
                        "%s: trial %d attempt %d failed: %s",
                        instance.instance_id,
                        trial,
                        attempt + 1,
                        exc,
                    )
            if text is None:
                logger.warning("%s: trial %d left as a gap record", instance.instance_id, trial)
            records.append(
                CompletionRecord(
                    instance_id=instance.instance_id,
                    model_id=model.model_id,
                    trial_index=trial,
                    temperature=temperature,
                    top_p=top_p,
                    text=text,
                    gap=text is None,
                )
            )
    return records


def parse_judge_score(raw: str) -> int | None:
    """Extract the last ``s: <int>`` marker; None when absent or out of range."""
    matches = _SCORE_RE.findall(raw)
    if not matches:
        return None
    score = int(matches[-1])
    if not SCORE_MIN <= score <= SCORE_MAX:
        return None
    return score


def judge_completion(
    reference: str,
    draft: str,
    judge: modelgateway.ModelHandle,
    retries: int = 2,
    instance_id: str = "",
    trial_index: int = 0,
) -> JudgeVerdict:
    """Score one draft against its reference; greedy decoding, bounded re-asks.

    A verdict that stays unparseable after all attempts is returned as
    unscored and not accepted, with every raw output kept for audit.
    """
    if not reference.strip():
        raise ValueError("judging requires a non-empty reference answer")
    prompt = templateio.render_template("judge_fill_cr.txt", reference=reference, draft=draft)
    request = modelgateway.ChatRequest(user=prompt, temperature=0.0)

    audit: list[str] = []
    for _ in range(retries + 1):
        raw = modelgateway.complete_chat(judge, request).text
        audit.append(raw)
        score = parse_judge_score(raw)
        if score is not None:
            return JudgeVerdict(
                instance_id=instance_id,
                trial_index=trial_index,
                raw_output=raw,
                score=score,
                accepted=score >= ACCEPT_THRESHOLD,
                audit=tuple(audit),
            )
    logger.warning("%s: trial %d unscored after %d attempts", instance_id, trial_index, retries + 1)
    return JudgeVerdict(
        instance_id=instance_id,
        trial_index=trial_index,
        raw_output=audit[-1],
        score=None,
        accepted=False,
        unscored=True,
        audit=tuple(audit),
    )


def judge_completions(
    completions: Sequence[CompletionRecord],
    references: Mapping[str, str],
    judge: modelgateway.ModelHandle,
    retries: int = 2,
) -> list[JudgeVerdict]:
    """Judge every non-gap completion; gap records yield no verdict at all."""
    verdicts: list[JudgeVerdict] = []
    for completion in completions:
        if completion.gap or completion.text is None:
            continue
        if completion.instance_id not in references:
            raise ValueError(f"no reference answer for instance {completion.instance_id}")
        verdicts.append(
            judge_completion(
                references[completion.instance_id],
                completion.text,
                judge,
                retries=retries,
                instance_id=completion.instance_id,
                trial_index=completion.trial_index,
            )
        )
    return verdicts


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k for n samples with c accepted."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= c <= n:
        raise ValueError(f"c must be within [0, n], got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"k must be within [1, n], got k={k}, n={n}")
    if n - c < k:
        return 1.0
    product = 1.0
    for i in range(k):
        product *= (n - c - i) / (n - i)
    return 1.0 - product


def aggregate_passk(
    verdicts: Sequence[JudgeVerdict],
    ks: Iterable[int] = (1, 3, 5),
    exclude_unscored: bool = False,
) -> PassAtKReport:
    """Cumulative pass@k over instances, plus the judge score histogram.

    By default an unscored verdict counts toward n but never toward c; with
    ``exclude_unscored`` it is dropped from both.  Any k larger than some
    instance's n is a usage error, never silently clamped.
    """
    ks = tuple(ks)
    if not ks:
        raise ValueError("need at least one k")

    grouped: dict[str, list[JudgeVerdict]] = {}
    for verdict in verdicts:
        grouped.setdefault(verdict.instance_id, []).append(verdict)

    per_instance: dict[str, tuple[int, int]] = {}
    for instance_id in sorted(grouped):
        group = grouped[instance_id]
        if exclude_unscored:
            group = [v for v in group if not v.unscored]
        n = len(group)
        c = sum(1 for v in group if v.accepted)
        per_instance[instance_id] = (n, c)

    cumulative: dict[int, float] = {}
    for k in ks:
        total = 0.0
        for instance_id, (n, c) in per_instance.items():
            if n == 0:
                raise ValueError(f"{instance_id}: no scoreable verdicts")
            total += pass_at_k(n, c, k)
        cumulative[k] = total

    histogram: dict[int, int] = {}
    for verdict in verdicts:
        if verdict.score is not None:
            histogram[verdict.score] = histogram.get(verdict.score, 0) + 1

    report = PassAtKReport(
        ks=ks,
        cumulative=cumulative,
        per_instance=per_instance,
        score_histogram=histogram,
        instance_count=len(per_instance),
    )
    for k, value in report.cumulative.items():
        if value > report.instance_count + 1e-9:
            raise AssertionError(f"cumulative pass@{k} exceeds the instance count")
    return report


def inject_expert_hints(
    instance: TaskInstance,
    mode: HintMode,
    helper: modelgateway.ModelHandle,
    root_causes: Sequence[str] = (),
    ngram_order: int = filterkit.DEFAULT_NGRAM_ORDER,
    retries: int = 1,
) -> TaskInstance:
    """Return a copy of the instance whose query carries expert hints.

    Distilled mode asks the helper to compress the reference answer's root
    cause into one sentence and rejects hints that leak reference n-grams.
    Directions mode has the helper pick likely root-cause lines from a fixed
    catalog; only verbatim catalog lines are kept, at most five.  The
    reference answer itself is never modified.
    """
    if mode is HintMode.DISTILLED:
        leak_index = filterkit.build_ngram_index([instance.reference_answer], ngram_order)
        hint = ""
        for attempt in range(retries + 1):
            prompt = templateio.render_template("hint_distill.txt", reference=instance.reference_answer)
            hint = modelgateway.complete_chat(
                helper, modelgateway.ChatRequest(user=prompt, temperature=0.0)
            ).text.strip()
            if hint and leak_index.first_hit(hint) is None:
                break
            logger.warning(
                "%s: distilled hint attempt %d leaked or was empty", instance.instance_id, attempt + 1
            )
        else:
            raise HintLeakError(f"{instance.instance_id}: hint still overlaps the reference answer")
        hints = [hint]
    else:
        if not root_causes:
            raise ValueError("directions mode needs a non-empty root-cause catalog")
        catalog = set(root_causes)
        catalog_text = "\n".join(root_causes)
        hints = []
        for attempt in range(retries + 1):
            prompt = templateio.render_template(
                "hint_select.txt", catalog=catalog_text, query=instance.query
            )
            raw = modelgateway.complete_chat(
                helper, modelgateway.ChatRequest(user=prompt, temperature=0.0)
            ).text
            for line in raw.split("\n"):
                candidate = line.strip().lstrip("-").strip()
                if candidate in catalog and candidate not in hints:
                    hints.append(candidate)
                if len(hints) >= DEFAULT_HINT_COUNT:
                    break
            if hints:
                break
            logger.warning(
                "%s: hint selection attempt %d produced no catalog line", instance.instance_id, attempt + 1
            )
        if not hints:
            raise HintSelectionError(f"{instance.instance_id}: no valid catalog lines selected")

    query = f"{instance.query}\n\n{HINTS_HEADER}\n" + "\n".join(hints)
    return replace(instance, query=query)
