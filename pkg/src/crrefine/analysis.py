"""Behavioral analysis of specialized models.

Token-behavior profiles average next-token probabilities in two levels: first
within each generated sequence, then across sequences, so long generations do
not dominate.  Profile comparison emits probability ratios against a floor of
one over the vocabulary size; tokens rising from below the floor to above it
are reported as newly emphasized instead of getting a meaningless ratio.

The weakness-to-attack check has an analyst model draft a vulnerability
analysis and a verifier model decide, in a strict XML envelope, whether that
analysis covers a known attack.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import modelgateway, templateio
from .taskforge import STATEMENTS_SENTINEL, TaskKind, instruction_for

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-6

_CORRECTNESS_RE = re.compile(r"<correctness>(.*?)</correctness>", re.DOTALL | re.IGNORECASE)
_REASON_RE = re.compile(r"<correctness_reason>(.*?)</correctness_reason>", re.DOTALL | re.IGNORECASE)


class AnalysisError(Exception):
    """Base class for analysis failures."""


class DistributionError(AnalysisError):
    """A probability record is malformed or not normalized."""


@dataclass(frozen=True)
class DistributionRecord:
    """Sparse next-token distribution at one generation step."""

    instance_id: str
    step: int
    probs: Mapping[int, float]


@dataclass(frozen=True)
class TokenBehaviorProfile:
    model_id: str
    vocab_size: int
    instance_count: int
    mean_probability: Mapping[int, float]
    step_counts: Mapping[str, int]

    def probability(self, token: int) -> float:
        return self.mean_probability.get(token, 0.0)


@dataclass(frozen=True)
class RatioRow:
    token: int
    base_probability: float
    specialized_probability: float
    ratio: float | None
    new_emphasis: bool


@dataclass(frozen=True)
class RatioTable:
    floor: float
    rows: tuple[RatioRow, ...]

    def to_tsv(self) -> str:
        lines = ["token\tbase_probability\tspecialized_probability\tratio\tnew_emphasis"]
        for row in self.rows:
            ratio = "" if row.ratio is None else f"{row.ratio:.6g}"
            lines.append(
                f"{row.token}\t{row.base_probability:.10g}\t{row.specialized_probability:.10g}"
                f"\t{ratio}\t{'yes' if row.new_emphasis else 'no'}"
            )
        return "\n".join(lines) + "\n"


def token_behavior_profile(
    records: Iterable[DistributionRecord],
    vocab_size: int,
    model_id: str = "",
) -> TokenBehaviorProfile:
    """Two-level mean of sparse distributions: per sequence, then across sequences.

    Every record's probabilities must be within [0, 1] and sum to one within
    a small tolerance; absent tokens are exactly zero.
    """
    if vocab_size < 1:
        raise ValueError("vocab_size must be at least 1")

    sums: dict[str, dict[int, float]] = {}
    steps: dict[str, int] = {}
    for record in records:
        total = 0.0
        for token, prob in record.probs.items():
            if not 0.0 <= prob <= 1.0:
                raise DistributionError(
                    f"{record.instance_id} step {record.step}: probability {prob} for token {token}"
                )
            if not 0 <= int(token) < vocab_size:
                raise DistributionError(
                    f"{record.instance_id} step {record.step}: token {token} outside vocabulary"
                )
            total += prob
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise DistributionError(
                f"{record.instance_id} step {record.step}: distribution sums to {total:.8f}"
            )
        bucket = sums.setdefault(record.instance_id, {})
        for token, prob in record.probs.items():
            token = int(token)
            bucket[token] = bucket.get(token, 0.0) + prob
        steps[record.instance_id] = steps.get(record.instance_id, 0) + 1

    if not sums:
        raise ValueError("no distribution records given")

    mean: dict[int, float] = {}
    for instance_id, bucket in sums.items():
        count = steps[instance_id]
        for token, total in bucket.items():
            mean[token] = mean.get(token, 0.0) + total / count
    instance_count = len(sums)
    mean = {token: value / instance_count for token, value in mean.items()}

    return TokenBehaviorProfile(
        model_id=model_id,
        vocab_size=vocab_size,
        instance_count=instance_count,
        mean_probability=mean,
        step_counts=steps,
    )


def compare_profiles(
    base: TokenBehaviorProfile,
    specialized: TokenBehaviorProfile,
    floor: float | None = None,
) -> RatioTable:
    """Per-token probability ratios between two profiles over a shared vocabulary.

    Tokens below the floor in both profiles are omitted.  A token below the
    floor in the base but at or above it in the specialized profile has no
    ratio; it is flagged as newly emphasized instead.  Newly emphasized rows
    sort first by specialized probability, remaining rows by ratio, descending.
    """
    if base.vocab_size != specialized.vocab_size:
        raise ValueError(
            f"vocabulary sizes differ: {base.vocab_size} vs {specialized.vocab_size}"
        )
    if floor is None:
        floor = 1.0 / base.vocab_size

    tokens = set(base.mean_probability) | set(specialized.mean_probability)
    rows: list[RatioRow] = []
    for token in tokens:
        base_p = base.probability(token)
        spec_p = specialized.probability(token)
        if base_p < floor and spec_p < floor:
            continue
        if base_p >= floor:
            rows.append(RatioRow(token, base_p, spec_p, spec_p / base_p, False))
        else:
            rows.append(RatioRow(token, base_p, spec_p, None, True))

    rows.sort(
        key=lambda r: (
            0 if r.new_emphasis else 1,
            -(r.specialized_probability if r.new_emphasis else 0.0),
            -(r.ratio if r.ratio is not None else 0.0),
            r.token,
        )
    )
    return RatioTable(floor=floor, rows=tuple(rows))


def write_distribution_dump(
    path: str | Path,
    records: Sequence[DistributionRecord],
    vocab_size: int,
    model_id: str = "",
) -> None:
    """Write a sparse dump: a header line, then one JSON record per step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "header", "vocab_size": vocab_size, "model_id": model_id}))
        fh.write("\n")
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "instance_id": record.instance_id,
                        "step": record.step,
                        "probs": {str(t): p for t, p in sorted(record.probs.items())},
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


def read_distribution_dump(path: str | Path) -> tuple[list[DistributionRecord], int, str]:
    """Read a sparse dump written by :func:`write_distribution_dump`."""
    records: list[DistributionRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
            vocab_size = int(header["vocab_size"])
            model_id = str(header.get("model_id", ""))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DistributionError(f"{path}: malformed dump header") from exc
        for line_no, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                records.append(
                    DistributionRecord(
                        instance_id=str(data["instance_id"]),
                        step=int(data["step"]),
                        probs={int(t): float(p) for t, p in data["probs"].items()},
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DistributionError(f"{path}: line {line_no}: malformed record") from exc
    return records, vocab_size, model_id


@dataclass(frozen=True)
class AttackCase:
    """A known attack: target protocol context, threat model, and description."""

    attack_id: str
    name: str
    protocol: str
    version: str
    spec_clauses: str
    threat_model: str
    attack_description: str

    def __post_init__(self) -> None:
        for field_name in ("attack_id", "name", "spec_clauses", "threat_model", "attack_description"):
            if not getattr(self, field_name).strip():
                raise ValueError(f"attack case field {field_name} must be non-empty")

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> AttackCase:
        return cls(
            attack_id=str(record["attack_id"]),
            name=str(record["name"]),
            protocol=str(record.get("protocol", "")),
            version=str(record.get("version", "")),
            spec_clauses=str(record["spec_clauses"]),
            threat_model=str(record["threat_model"]),
            attack_description=str(record["attack_description"]),
        )


@dataclass(frozen=True)
class VerificationResult:
    correctness: bool
    reason: str
    parsed: bool
    raw_output: str


@dataclass(frozen=True)
class CaseResult:
    attack_id: str
    name: str
    detected: bool
    verified_count: int
    trials: int
    first_detected_trial: int | None
    accepted: tuple[tuple[int, str, str], ...]  # (trial, analysis, verifier reason)


@dataclass(frozen=True)
class DetectionTable:
    trials: int
    rows: tuple[CaseResult, ...]

    def to_tsv(self) -> str:
        lines = ["attack_id\tname\tdetected\tverified_count\ttrials\tfirst_detected_trial"]
        for row in self.rows:
            first = "" if row.first_detected_trial is None else str(row.first_detected_trial)
            lines.append(
                f"{row.attack_id}\t{row.name}\t{'yes' if row.detected else 'no'}"
                f"\t{row.verified_count}\t{row.trials}\t{first}"
            )
        return "\n".join(lines) + "\n"


def _extract_single(pattern: re.Pattern[str], raw: str) -> str | None:
    matches = pattern.findall(raw)
    if len(matches) != 1:
        return None
    return matches[0]


def verify_weakness_to_attack(
    analysis_text: str,
    case: AttackCase,
    verifier: modelgateway.ModelHandle,
    retries: int = 2,
) -> VerificationResult:
    """Ask the verifier whether the analysis covers the attack; strict XML reply.

    The reply must contain exactly one ``correctness_reason`` element and
    exactly one ``correctness`` element whose value is true or false.
    Anything else is re-asked; an exhausted budget records not-verified.
    """
    prompt = templateio.render_template(
        "attack_verifier.txt",
        analysis=analysis_text,
        threat_model=case.threat_model,
        attack_description=case.attack_description,
    )
    request = modelgateway.ChatRequest(user=prompt, temperature=0.0)
    raw = ""
    for _ in range(retries + 1):
        raw = modelgateway.complete_chat(verifier, request).text
        reason = _extract_single(_REASON_RE, raw)
        verdict = _extract_single(_CORRECTNESS_RE, raw)
        if reason is None or verdict is None:
            continue
        value = verdict.strip().lower()
        if value not in ("true", "false"):
            continue
        return VerificationResult(
            correctness=value == "true",
            reason=reason.strip(),
            parsed=True,
            raw_output=raw,
        )
    logger.warning("%s: verifier output unparseable after %d attempts", case.attack_id, retries + 1)
    return VerificationResult(correctness=False, reason="", parsed=False, raw_output=raw)


def attack_case_study(
    cases: Sequence[AttackCase],
    analyst: modelgateway.ModelHandle,
    verifier: modelgateway.ModelHandle,
    trials: int = 10,
    temperature: float = 0.8,
    top_p: float = 0.95,
) -> DetectionTable:
    """Sample vulnerability analyses per attack and verify each against the case.

    An attack counts as detected when any trial's analysis is verified to
    cover it.  Accepted analyses are kept alongside the verifier's reasoning
    for manual review.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    instruction = instruction_for(TaskKind.FILL_CR)
    rows: list[CaseResult] = []
    for case in cases:
        request = modelgateway.ChatRequest(
            system=instruction,
            user=f"{STATEMENTS_SENTINEL}\n\n{case.spec_clauses}",
            temperature=temperature,
            top_p=top_p,
        )
        verified = 0
        first: int | None = None
        accepted: list[tuple[int, str, str]] = []
        for trial in range(1, trials + 1):
            analysis_text = modelgateway.complete_chat(analyst, request).text
            result = verify_weakness_to_attack(analysis_text, case, verifier)
            if result.correctness:
                verified += 1
                if first is None:
                    first = trial
                accepted.append((trial, analysis_text, result.reason))
        rows.append(
            CaseResult(
                attack_id=case.attack_id,
                name=case.name,
                detected=verified > 0,
                verified_count=verified,
                trials=trials,
                first_detected_trial=first,
                accepted=tuple(accepted),
            )
        )
    return DetectionTable(trials=trials, rows=tuple(rows))
