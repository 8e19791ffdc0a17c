"""Task construction and dataset assembly.

Three task families are built from parsed change requests:

* fill-cr: pre-change statements in, full rationale report out
* outline-revision: pre-change statements plus rationale in, change summary out
* diff-analysis: line-marked diff in, reason and consequences out

Queries start with a task sentinel line; answers use fixed section headers.
Assembly stitches the builders together with cleaning, decontamination, and
relevance filtering into four dataset products, each with a manifest recording
per-step counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from . import __version__, filterkit, jsonio, templateio
from .corpus import Mark, RevisionMarkedDocument, Segment, render_marked_lines
from .crparser import ChangeRequest, validate_cr

logger = logging.getLogger(__name__)


class TaskKind(Enum):
    FILL_CR = "fill-cr"
    OUTLINE_REVISION = "outline-revision"
    DIFF_ANALYSIS = "diff-analysis"


class Split(Enum):
    TRAIN = "train"
    EVAL = "eval"


STATEMENTS_SENTINEL = ">>> Original Specification Statements:"
REVISIONS_SENTINEL = ">>> Specification Revisions:"

SECTION_REASON = ">>> REASON FOR CHANGE"
SECTION_SUMMARY = ">>> SUMMARY OF CHANGE"
SECTION_CONSEQUENCES = ">>> CONSEQUENCES IF NOT REVISED"

_SENTINELS = {
    TaskKind.FILL_CR: STATEMENTS_SENTINEL,
    TaskKind.OUTLINE_REVISION: STATEMENTS_SENTINEL,
    TaskKind.DIFF_ANALYSIS: REVISIONS_SENTINEL,
}
_INSTRUCTION_TEMPLATES = {
    TaskKind.FILL_CR: "fill_cr_instruction.txt",
    TaskKind.OUTLINE_REVISION: "outline_revision_instruction.txt",
    TaskKind.DIFF_ANALYSIS: "diff_analysis_instruction.txt",
}

EXPORT_STAGES = ("dact", "tst", "sct")
DEFAULT_MAX_SAMPLE_LENGTH = 12000


class TaskError(Exception):
    """Base class for task construction failures."""


class InstanceRejected(TaskError):
    """The change request cannot seed this task; ``reason`` is a short slug."""

    def __init__(self, reason: str, cr_id: str = "") -> None:
        super().__init__(f"{cr_id or 'change request'}: {reason}")
        self.reason = reason
        self.cr_id = cr_id


class SplitIntegrityError(TaskError):
    """Train and eval splits overlap by id or by answer n-gram."""


@dataclass(frozen=True)
class TaskInstance:
    instance_id: str
    task_kind: TaskKind
    instruction: str
    query: str
    reference_answer: str
    source_cr: str
    security_related: bool = False
    split: Split = Split.TRAIN
    single_section: bool = False

    def to_record(self) -> dict[str, object]:
        return {
            "instance_id": self.instance_id,
            "task_kind": self.task_kind.value,
            "instruction": self.instruction,
            "query": self.query,
            "reference_answer": self.reference_answer,
            "source_cr": self.source_cr,
            "security_related": self.security_related,
            "split": self.split.value,
            "single_section": self.single_section,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> TaskInstance:
        return cls(
            instance_id=str(record["instance_id"]),
            task_kind=TaskKind(str(record["task_kind"])),
            instruction=str(record["instruction"]),
            query=str(record["query"]),
            reference_answer=str(record["reference_answer"]),
            source_cr=str(record["source_cr"]),
            security_related=bool(record.get("security_related", False)),
            split=Split(str(record.get("split", "train"))),
            single_section=bool(record.get("single_section", False)),
        )


def sentinel_for(kind: TaskKind) -> str:
    return _SENTINELS[kind]


def instruction_for(kind: TaskKind) -> str:
    return templateio.load_template(_INSTRUCTION_TEMPLATES[kind])


def _render_sections(parts: Sequence[tuple[str, str]]) -> tuple[str, bool]:
    """Join non-empty (header, text) sections; flag reports whether only one survived."""
    rendered = [f"{header}\n{text.strip()}" for header, text in parts if text.strip()]
    return "\n\n".join(rendered), len(rendered) == 1


def _instance_id(cr: ChangeRequest, kind: TaskKind) -> str:
    return f"{cr.cr_id}:{kind.value}"


def build_fill_cr(cr: ChangeRequest) -> TaskInstance:
    """Pre-change statements in; reason, change summary, and consequences out."""
    verdict = validate_cr(cr, TaskKind.FILL_CR.value)
    if not verdict.valid:
        raise InstanceRejected(verdict.reason or "invalid", cr.cr_id)
    answer, single = _render_sections(
        [
            (SECTION_REASON, cr.reason_for_change),
            (SECTION_SUMMARY, cr.summary_of_change),
            (SECTION_CONSEQUENCES, cr.consequences),
        ]
    )
    return TaskInstance(
        instance_id=_instance_id(cr, TaskKind.FILL_CR),
        task_kind=TaskKind.FILL_CR,
        instruction=instruction_for(TaskKind.FILL_CR),
        query=f"{STATEMENTS_SENTINEL}\n\n{cr.original_statements}",
        reference_answer=answer,
        source_cr=cr.cr_id,
        single_section=single,
    )


def build_outline_revision(cr: ChangeRequest) -> TaskInstance:
    """Pre-change statements plus rationale in; the change summary out."""
    verdict = validate_cr(cr, TaskKind.OUTLINE_REVISION.value)
    if not verdict.valid:
        raise InstanceRejected(verdict.reason or "invalid", cr.cr_id)
    if not cr.summary_of_change.strip():
        raise InstanceRejected("empty-summary", cr.cr_id)
    query = (
        f"{STATEMENTS_SENTINEL}\n\n{cr.original_statements}\n\n"
        f"{SECTION_REASON}\n{cr.reason_for_change}\n\n"
        f"{SECTION_CONSEQUENCES}\n{cr.consequences}"
    )
    return TaskInstance(
        instance_id=_instance_id(cr, TaskKind.OUTLINE_REVISION),
        task_kind=TaskKind.OUTLINE_REVISION,
        instruction=instruction_for(TaskKind.OUTLINE_REVISION),
        query=query,
        reference_answer=cr.summary_of_change,
        source_cr=cr.cr_id,
    )


def build_diff_analysis(cr: ChangeRequest) -> TaskInstance:
    """Line-marked diff in; reason and consequences out."""
    if cr.no_diff:
        raise InstanceRejected("no-diff", cr.cr_id)
    verdict = validate_cr(cr, TaskKind.DIFF_ANALYSIS.value)
    if not verdict.valid:
        raise InstanceRejected(verdict.reason or "invalid", cr.cr_id)
    answer, single = _render_sections(
        [
            (SECTION_REASON, cr.reason_for_change),
            (SECTION_CONSEQUENCES, cr.consequences),
        ]
    )
    return TaskInstance(
        instance_id=_instance_id(cr, TaskKind.DIFF_ANALYSIS),
        task_kind=TaskKind.DIFF_ANALYSIS,
        instruction=instruction_for(TaskKind.DIFF_ANALYSIS),
        query=f"{REVISIONS_SENTINEL}\n\n{compute_revision_diff(body=cr.body)}",
        reference_answer=answer,
        source_cr=cr.cr_id,
        single_section=single,
    )


_BUILDERS = {
    TaskKind.FILL_CR: build_fill_cr,
    TaskKind.OUTLINE_REVISION: build_outline_revision,
    TaskKind.DIFF_ANALYSIS: build_diff_analysis,
}


def _lcs_diff_segments(a: Sequence[str], b: Sequence[str]) -> list[Segment]:
    """Line diff via a longest-common-subsequence table.

    The DP guarantees a maximal set of unchanged lines, which generic diff
    heuristics do not.  Ties prefer deletions, so a changed block renders as
    its deleted lines followed by its inserted lines.
    """
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row = dp[i]
        nxt = dp[i + 1]
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                row[j] = nxt[j + 1] + 1
            else:
                ins = row[j + 1]
                dele = nxt[j]
                row[j] = dele if dele >= ins else ins
    segments: list[Segment] = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            segments.append(Segment(a[i], Mark.UNCHANGED))
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            segments.append(Segment(a[i], Mark.DELETED))
            i += 1
        else:
            segments.append(Segment(b[j], Mark.INSERTED))
            j += 1
    while i < n:
        segments.append(Segment(a[i], Mark.DELETED))
        i += 1
    while j < m:
        segments.append(Segment(b[j], Mark.INSERTED))
        j += 1
    return segments


def compute_revision_diff(
    original: str | None = None,
    revised: str | None = None,
    body: RevisionMarkedDocument | None = None,
) -> str:
    """Render a line-marked diff.

    With ``body`` the document's own marks are rendered as-is, unchanged
    context included.  With two texts an LCS line diff is computed; identical
    texts yield the empty string.
    """
    if body is not None:
        return render_marked_lines(body.segments)
    if original is None or revised is None:
        raise ValueError("need either body or both original and revised texts")
    if original == revised:
        return ""
    a = original.split("\n") if original else []
    b = revised.split("\n") if revised else []
    return render_marked_lines(_lcs_diff_segments(a, b))


def check_split_integrity(
    train: Sequence[TaskInstance],
    evaluation: Sequence[TaskInstance],
    n: int = filterkit.DEFAULT_NGRAM_ORDER,
) -> None:
    """Fail if train and eval overlap by instance id or share an answer n-gram."""
    shared_ids = {t.instance_id for t in train} & {e.instance_id for e in evaluation}
    if shared_ids:
        raise SplitIntegrityError(f"instance ids in both splits: {', '.join(sorted(shared_ids))}")
    index = filterkit.build_ngram_index((e.reference_answer for e in evaluation), n)
    for instance in train:
        witness = index.first_hit(instance.reference_answer)
        if witness is not None:
            raise SplitIntegrityError(
                f"{instance.instance_id}: answer shares an {n}-gram with the eval split: {witness!r}"
            )


@dataclass(frozen=True)
class AssembleConfig:
    ngram_order: int = filterkit.DEFAULT_NGRAM_ORDER
    min_query_words: int = filterkit.DEFAULT_MIN_QUERY_WORDS
    include_queries: bool = False
    extra_contamination_texts: tuple[str, ...] = ()
    general_docs: tuple[str, ...] = ()
    keyword_sets: tuple[tuple[str, ...], ...] = filterkit.DEFAULT_KEYWORD_SETS
    word_boundary: bool = True


@dataclass(frozen=True)
class PipelineStep:
    name: str
    count_in: int
    count_out: int


@dataclass(frozen=True)
class DatasetManifest:
    dataset: str
    instance_count: int
    per_task: dict[str, int]
    steps: tuple[PipelineStep, ...]
    toolkit_version: str = __version__

    def to_record(self) -> dict[str, object]:
        return {
            "dataset": self.dataset,
            "instance_count": self.instance_count,
            "per_task": dict(sorted(self.per_task.items())),
            "steps": [
                {"name": s.name, "count_in": s.count_in, "count_out": s.count_out} for s in self.steps
            ],
            "toolkit_version": self.toolkit_version,
        }


@dataclass
class AssembledDatasets:
    cr_eval: list[TaskInstance] = field(default_factory=list)
    cr_instruct: list[TaskInstance] = field(default_factory=list)
    cr_sec: dict[str, list[TaskInstance]] = field(default_factory=dict)
    cr_mix: list[str] = field(default_factory=list)
    manifests: dict[str, DatasetManifest] = field(default_factory=dict)
    build_rejections: list[tuple[str, str]] = field(default_factory=list)
    heuristic_drops: list[tuple[str, str]] = field(default_factory=list)
    contamination_removals: list[tuple[str, str]] = field(default_factory=list)
    educational_drops: list[str] = field(default_factory=list)


def _per_task_counts(instances: Iterable[TaskInstance]) -> dict[str, int]:
    counts = {kind.value: 0 for kind in TaskKind}
    for instance in instances:
        counts[instance.task_kind.value] += 1
    return counts


def assemble_datasets(
    crs: Sequence[ChangeRequest],
    labels: Sequence[filterkit.FilterLabel],
    eval_ids: Iterable[str],
    config: AssembleConfig = AssembleConfig(),
) -> AssembledDatasets:
    """Build the four dataset products from parsed change requests.

    ``eval_ids`` pins change requests to the frozen evaluation split, which
    bypasses every filter.  Training instances pass heuristic cleaning,
    n-gram decontamination against eval answers (plus any configured extra
    texts), and the educational-value filter.  Unlabeled subjects default to
    not security-related but educationally retained.
    """
    eval_id_set = set(eval_ids)
    known_cr_ids = {cr.cr_id for cr in crs}
    for missing in sorted(eval_id_set - known_cr_ids):
        logger.warning("eval id %s does not match any parsed change request", missing)

    security: dict[str, bool] = {}
    educational: dict[str, str] = {}
    for label in labels:
        if label.kind is filterkit.LabelKind.SECURITY_RELEVANCE:
            security[label.subject_id] = label.verdict == "High-Risk"
        else:
            educational[label.subject_id] = label.verdict

    out = AssembledDatasets()
    built: list[TaskInstance] = []
    for cr in sorted(crs, key=lambda c: c.cr_id):
        split = Split.EVAL if cr.cr_id in eval_id_set else Split.TRAIN
        for kind in TaskKind:
            try:
                instance = _BUILDERS[kind](cr)
            except InstanceRejected as exc:
                out.build_rejections.append((f"{cr.cr_id}:{kind.value}", exc.reason))
                continue
            built.append(
                replace(instance, security_related=security.get(cr.cr_id, False), split=split)
            )

    out.cr_eval = sorted((i for i in built if i.split is Split.EVAL), key=lambda i: i.instance_id)
    train_all = [i for i in built if i.split is Split.TRAIN]

    cleaned, dropped = filterkit.heuristic_clean(train_all, config.min_query_words)
    out.heuristic_drops = [(inst.instance_id, reason) for inst, reason in dropped]

    index = filterkit.build_ngram_index(
        [
            *(e.reference_answer for e in out.cr_eval),
            *config.extra_contamination_texts,
        ],
        config.ngram_order,
    )
    decontaminated, removed = filterkit.decontaminate(cleaned, index, config.include_queries)
    out.contamination_removals = [(r.instance.instance_id, r.witness) for r in removed]

    instruct = [
        i for i in decontaminated if educational.get(i.instance_id) != "Non-educational"
    ]
    out.educational_drops = [
        i.instance_id for i in decontaminated if educational.get(i.instance_id) == "Non-educational"
    ]
    out.cr_instruct = sorted(instruct, key=lambda i: i.instance_id)

    check_split_integrity(out.cr_instruct, out.cr_eval, config.ngram_order)

    out.cr_sec = {
        kind.value: [i for i in out.cr_instruct if i.security_related and i.task_kind is kind]
        for kind in TaskKind
    }

    general_retained = filterkit.filter_general_corpus(
        list(config.general_docs), config.keyword_sets, config.word_boundary
    )
    statements_stream = [
        cr.revised_statements
        for cr in sorted(crs, key=lambda c: c.cr_id)
        if cr.cr_id not in eval_id_set and cr.revised_statements.strip()
    ]
    out.cr_mix = general_retained + statements_stream

    sec_total = sum(len(v) for v in out.cr_sec.values())
    out.manifests = {
        "CR-eval": DatasetManifest(
            dataset="CR-eval",
            instance_count=len(out.cr_eval),
            per_task=_per_task_counts(out.cr_eval),
            steps=(PipelineStep("build", len(crs) * len(TaskKind), len(built)),),
        ),
        "CR-instruct": DatasetManifest(
            dataset="CR-instruct",
            instance_count=len(out.cr_instruct),
            per_task=_per_task_counts(out.cr_instruct),
            steps=(
                PipelineStep("build", len(crs) * len(TaskKind), len(built)),
                PipelineStep("heuristic-clean", len(train_all), len(cleaned)),
                PipelineStep("decontaminate", len(cleaned), len(decontaminated)),
                PipelineStep("educational-filter", len(decontaminated), len(out.cr_instruct)),
            ),
        ),
        "CR-sec": DatasetManifest(
            dataset="CR-sec",
            instance_count=sec_total,
            per_task={k: len(v) for k, v in out.cr_sec.items()},
            steps=(PipelineStep("security-subset", len(out.cr_instruct), sec_total),),
        ),
        "CR-mix": DatasetManifest(
            dataset="CR-mix",
            instance_count=len(out.cr_mix),
            per_task={},
            steps=(
                PipelineStep("keyword-filter", len(config.general_docs), len(general_retained)),
                PipelineStep("statement-stream", len(statements_stream), len(statements_stream)),
            ),
        ),
    }
    return out


class RationaleSetLike(Protocol):
    """Anything carrying an ``augmented`` tuple of answer texts."""

    augmented: tuple[str, ...]


@dataclass
class ExportResult:
    files: dict[str, str] = field(default_factory=dict)
    record_counts: dict[str, int] = field(default_factory=dict)
    truncated: int = 0


def _truncate_pair(prompt: str, response: str, limit: int) -> tuple[str, str, bool]:
    if len(prompt) + len(response) <= limit:
        return prompt, response, False
    if len(prompt) >= limit:
        return prompt[:limit], "", True
    return prompt, response[: limit - len(prompt)], True


def export_training_files(
    datasets: AssembledDatasets,
    stage: str,
    out_dir: str | Path,
    max_sample_length: int = DEFAULT_MAX_SAMPLE_LENGTH,
    rationale_sets: Mapping[str, "RationaleSetLike"] | None = None,
) -> ExportResult:
    """Write one training stage to disk and count truncations.

    ``dact`` writes the raw text stream, one document per line.  ``tst`` and
    ``sct`` write prompt-response JSONL, the latter restricted to the
    security subsets, one file per task kind.  When rationale sets are given,
    each augmented answer becomes its own record in place of the original.
    Lengths are counted in characters.
    """
    if stage not in EXPORT_STAGES:
        raise ValueError(f"unknown export stage {stage!r}, expected one of {EXPORT_STAGES}")
    if max_sample_length < 1:
        raise ValueError("max_sample_length must be positive")
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    result = ExportResult()

    if stage == "dact":
        path = out_path / "dact.txt"
        count = 0
        with open(path, "w", encoding="utf-8") as fh:
            for doc in datasets.cr_mix:
                flat = doc.replace("\r\n", " ").replace("\n", " ").replace("\r", " ")
                if len(flat) > max_sample_length:
                    flat = flat[:max_sample_length]
                    result.truncated += 1
                fh.write(flat)
                fh.write("\n")
                count += 1
        result.files["dact"] = str(path)
        result.record_counts["dact"] = count
        return result

    def emit_records(instances: Sequence[TaskInstance]) -> list[dict[str, object]]:
        records = []
        for instance in instances:
            prompt = f"{instance.instruction}\n\n{instance.query}"
            answers = [instance.reference_answer]
            if rationale_sets and instance.instance_id in rationale_sets:
                augmented = list(rationale_sets[instance.instance_id].augmented)
                if augmented:
                    answers = augmented
            for variant, answer in enumerate(answers):
                out_prompt, out_answer, cut = _truncate_pair(prompt, answer, max_sample_length)
                if cut:
                    result.truncated += 1
                records.append(
                    {
                        "instance_id": instance.instance_id,
                        "task_kind": instance.task_kind.value,
                        "variant": variant,
                        "prompt": out_prompt,
                        "response": out_answer,
                    }
                )
        return records

    if stage == "tst":
        path = out_path / "tst.jsonl"
        records = emit_records(datasets.cr_instruct)
        jsonio.write_jsonl(path, records)
        result.files["tst"] = str(path)
        result.record_counts["tst"] = len(records)
        return result

    for kind in TaskKind:
        path = out_path / f"sct_{kind.value}.jsonl"
        records = emit_records(datasets.cr_sec.get(kind.value, []))
        jsonio.write_jsonl(path, records)
        result.files[f"sct_{kind.value}"] = str(path)
        result.record_counts[f"sct_{kind.value}"] = len(records)
    return result
