"""Rationale augmentation: rewrite reference answers and measure their spread.

Augmentation asks a generator model for richer variants of a training answer,
guided by a fixed set of writing principles.  The evaluation split is never
augmented.  Diversity of the variants is scored by embedding distance: each
variant's gain is its Euclidean distance to the closest of the original answer
and all earlier variants, on raw embedding vectors.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import modelgateway, templateio
from .taskforge import Split, TaskInstance

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.8
DEFAULT_TOP_P = 0.95
DEFAULT_RETRIES = 2


class RationaleError(Exception):
    """Base class for augmentation failures."""


class SplitViolationError(RationaleError):
    """An evaluation-split instance was offered for augmentation."""


class AugmentationFailedError(RationaleError):
    """No augmentation slot produced a usable answer."""


class DimensionMismatchError(RationaleError):
    """Embedding vectors disagree on dimensionality."""


@dataclass(frozen=True)
class RationaleSet:
    """Augmented answer variants for one training instance."""

    instance_id: str
    original_answer: str
    augmented: tuple[str, ...]
    generator_id: str
    temperature: float
    top_p: float
    gaps: int = 0

    def to_record(self) -> dict[str, object]:
        return {
            "instance_id": self.instance_id,
            "original_answer": self.original_answer,
            "augmented": list(self.augmented),
            "generator_id": self.generator_id,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "gaps": self.gaps,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, object]) -> RationaleSet:
        return cls(
            instance_id=str(record["instance_id"]),
            original_answer=str(record["original_answer"]),
            augmented=tuple(str(a) for a in record["augmented"]),
            generator_id=str(record.get("generator_id", "")),
            temperature=float(record.get("temperature", DEFAULT_TEMPERATURE)),
            top_p=float(record.get("top_p", DEFAULT_TOP_P)),
            gaps=int(record.get("gaps", 0)),
        )


@dataclass(frozen=True)
class DiversityReport:
    """Per-variant novelty: distance to the nearest earlier answer."""

    instance_id: str
    embedder_id: str
    gains: tuple[float, ...]

    def to_record(self) -> dict[str, object]:
        return {
            "instance_id": self.instance_id,
            "embedder_id": self.embedder_id,
            "gains": list(self.gains),
        }


def load_principles() -> str:
    """The shipped augmentation writing principles."""
    return templateio.load_template("rationale_principles.txt")


def augment_answer(
    instance: TaskInstance,
    generator: modelgateway.ModelHandle,
    k: int = 3,
    temperature: float = DEFAULT_TEMPERATURE,
    top_p: float = DEFAULT_TOP_P,
    principles: str | None = None,
    retries: int = DEFAULT_RETRIES,
) -> RationaleSet:
    """Sample ``k`` augmented variants of the instance's reference answer.

    Each slot is retried on transport failure or empty output; a slot that
    never succeeds is recorded as a gap rather than aborting the set.  A set
    with zero usable variants is an error.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if instance.split is Split.EVAL:
        raise SplitViolationError(f"{instance.instance_id}: evaluation instances are never augmented")
    if not instance.reference_answer.strip():
        raise ValueError(f"{instance.instance_id}: cannot augment an empty reference answer")

    prompt = templateio.render_template(
        "rationale_augmentation.txt",
        principles=principles if principles is not None else load_principles(),
        instruction=instance.instruction,
        query=instance.query,
        answer=instance.reference_answer,
    )
    request = modelgateway.ChatRequest(user=prompt, temperature=temperature, top_p=top_p)

    augmented: list[str] = []
    gaps = 0
    for slot in range(k):
        text: str | None = None
        for attempt in range(retries + 1):
            try:
                response = modelgateway.complete_chat(generator, request)
            except modelgateway.GatewayError as exc:
                logger.warning(
                    "%s: augmentation slot %d attempt %d failed: %s",
                    instance.instance_id,
                    slot,
                    attempt + 1,
                    exc,
                )
                continue
            if response.text.strip():
                text = response.text
                break
            logger.warning(
                "%s: augmentation slot %d attempt %d returned empty text",
                instance.instance_id,
                slot,
                attempt + 1,
            )
        if text is None:
            gaps += 1
            logger.warning("%s: augmentation slot %d left as a gap", instance.instance_id, slot)
        else:
            augmented.append(text)

    if not augmented:
        raise AugmentationFailedError(f"{instance.instance_id}: every augmentation slot failed")
    return RationaleSet(
        instance_id=instance.instance_id,
        original_answer=instance.reference_answer,
        augmented=tuple(augmented),
        generator_id=generator.model_id,
        temperature=temperature,
        top_p=top_p,
        gaps=gaps,
    )


def _euclidean(a: Sequence[float], b: Sequence[float]) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def diversity_gain(
    rset: RationaleSet,
    embedder: modelgateway.ModelHandle,
) -> DiversityReport:
    """Distance of each variant to its nearest predecessor.

    The reference pool for variant ``i`` is the original answer plus variants
    ``0..i-1``.  Vectors are used exactly as the embedder returns them.
    """
    vectors = [modelgateway.embed_text(embedder, rset.original_answer)]
    for text in rset.augmented:
        vectors.append(modelgateway.embed_text(embedder, text))
    dims = {len(v) for v in vectors}
    if len(dims) > 1:
        raise DimensionMismatchError(f"{rset.instance_id}: embedding dims differ: {sorted(dims)}")

    gains = []
    for i in range(1, len(vectors)):
        gains.append(min(_euclidean(vectors[i], vectors[j]) for j in range(i)))
    return DiversityReport(
        instance_id=rset.instance_id,
        embedder_id=embedder.model_id,
        gains=tuple(gains),
    )
