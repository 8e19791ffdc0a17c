from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crrefine.modelgateway import GatewayError
from crrefine.rationale import (
    AugmentationFailedError,
    DimensionMismatchError,
    DiversityReport,
    RationaleSet,
    SplitViolationError,
    augment_answer,
    diversity_gain,
    load_principles,
)
from crrefine.taskforge import Split, TaskInstance, TaskKind

from conftest import make_handle
from oracles import diversity_gains as oracle_gains


def _instance(split: Split = Split.TRAIN, answer: str = "a solid reference answer") -> TaskInstance:
    return TaskInstance(
        instance_id="24.301_1_0:fill-cr",
        task_kind=TaskKind.FILL_CR,
        instruction="instruction text",
        query="query text",
        reference_answer=answer,
        source_cr="24.301_1_0",
        split=split,
    )


# ---------------------------------------------------------------- augmentation


def test_augment_produces_k_variants():
    gen = make_handle("gen", temperature=0.8, top_p=0.95)
    rset = augment_answer(_instance(), gen, k=3)
    assert len(rset.augmented) == 3
    assert rset.gaps == 0
    assert rset.generator_id == "gen"
    assert rset.temperature == 0.8
    assert rset.top_p == 0.95
    assert rset.original_answer == "a solid reference answer"
    # sampling: the three variants differ
    assert len(set(rset.augmented)) == 3


def test_augment_prompt_carries_principles_query_and_answer():
    seen = {}

    def script(request, call_index):
        seen["prompt"] = request.user
        return f"variant {call_index}"

    gen = make_handle("gen", chat_script=script)
    augment_answer(_instance(), gen, k=1)
    assert load_principles() in seen["prompt"]
    assert "query text" in seen["prompt"]
    assert "a solid reference answer" in seen["prompt"]
    assert "instruction text" in seen["prompt"]


def test_augment_custom_principles_override():
    seen = {}

    def script(request, call_index):
        seen["prompt"] = request.user
        return "v"

    gen = make_handle("gen", chat_script=script)
    augment_answer(_instance(), gen, k=1, principles="house style rules")
    assert "house style rules" in seen["prompt"]
    assert load_principles() not in seen["prompt"]


def test_augment_refuses_eval_split():
    gen = make_handle("gen")
    with pytest.raises(SplitViolationError, match="never augmented"):
        augment_answer(_instance(split=Split.EVAL), gen)


def test_augment_validates_inputs():
    gen = make_handle("gen")
    with pytest.raises(ValueError, match="at least 1"):
        augment_answer(_instance(), gen, k=0)
    with pytest.raises(ValueError, match="empty reference answer"):
        augment_answer(_instance(answer="  "), gen)


def test_augment_slot_retries_then_recovers():
    outputs = [GatewayError("transient"), "", "recovered variant"]

    def script(request, call_index):
        value = outputs[min(call_index, len(outputs) - 1)]
        if isinstance(value, Exception):
            raise value
        return value

    gen = make_handle("gen", chat_script=script)
    rset = augment_answer(_instance(), gen, k=1, retries=2)
    assert rset.augmented == ("recovered variant",)
    assert rset.gaps == 0


def test_augment_exhausted_slot_becomes_gap():
    # slot 0: three failures (attempts 0..2) then slot 1 succeeds
    def script(request, call_index):
        if call_index < 3:
            raise GatewayError("down")
        return f"late variant {call_index}"

    gen = make_handle("gen", chat_script=script)
    rset = augment_answer(_instance(), gen, k=2, retries=2)
    assert rset.gaps == 1
    assert rset.augmented == ("late variant 3",)


def test_augment_all_slots_failing_is_an_error():
    gen = make_handle("gen", chat_script=lambda req, i: "")
    with pytest.raises(AugmentationFailedError, match="every augmentation slot failed"):
        augment_answer(_instance(), gen, k=2, retries=1)


def test_rationale_set_record_round_trip():
    rset = RationaleSet(
        instance_id="x:fill-cr",
        original_answer="orig",
        augmented=("a", "b"),
        generator_id="gen",
        temperature=0.8,
        top_p=0.95,
        gaps=1,
    )
    assert RationaleSet.from_record(rset.to_record()) == rset


# ---------------------------------------------------------------- diversity


def _scripted_embedder(vector_by_text: dict[str, tuple[float, ...]], dim: int):
    return make_handle("emb", embed_dim=dim, embed_script=vector_by_text)


def _rset(*augmented: str, original: str = "orig") -> RationaleSet:
    return RationaleSet(
        instance_id="x:fill-cr",
        original_answer=original,
        augmented=tuple(augmented),
        generator_id="gen",
        temperature=0.8,
        top_p=0.95,
    )


def test_diversity_duplicate_has_zero_gain():
    emb = _scripted_embedder({"orig": (1.0, 2.0), "dup": (1.0, 2.0)}, dim=2)
    report = diversity_gain(_rset("dup"), emb)
    assert report.gains == (0.0,)


def test_diversity_known_three_four_five():
    emb = _scripted_embedder({"orig": (0.0, 0.0), "far": (3.0, 4.0)}, dim=2)
    report = diversity_gain(_rset("far"), emb)
    assert report.gains == (5.0,)
    assert report.embedder_id == "emb"


def test_diversity_pool_includes_earlier_variants():
    emb = _scripted_embedder(
        {"orig": (0.0, 0.0), "a": (3.0, 4.0), "b": (3.0, 5.0)}, dim=2
    )
    report = diversity_gain(_rset("a", "b"), emb)
    # b is 1.0 from a but 5.83 from orig: the nearest predecessor wins
    assert report.gains == (5.0, 1.0)


def test_diversity_uses_raw_vectors_no_normalization():
    emb1 = _scripted_embedder({"orig": (0.0, 1.0), "v": (0.0, 2.0)}, dim=2)
    emb2 = _scripted_embedder({"orig": (0.0, 10.0), "v": (0.0, 20.0)}, dim=2)
    g1 = diversity_gain(_rset("v"), emb1).gains[0]
    g2 = diversity_gain(_rset("v"), emb2).gains[0]
    # scaling the vectors scales the gain: nothing was normalized away
    assert g2 == pytest.approx(10 * g1)


def test_diversity_dimension_mismatch_detected():
    from crrefine.modelgateway import ModelHandle, ModelProfile

    class RaggedBackend:
        def embed(self, profile, text):
            return (1.0, 2.0) if text == "orig" else (1.0, 2.0, 3.0)

    handle = ModelHandle(profile=ModelProfile(name="ragged", model_id="ragged"), backend=RaggedBackend())
    with pytest.raises(DimensionMismatchError, match="dims differ"):
        diversity_gain(_rset("bad"), handle)


def test_diversity_mock_embeddings_deterministic():
    emb = make_handle("emb", embed_dim=8)
    r1 = diversity_gain(_rset("one", "two"), emb)
    r2 = diversity_gain(_rset("one", "two"), make_handle("emb", embed_dim=8))
    assert r1.gains == r2.gains
    assert all(g > 0 for g in r1.gains)


def test_diversity_report_record():
    report = DiversityReport(instance_id="x", embedder_id="e", gains=(1.0, 0.5))
    assert report.to_record() == {"instance_id": "x", "embedder_id": "e", "gains": [1.0, 0.5]}


_vec = st.tuples(*[st.floats(-5, 5, allow_nan=False) for _ in range(3)])


@settings(max_examples=100)
@given(original=_vec, augmented=st.lists(_vec, min_size=1, max_size=5))
def test_diversity_matches_oracle(original, augmented):
    texts = {"orig": original}
    names = []
    for i, vec in enumerate(augmented):
        name = f"v{i}"
        texts[name] = vec
        names.append(name)
    emb = _scripted_embedder(texts, dim=3)
    report = diversity_gain(_rset(*names), emb)
    expected = oracle_gains(original, augmented)
    assert list(report.gains) == pytest.approx(expected)


@settings(max_examples=60)
@given(original=_vec, augmented=st.lists(_vec, min_size=2, max_size=5), data=st.data())
def test_diversity_moving_a_variant_later_never_raises_its_gain(original, augmented, data):
    idx = data.draw(st.integers(0, len(augmented) - 2))
    # move variant at idx one position later; its gain cannot increase because
    # its comparison pool only grows
    moved = list(augmented)
    moved[idx], moved[idx + 1] = moved[idx + 1], moved[idx]
    before = oracle_gains(original, augmented)[idx]
    after = oracle_gains(original, moved)[idx + 1]
    assert after <= before + 1e-12
