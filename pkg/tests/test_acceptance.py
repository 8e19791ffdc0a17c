"""Acceptance gate: one test per shipped guarantee.

Each test here pins one externally stated behavior of the toolkit at its
stated tolerance.  Run with ``pytest -v tests/test_acceptance.py`` to get one
pass/fail line per guarantee.
"""

from __future__ import annotations

import datetime
import json
import random
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from crrefine import corpus, crparser, evalharness, filterkit, rationale, taskforge
from crrefine.analysis import DistributionRecord, compare_profiles, token_behavior_profile
from crrefine.annoservice import StudyStore, create_app, import_study_records, load_study_fixture
from crrefine.constants import UPSTREAM_CORPUS_STATS
from crrefine.crparser import parse_cr_text
from crrefine.rationale import RationaleSet, diversity_gain
from crrefine.templateio import load_fixture_text

from conftest import PIPELINE, make_handle
from oracles import oracle_pass_at_k, two_level_mean

# ---------------------------------------------------------------- pass@k


def test_criterion_pass_at_k_exactness():
    values = {}
    started = time.perf_counter()
    for n in range(1, 13):
        for c in range(0, n + 1):
            for k in range(1, n + 1):
                values[(n, c, k)] = evalharness.pass_at_k(n, c, k)
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"pass@k sweep took {elapsed:.3f} s"

    for (n, c, k), value in values.items():
        assert abs(value - oracle_pass_at_k(n, c, k)) < 1e-12, (n, c, k)

    assert values[(10, 0, 5)] == 0.0
    assert values[(10, 10, 5)] == 1.0
    assert values[(10, 3, 5)] == pytest.approx(0.916667, abs=1e-6)


# ---------------------------------------------------------------- human study


def test_criterion_human_study_reproduction():
    fixture = load_fixture_text("human_study.jsonl")
    records = [json.loads(line) for line in fixture.splitlines() if line.strip()]

    started = time.perf_counter()
    store = StudyStore()
    study_id = import_study_records(store, records)
    agreement = store.compute_agreement(study_id)
    transitions = store.compute_transitions(study_id)
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"human-study reproduction took {elapsed:.3f} s"

    participants = [f"p{i}" for i in range(1, 9)]
    assert [agreement.per_annotator[p] for p in participants] == [
        80.0, 80.0, 88.0, 88.0, 84.0, 84.0, 92.0, 64.0,
    ]
    assert [agreement.llm_per_annotator[p] for p in participants] == [
        88.0, 84.0, 84.0, 84.0, 88.0, 88.0, 88.0, 84.0,
    ]
    assert agreement.participant_average == 82.5
    assert agreement.llm_average == 86.0

    assert transitions.agree == 163
    assert transitions.accept_to_reject == 19
    assert transitions.reject_to_accept == 10
    assert transitions.disapprove == 8
    assert transitions.total == 200


# ---------------------------------------------------------------- parser fidelity


def test_criterion_parser_fidelity():
    text = load_fixture_text("cr_24301_2871_2.txt")
    cr = parse_cr_text(text, doc_id="24.301_2871_2")

    assert cr.spec_number == "24.301"
    assert cr.cr_number == "2871"
    assert cr.revision == "2"
    assert cr.current_version == "14.3.0"
    assert cr.category == "F"
    assert cr.release == "Rel-14"
    assert cr.date == datetime.date(2017, 5, 19)

    rendered = corpus.render_marked_lines(cr.body.segments)
    assert "[-] \t\t- DETACH REQUEST (if sent before security has been activated);" in rendered
    assert "[+] \t\t- DETACH REQUEST;" in rendered

    extract = crparser.extract_revisions(cr.body)
    pre = corpus.render_pre(cr.body)
    post = corpus.render_post(cr.body)
    assert extract.original == pre
    assert extract.revised == post
    assert crparser.apply_spans(pre, extract.spans) == post

    assert parse_cr_text(crparser.serialize_cr(cr), doc_id=cr.body.doc_id) == cr


# ---------------------------------------------------------------- decontamination


def test_criterion_decontamination_soundness_and_completeness():
    rng = random.Random(20240815)
    ev_vocab = [f"ev{i:04d}" for i in range(400)]
    tw_vocab = [f"tw{i:04d}" for i in range(400)]
    order = 20

    eval_answers = [
        " ".join(rng.choice(ev_vocab) for _ in range(60)) for _ in range(5)
    ]

    def make_instance(i: int, answer: str) -> taskforge.TaskInstance:
        return taskforge.TaskInstance(
            instance_id=f"inst-{i:04d}",
            task_kind=taskforge.TaskKind.FILL_CR,
            instruction="draft the rationale sections",
            query=" ".join(rng.choice(tw_vocab) for _ in range(12)),
            reference_answer=answer,
            source_cr="24.301_0042_1",
        )

    planted_ids = set()
    train = []
    plant_at = set(rng.sample(range(1000), 30))
    for i in range(1000):
        words = [rng.choice(tw_vocab) for _ in range(40)]
        if i in plant_at:
            source = rng.choice(eval_answers).split()
            start = rng.randrange(0, len(source) - order + 1)
            window = source[start : start + order]
            insert_at = rng.randrange(0, len(words) + 1)
            words[insert_at:insert_at] = window
            planted_ids.add(f"inst-{i:04d}")
        train.append(make_instance(i, " ".join(words)))

    started = time.perf_counter()
    index = filterkit.build_ngram_index(eval_answers, order)
    retained, removed = filterkit.decontaminate(train, index)
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"decontamination took {elapsed:.3f} s"

    assert {r.instance.instance_id for r in removed} == planted_ids
    assert len(retained) == 970

    eval_windows = set()
    for answer in eval_answers:
        words = answer.split()
        for start in range(len(words) - order + 1):
            eval_windows.add(" ".join(words[start : start + order]))

    for removal in removed:
        witness = removal.witness
        assert len(witness.split()) == order
        assert witness in removal.instance.reference_answer.lower()
        assert witness in eval_windows

    for instance in retained:
        words = instance.reference_answer.lower().split()
        for start in range(len(words) - order + 1):
            assert " ".join(words[start : start + order]) not in eval_windows


# ---------------------------------------------------------------- end-to-end


HIGH_RISK_MARKERS = (
    "fails its integrity check",
    "before the ciphering configuration",
    "keeps its previous authentication state",
)

EXPECTED_MANIFESTS = {
    "CR-eval": {
        "dataset": "CR-eval",
        "instance_count": 3,
        "per_task": {"diff-analysis": 1, "fill-cr": 1, "outline-revision": 1},
        "steps": [{"name": "build", "count_in": 30, "count_out": 28}],
        "toolkit_version": "0.1.0",
    },
    "CR-instruct": {
        "dataset": "CR-instruct",
        "instance_count": 20,
        "per_task": {"diff-analysis": 7, "fill-cr": 5, "outline-revision": 8},
        "steps": [
            {"name": "build", "count_in": 30, "count_out": 28},
            {"name": "heuristic-clean", "count_in": 25, "count_out": 24},
            {"name": "decontaminate", "count_in": 24, "count_out": 22},
            {"name": "educational-filter", "count_in": 22, "count_out": 20},
        ],
        "toolkit_version": "0.1.0",
    },
    "CR-sec": {
        "dataset": "CR-sec",
        "instance_count": 6,
        "per_task": {"diff-analysis": 2, "fill-cr": 2, "outline-revision": 2},
        "steps": [{"name": "security-subset", "count_in": 20, "count_out": 6}],
        "toolkit_version": "0.1.0",
    },
    "CR-mix": {
        "dataset": "CR-mix",
        "instance_count": 11,
        "per_task": {},
        "steps": [
            {"name": "keyword-filter", "count_in": 4, "count_out": 2},
            {"name": "statement-stream", "count_in": 9, "count_out": 9},
        ],
        "toolkit_version": "0.1.0",
    },
}


def _run_mock_pipeline(workdir: Path) -> dict:
    """Ingest, parse, filter, build, augment, evaluate, judge, and report."""
    listing = [
        corpus.CrDescriptor("24.101", f"{i:04d}", "1", f"C1-{i:06d}", f"24.101_{i:04d}_1.txt", True)
        for i in range(1, 11)
    ]
    index = corpus.fetch_cr_archives(listing, str(PIPELINE), workdir / "raw", max_parallel=4)
    assert len(index.fetched) == 10 and not index.failures

    crs = []
    for desc in listing:
        raw = Path(index.fetched[desc.cr_id]).read_bytes()
        doc = corpus.normalize_document(raw, doc_id=desc.cr_id)
        crs.append(crparser.parse_coversheet(doc))

    def security_script(request, call_index):
        verdict = "High-Risk" if any(m in request.user for m in HIGH_RISK_MARKERS) else "Low-Risk"
        return f"assessment: {verdict}"

    security_judge = make_handle("sec-judge", chat_script=security_script)
    labels = [
        filterkit.classify_security_relevance(
            cr.reason_for_change, cr.consequences, security_judge, subject_id=cr.cr_id
        )
        for cr in crs
    ]

    eval_ids = [
        line.strip()
        for line in (PIPELINE / "eval_ids.txt").read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    docs = tuple(
        str(json.loads(line)["text"])
        for line in (PIPELINE / "general_docs.jsonl").read_text(encoding="utf-8").splitlines()
        if line.strip()
    )
    config = taskforge.AssembleConfig(general_docs=docs)

    # first pass yields the instruction candidates the educational judge sees
    first = taskforge.assemble_datasets(crs, labels, eval_ids, config)

    def educational_script(request, call_index):
        ambiguous_encoding = "two different orderings" in request.user
        diff_task = "line-marked original and revised" in request.user
        return "Non-educational" if ambiguous_encoding and not diff_task else "Educational"

    educational_judge = make_handle("edu-judge", chat_script=educational_script)
    educational_labels = [
        filterkit.classify_educational_value(instance, educational_judge)
        for instance in first.cr_instruct
    ]
    assembled = taskforge.assemble_datasets(crs, labels + educational_labels, eval_ids, config)

    generator = make_handle("aug-model", temperature=0.8, top_p=0.95)
    augmented = [
        rationale.augment_answer(instance, generator, k=3) for instance in assembled.cr_instruct
    ]

    model = make_handle("eval-model", temperature=0.8, top_p=0.95)
    completions = evalharness.generate_completions(
        assembled.cr_eval, model, n=10, temperature=0.8, top_p=0.95
    )

    # scripted judge: accept 10 drafts of the first eval instance, none of the
    # second, and the first 3 trials of the third (sorted by instance id)
    by_instance: dict[str, list] = {}
    for completion in completions:
        by_instance.setdefault(completion.instance_id, []).append(completion)
    plan = dict(zip(sorted(by_instance), (10, 0, 3)))
    score_of = {}
    for instance_id, drafts in by_instance.items():
        for draft in sorted(drafts, key=lambda c: c.trial_index):
            score_of[draft.text] = 2 if draft.trial_index < plan[instance_id] else -1

    def judge_script(request, call_index):
        for text, score in score_of.items():
            if text in request.user:
                return f"s: {score}"
        raise AssertionError("judge prompt carries no known draft")

    judge = make_handle("judge-model", chat_script=judge_script)
    references = {i.instance_id: i.reference_answer for i in assembled.cr_eval}
    verdicts = evalharness.judge_completions(completions, references, judge)
    report = evalharness.aggregate_passk(verdicts, (1, 3, 5))

    return {
        "parsed": [cr.to_record() for cr in crs],
        "labels": [label.to_record() for label in labels + educational_labels],
        "manifests": {k: m.to_record() for k, m in assembled.manifests.items()},
        "cr_eval": [i.to_record() for i in assembled.cr_eval],
        "cr_instruct": [i.to_record() for i in assembled.cr_instruct],
        "cr_sec": {k: [i.to_record() for i in v] for k, v in assembled.cr_sec.items()},
        "cr_mix": list(assembled.cr_mix),
        "rejections": [list(pair) for pair in assembled.build_rejections],
        "heuristic": [list(pair) for pair in assembled.heuristic_drops],
        "contamination": [list(pair) for pair in assembled.contamination_removals],
        "educational": list(assembled.educational_drops),
        "augmented": [s.to_record() for s in augmented],
        "completions": [c.to_record() for c in completions],
        "verdicts": [v.to_record() for v in verdicts],
        "report": report.to_record(),
    }


def test_criterion_end_to_end_mock_pipeline(tmp_path):
    artifacts = _run_mock_pipeline(tmp_path / "run1")

    assert artifacts["manifests"] == EXPECTED_MANIFESTS

    assert sorted(i["instance_id"] for i in artifacts["cr_eval"]) == [
        "24.101_0001_1:diff-analysis",
        "24.101_0001_1:fill-cr",
        "24.101_0001_1:outline-revision",
    ]
    assert all(i["security_related"] for i in artifacts["cr_eval"])
    assert len(artifacts["cr_instruct"]) == 20
    assert {k: len(v) for k, v in artifacts["cr_sec"].items()} == {
        "fill-cr": 2, "outline-revision": 2, "diff-analysis": 2,
    }
    assert len(artifacts["cr_mix"]) == 11

    assert artifacts["rejections"] == [
        ["24.101_0006_1:fill-cr", "empty-original-statements"],
        ["24.101_0008_1:diff-analysis", "no-diff"],
    ]
    assert artifacts["heuristic"] == [["24.101_0002_1:fill-cr", "short-query"]]
    assert [pair[0] for pair in artifacts["contamination"]] == [
        "24.101_0005_1:fill-cr",
        "24.101_0005_1:diff-analysis",
    ]
    for _, witness in artifacts["contamination"]:
        assert witness.startswith("the network shall reject any detach request")
        assert len(witness.split()) == 20
    assert artifacts["educational"] == [
        "24.101_0009_1:fill-cr",
        "24.101_0009_1:outline-revision",
    ]

    assert len(artifacts["augmented"]) == 20
    assert all(len(s["augmented"]) == 3 for s in artifacts["augmented"])
    assert len(artifacts["completions"]) == 30
    assert len({c["text"] for c in artifacts["completions"]}) == 30
    assert len(artifacts["verdicts"]) == 30
    assert sum(1 for v in artifacts["verdicts"] if v["accepted"]) == 13

    cumulative = artifacts["report"]["cumulative"]
    assert cumulative["1"] == pytest.approx(1.3, abs=1e-9)
    assert cumulative["3"] == pytest.approx(1.0 + 0.0 + 17 / 24, abs=1e-9)
    assert cumulative["5"] == pytest.approx(1.0 + 0.0 + 11 / 12, abs=1e-9)

    # a second fresh run reproduces every artifact bit for bit
    again = _run_mock_pipeline(tmp_path / "run2")
    assert json.dumps(again, sort_keys=True) == json.dumps(artifacts, sort_keys=True)


# ---------------------------------------------------------------- diversity


def _gain_set(original: str, variants: tuple[str, ...], vectors: dict[str, list[float]], dim: int):
    embedder = make_handle("embed", embed_script=vectors, embed_dim=dim)
    rset = RationaleSet(
        instance_id="inst",
        original_answer=original,
        augmented=variants,
        generator_id="gen",
        temperature=0.8,
        top_p=0.95,
    )
    return diversity_gain(rset, embedder).gains


def test_criterion_diversity_gain():
    # a variant identical to the original answer gains exactly nothing
    assert _gain_set("same text", ("same text",), {"same text": [1.0, 2.0]}, 2) == (0.0,)

    # textbook distance: (0,0) to (3,4) is exactly 5
    gains = _gain_set("origin", ("far point",), {"origin": [0.0, 0.0], "far point": [3.0, 4.0]}, 2)
    assert gains == (5.0,)

    # growing the earlier pool can only shrink a variant's gain
    rng = random.Random(7)
    for case in range(500):
        names = [f"case{case}-t{i}" for i in range(6)]
        vectors = {name: [rng.uniform(-5, 5) for _ in range(3)] for name in names}
        original, extra, target = names[0], names[1], names[2]
        prefix = tuple(names[3 : 3 + rng.randrange(0, 4)])
        before = _gain_set(original, prefix + (target,), vectors, 3)[-1]
        after = _gain_set(original, prefix + (extra, target), vectors, 3)[-1]
        assert after <= before + 1e-12, (case, before, after)


# ---------------------------------------------------------------- token behavior


def test_criterion_token_behavior_math():
    records = [
        DistributionRecord("a", 0, {0: 1.0}),
        DistributionRecord("a", 1, {0: 1.0}),
        DistributionRecord("a", 2, {0: 1.0}),
        DistributionRecord("b", 0, {1: 1.0}),
    ]
    profile = token_behavior_profile(records, vocab_size=2)
    expected = two_level_mean({"a": [{0: 1.0}] * 3, "b": [{1: 1.0}]}, vocab=2)
    assert profile.probability(0) == pytest.approx(expected[0], abs=1e-12)
    assert profile.probability(1) == pytest.approx(expected[1], abs=1e-12)
    # the per-instance mean weights both instances equally; a flat mean over
    # the four steps would not
    assert profile.probability(0) == 0.5
    assert profile.probability(0) != pytest.approx(3 / 4)

    table = compare_profiles(profile, profile)
    assert table.rows
    assert all(row.ratio == 1.0 for row in table.rows)
    assert not any(row.new_emphasis for row in table.rows)


# ------------------------------------------------------- upstream corpus scale


def test_criterion_upstream_corpus_scale_pinned():
    # the upstream corpus is not reproducible at desk scale; its published
    # counts are carried as constants and pinned here
    assert UPSTREAM_CORPUS_STATS["collected_documents"] == 205374
    assert UPSTREAM_CORPUS_STATS["parsed_documents"] == 189904
    assert UPSTREAM_CORPUS_STATS["security_relevant"] == 4869
    assert UPSTREAM_CORPUS_STATS["cross_referenced"] == 529
    assert UPSTREAM_CORPUS_STATS["evaluation_set"] == 200
    assert UPSTREAM_CORPUS_STATS["attack_catalog_entries"] == 1922


# ---------------------------------------------------------------- UI round trip


def test_criterion_ui_round_trip():
    samples = [
        {
            "sample_id": f"s{i:02d}",
            "llm_response": f"draft {i:02d}",
            "reference_answer": f"reference {i:02d}",
            "judge_decision": "Accept" if i % 3 else "Reject",
            "judge_explanation": f"automatic rationale {i:02d}",
        }
        for i in range(25)
    ]
    annotators = ["ann1", "ann2"]
    round1 = {
        "ann1": {f"s{i:02d}": "Accept" if i % 2 == 0 else "Reject" for i in range(25)},
        "ann2": {f"s{i:02d}": "Accept" if i % 5 else "Reject" for i in range(25)},
    }
    round2 = {
        "ann1": {f"s{i:02d}": "Approve" if i % 4 else "Disapprove" for i in range(25)},
        "ann2": {f"s{i:02d}": "Approve" for i in range(25)},
    }

    client = TestClient(create_app())
    created = client.post(
        "/studies",
        json={"study_id": "ui-study", "samples": samples, "annotators": annotators},
    )
    assert created.status_code == 201
    sessions = created.json()["sessions"]

    round1_raw: list[str] = []
    for round_number, decisions, transcripts in (
        (1, round1, round1_raw),
        (2, round2, []),
    ):
        for annotator in annotators:
            session_id = sessions[annotator][f"round{round_number}"]
            while True:
                response = client.get(f"/sessions/{session_id}/next")
                assert response.status_code == 200
                transcripts.append(response.text)
                payload = response.json()
                if payload["finished"]:
                    break
                sample_id = payload["sample"]["sample_id"]
                posted = client.post(
                    f"/sessions/{session_id}/decisions",
                    json={"sample_id": sample_id, "decision": decisions[annotator][sample_id]},
                )
                assert posted.status_code == 201
                transcripts.append(posted.text)

    for raw in round1_raw:
        assert "judge" not in raw
        assert "automatic rationale" not in raw

    judge = {s["sample_id"]: s["judge_decision"] for s in samples}

    # independent tally of what was entered: with two annotators the
    # majority-of-others is simply the other annotator's round-1 stance
    expected_agreement = {}
    expected_llm = {}
    for annotator in annotators:
        other = "ann2" if annotator == "ann1" else "ann1"
        own = sum(1 for s in judge if round1[annotator][s] == round1[other][s])
        llm = sum(1 for s in judge if judge[s] == round1[other][s])
        expected_agreement[annotator] = 100.0 * own / 25
        expected_llm[annotator] = 100.0 * llm / 25

    body = client.get("/studies/ui-study/agreement").json()
    assert body["per_annotator"] == expected_agreement
    assert body["llm_per_annotator"] == expected_llm
    assert body["tie_count"] == 0

    expected_buckets = {"agree": 0, "accept_to_reject": 0, "reject_to_accept": 0, "disapprove": 0}
    for annotator in annotators:
        for sample_id, verdict in judge.items():
            r1 = round1[annotator][sample_id]
            if round2[annotator][sample_id] == "Approve":
                final = verdict
            else:
                final = "Reject" if verdict == "Accept" else "Accept"
            if final == r1:
                bucket = "agree" if r1 == verdict else "disapprove"
            else:
                bucket = "accept_to_reject" if r1 == "Accept" else "reject_to_accept"
            expected_buckets[bucket] += 1

    transitions = client.get("/studies/ui-study/transitions").json()
    assert transitions == {**expected_buckets, "total": 50}
