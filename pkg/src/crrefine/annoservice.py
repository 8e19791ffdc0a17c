"""Two-round annotation study service.

Round 1 shows each annotator a model response and the reference answer, hiding
the automatic judge entirely; the annotator accepts or rejects the response.
Round 2 reveals the judge's decision and explanation next to the annotator's
own round-1 stance; the annotator approves or disapproves the judge.  An
annotator's final stance equals the judge's decision when they approve it and
the opposite when they do not.

Agreement is leave-one-out: each annotator is compared, sample by sample,
against the majority vote of the other annotators' round-1 decisions, and the
judge is compared against the same majorities.  Transitions classify every
(annotator, sample) pair by round-1 stance, final stance, and judge decision.
"""

from __future__ import annotations

import datetime
import itertools
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

ACCEPT = "Accept"
REJECT = "Reject"
APPROVE = "Approve"
DISAPPROVE = "Disapprove"

ROUND1_DECISIONS = (ACCEPT, REJECT)
ROUND2_DECISIONS = (APPROVE, DISAPPROVE)

_CELL_VALUES = {
    "Accept": (ACCEPT, ACCEPT),
    "Reject": (REJECT, REJECT),
    "A->R": (ACCEPT, REJECT),
    "R->A": (REJECT, ACCEPT),
}


class AnnotationError(Exception):
    """Base class for annotation service failures."""


class NotFoundError(AnnotationError):
    """Unknown study, session, or sample id."""


class ConflictError(AnnotationError):
    """The request is valid but premature or duplicated."""


class StudyIncompleteError(ConflictError):
    """A report was requested before the required rounds finished."""


@dataclass(frozen=True)
class StudySample:
    sample_id: str
    llm_response: str
    reference_answer: str
    judge_decision: str
    judge_explanation: str

    def __post_init__(self) -> None:
        if self.judge_decision not in ROUND1_DECISIONS:
            raise ValueError(
                f"sample {self.sample_id}: judge decision must be Accept or Reject,"
                f" got {self.judge_decision!r}"
            )

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> StudySample:
        return cls(
            sample_id=str(record["sample_id"]),
            llm_response=str(record.get("llm_response", "")),
            reference_answer=str(record.get("reference_answer", "")),
            judge_decision=str(record["judge_decision"]),
            judge_explanation=str(record.get("judge_explanation", "")),
        )


@dataclass(frozen=True)
class AnnotationDecision:
    session_id: str
    sample_id: str
    decision: str
    decided_at: datetime.datetime


@dataclass
class AnnotationSession:
    session_id: str
    study_id: str
    annotator_id: str
    round_number: int
    sample_ids: tuple[str, ...]
    started_at: datetime.datetime | None = None
    finished_at: datetime.datetime | None = None
    decisions: dict[str, AnnotationDecision] = field(default_factory=dict)

    @property
    def finished(self) -> bool:
        return len(self.decisions) == len(self.sample_ids)

    def next_sample_id(self) -> str | None:
        for sample_id in self.sample_ids:
            if sample_id not in self.decisions:
                return sample_id
        return None


@dataclass
class Study:
    study_id: str
    samples: dict[str, StudySample]
    annotators: tuple[str, ...]
    sessions: dict[str, AnnotationSession]
    judge_seconds: float | None = None

    def session_for(self, annotator_id: str, round_number: int) -> AnnotationSession:
        return self.sessions[f"{self.study_id}:r{round_number}:{annotator_id}"]


@dataclass(frozen=True)
class AgreementReport:
    per_annotator: dict[str, float]
    llm_per_annotator: dict[str, float]
    participant_average: float
    llm_average: float
    tie_count: int
    round2_per_annotator: dict[str, float]
    round2_participant_average: float

    def to_record(self) -> dict[str, Any]:
        return {
            "per_annotator": dict(self.per_annotator),
            "llm_per_annotator": dict(self.llm_per_annotator),
            "participant_average": self.participant_average,
            "llm_average": self.llm_average,
            "tie_count": self.tie_count,
            "round2_per_annotator": dict(self.round2_per_annotator),
            "round2_participant_average": self.round2_participant_average,
        }


@dataclass(frozen=True)
class TransitionCounts:
    agree: int
    accept_to_reject: int
    reject_to_accept: int
    disapprove: int

    @property
    def total(self) -> int:
        return self.agree + self.accept_to_reject + self.reject_to_accept + self.disapprove

    def to_record(self) -> dict[str, int]:
        return {
            "agree": self.agree,
            "accept_to_reject": self.accept_to_reject,
            "reject_to_accept": self.reject_to_accept,
            "disapprove": self.disapprove,
            "total": self.total,
        }


@dataclass(frozen=True)
class TimingReport:
    per_annotator_seconds: dict[str, float]
    per_annotator_label: dict[str, str]
    average_seconds: float
    average_label: str
    judge_seconds: float | None
    judge_label: str | None
    incomplete_annotators: tuple[str, ...]

    def to_record(self) -> dict[str, Any]:
        return {
            "per_annotator_seconds": dict(self.per_annotator_seconds),
            "per_annotator_label": dict(self.per_annotator_label),
            "average_seconds": self.average_seconds,
            "average_label": self.average_label,
            "judge_seconds": self.judge_seconds,
            "judge_label": self.judge_label,
            "incomplete_annotators": list(self.incomplete_annotators),
        }


def format_duration(seconds: float) -> str:
    """Whole minutes and floored seconds, e.g. ``77 min 12 s``."""
    if seconds < 0:
        raise ValueError("duration cannot be negative")
    return f"{int(seconds // 60)} min {int(seconds % 60)} s"


def final_stance(round1: str, round2: str, judge: str) -> str:
    """The stance an annotator ends the study with.

    Approving the judge adopts the judge's decision; disapproving adopts the
    opposite.  Either way the result is Accept or Reject.
    """
    if round2 == APPROVE:
        return judge
    return REJECT if judge == ACCEPT else ACCEPT


def classify_transition(round1: str, round2: str, judge: str) -> str:
    """Bucket one (annotator, sample) pair for the transition report."""
    final = final_stance(round1, round2, judge)
    if final == round1:
        return "agree" if round1 == judge else "disapprove"
    return "accept_to_reject" if round1 == ACCEPT else "reject_to_accept"


class StudyStore:
    """In-memory study state with an optional append-only decision log."""

    def __init__(self, log_path: str | Path | None = None) -> None:
        self._studies: dict[str, Study] = {}
        self._lock = threading.RLock()
        self._log_path = Path(log_path) if log_path else None
        self._counter = itertools.count(1)

    # -- creation and lookup -------------------------------------------------

    def create_study(
        self,
        samples: Sequence[StudySample],
        annotators: Sequence[str],
        study_id: str | None = None,
        judge_seconds: float | None = None,
    ) -> Study:
        with self._lock:
            if not samples:
                raise ValueError("a study needs at least one sample")
            if not annotators:
                raise ValueError("a study needs at least one annotator")
            if len({s.sample_id for s in samples}) != len(samples):
                raise ValueError("duplicate sample ids")
            if len(set(annotators)) != len(annotators):
                raise ValueError("duplicate annotator ids")
            if study_id is None:
                study_id = f"study-{next(self._counter):04d}"
            if study_id in self._studies:
                raise ConflictError(f"study {study_id} already exists")

            sample_ids = tuple(s.sample_id for s in samples)
            sessions: dict[str, AnnotationSession] = {}
            for annotator in annotators:
                for round_number in (1, 2):
                    session_id = f"{study_id}:r{round_number}:{annotator}"
                    sessions[session_id] = AnnotationSession(
                        session_id=session_id,
                        study_id=study_id,
                        annotator_id=annotator,
                        round_number=round_number,
                        sample_ids=sample_ids,
                    )
            study = Study(
                study_id=study_id,
                samples={s.sample_id: s for s in samples},
                annotators=tuple(annotators),
                sessions=sessions,
                judge_seconds=judge_seconds,
            )
            self._studies[study_id] = study
            self._log(
                {
                    "kind": "study",
                    "study_id": study_id,
                    "annotators": list(annotators),
                    "sample_ids": list(sample_ids),
                    "judge_seconds": judge_seconds,
                }
            )
            return study

    def get_study(self, study_id: str) -> Study:
        with self._lock:
            try:
                return self._studies[study_id]
            except KeyError:
                raise NotFoundError(f"unknown study {study_id}") from None

    def get_session(self, session_id: str) -> AnnotationSession:
        with self._lock:
            for study in self._studies.values():
                if session_id in study.sessions:
                    return study.sessions[session_id]
            raise NotFoundError(f"unknown session {session_id}")

    def studies(self) -> list[Study]:
        with self._lock:
            return list(self._studies.values())

    # -- the annotation flow -------------------------------------------------

    def _check_round2_open(self, study: Study, session: AnnotationSession) -> None:
        if session.round_number == 2:
            round1 = study.session_for(session.annotator_id, 1)
            if not round1.finished:
                raise ConflictError(
                    f"session {session.session_id}: round 2 is locked until round 1 is finished"
                )

    def get_next(
        self,
        session_id: str,
        now: Callable[[], datetime.datetime] = datetime.datetime.utcnow,
    ) -> dict[str, Any]:
        """The next undecided sample for a session, with judge fields only in round 2."""
        with self._lock:
            session = self.get_session(session_id)
            study = self.get_study(session.study_id)
            self._check_round2_open(study, session)
            if session.started_at is None:
                session.started_at = now()

            payload: dict[str, Any] = {
                "session_id": session.session_id,
                "round": session.round_number,
                "annotator_id": session.annotator_id,
                "progress": {"done": len(session.decisions), "total": len(session.sample_ids)},
            }
            next_id = session.next_sample_id()
            if next_id is None:
                payload["finished"] = True
                payload["sample"] = None
                return payload

            sample = study.samples[next_id]
            view: dict[str, Any] = {
                "sample_id": sample.sample_id,
                "llm_response": sample.llm_response,
                "reference_answer": sample.reference_answer,
            }
            if session.round_number == 2:
                view["judge_decision"] = sample.judge_decision
                view["judge_explanation"] = sample.judge_explanation
                round1 = study.session_for(session.annotator_id, 1)
                view["round1_decision"] = round1.decisions[next_id].decision
            payload["finished"] = False
            payload["sample"] = view
            return payload

    def record_decision(
        self,
        session_id: str,
        sample_id: str,
        decision: str,
        now: Callable[[], datetime.datetime] = datetime.datetime.utcnow,
    ) -> AnnotationDecision:
        """Store one decision; duplicates and locked rounds are conflicts."""
        with self._lock:
            session = self.get_session(session_id)
            study = self.get_study(session.study_id)
            self._check_round2_open(study, session)
            if sample_id not in study.samples:
                raise NotFoundError(f"unknown sample {sample_id}")
            if sample_id in session.decisions:
                raise ConflictError(f"sample {sample_id} already decided in {session_id}")
            allowed = ROUND1_DECISIONS if session.round_number == 1 else ROUND2_DECISIONS
            if decision not in allowed:
                raise ValueError(
                    f"round {session.round_number} accepts {' or '.join(allowed)}, got {decision!r}"
                )
            timestamp = now()
            if session.started_at is None:
                session.started_at = timestamp
            record = AnnotationDecision(
                session_id=session_id,
                sample_id=sample_id,
                decision=decision,
                decided_at=timestamp,
            )
            session.decisions[sample_id] = record
            if session.finished and session.finished_at is None:
                session.finished_at = timestamp
            self._log(
                {
                    "kind": "decision",
                    "session_id": session_id,
                    "sample_id": sample_id,
                    "decision": decision,
                    "decided_at": timestamp.isoformat(),
                }
            )
            return record

    # -- reports ---------------------------------------------------------------

    def _require_round_complete(self, study: Study, round_number: int) -> None:
        unfinished = [
            s.session_id
            for s in study.sessions.values()
            if s.round_number == round_number and not s.finished
        ]
        if unfinished:
            raise StudyIncompleteError(
                f"round {round_number} sessions unfinished: {', '.join(sorted(unfinished))}"
            )

    def _stances(self, study: Study, final: bool) -> dict[str, dict[str, str]]:
        """Per annotator, per sample: round-1 stance or final stance."""
        stances: dict[str, dict[str, str]] = {}
        for annotator in study.annotators:
            round1 = study.session_for(annotator, 1)
            per_sample: dict[str, str] = {}
            for sample_id in round1.sample_ids:
                r1 = round1.decisions[sample_id].decision
                if final:
                    r2 = study.session_for(annotator, 2).decisions[sample_id].decision
                    per_sample[sample_id] = final_stance(
                        r1, r2, study.samples[sample_id].judge_decision
                    )
                else:
                    per_sample[sample_id] = r1
            stances[annotator] = per_sample
        return stances

    @staticmethod
    def _majority(votes: Sequence[str]) -> str | None:
        accepts = sum(1 for v in votes if v == ACCEPT)
        rejects = len(votes) - accepts
        if accepts == rejects:
            return None
        return ACCEPT if accepts > rejects else REJECT

    def _leave_one_out(
        self, study: Study, stances: dict[str, dict[str, str]]
    ) -> tuple[dict[str, float], dict[str, float], int]:
        per_annotator: dict[str, float] = {}
        llm_per_annotator: dict[str, float] = {}
        ties = 0
        sample_ids = list(study.samples)
        for annotator in study.annotators:
            own_hits = 0
            llm_hits = 0
            for sample_id in sample_ids:
                others = [
                    stances[other][sample_id]
                    for other in study.annotators
                    if other != annotator
                ]
                majority = self._majority(others)
                if majority is None:
                    ties += 1
                    continue  # a tie counts as disagreement for both comparisons
                if stances[annotator][sample_id] == majority:
                    own_hits += 1
                if study.samples[sample_id].judge_decision == majority:
                    llm_hits += 1
            per_annotator[annotator] = 100.0 * own_hits / len(sample_ids)
            llm_per_annotator[annotator] = 100.0 * llm_hits / len(sample_ids)
        return per_annotator, llm_per_annotator, ties

    def compute_agreement(self, study_id: str) -> AgreementReport:
        """Leave-one-out agreement against round-1 majorities, plus a final-stance variant."""
        with self._lock:
            study = self.get_study(study_id)
            self._require_round_complete(study, 1)
            per_annotator, llm_per_annotator, ties = self._leave_one_out(
                study, self._stances(study, final=False)
            )
            try:
                self._require_round_complete(study, 2)
            except StudyIncompleteError:
                round2_per: dict[str, float] = {}
            else:
                round2_per, _, _ = self._leave_one_out(study, self._stances(study, final=True))

            annotator_values = list(per_annotator.values())
            llm_values = list(llm_per_annotator.values())
            return AgreementReport(
                per_annotator=per_annotator,
                llm_per_annotator=llm_per_annotator,
                participant_average=sum(annotator_values) / len(annotator_values),
                llm_average=sum(llm_values) / len(llm_values),
                tie_count=ties,
                round2_per_annotator=round2_per,
                round2_participant_average=(
                    sum(round2_per.values()) / len(round2_per) if round2_per else 0.0
                ),
            )

    def compute_transitions(self, study_id: str) -> TransitionCounts:
        """Classify every (annotator, sample) pair; the four buckets partition them."""
        with self._lock:
            study = self.get_study(study_id)
            self._require_round_complete(study, 1)
            self._require_round_complete(study, 2)
            counts = {"agree": 0, "accept_to_reject": 0, "reject_to_accept": 0, "disapprove": 0}
            for annotator in study.annotators:
                round1 = study.session_for(annotator, 1)
                round2 = study.session_for(annotator, 2)
                for sample_id in round1.sample_ids:
                    bucket = classify_transition(
                        round1.decisions[sample_id].decision,
                        round2.decisions[sample_id].decision,
                        study.samples[sample_id].judge_decision,
                    )
                    counts[bucket] += 1
            result = TransitionCounts(**counts)
            expected = len(study.annotators) * len(study.samples)
            if result.total != expected:
                raise AssertionError(
                    f"transition buckets cover {result.total} pairs, expected {expected}"
                )
            return result

    def timing_report(self, study_id: str) -> TimingReport:
        """Total annotation time per annotator over their completed sessions."""
        with self._lock:
            study = self.get_study(study_id)
            per_seconds: dict[str, float] = {}
            incomplete: list[str] = []
            for annotator in study.annotators:
                sessions = [study.session_for(annotator, r) for r in (1, 2)]
                if any(s.started_at is None or s.finished_at is None for s in sessions):
                    incomplete.append(annotator)
                    continue
                per_seconds[annotator] = sum(
                    (s.finished_at - s.started_at).total_seconds() for s in sessions
                )
            if not per_seconds:
                raise StudyIncompleteError(f"study {study_id}: no annotator finished both rounds")
            average = sum(per_seconds.values()) / len(per_seconds)
            return TimingReport(
                per_annotator_seconds=per_seconds,
                per_annotator_label={a: format_duration(s) for a, s in per_seconds.items()},
                average_seconds=average,
                average_label=format_duration(average),
                judge_seconds=study.judge_seconds,
                judge_label=(
                    format_duration(study.judge_seconds) if study.judge_seconds is not None else None
                ),
                incomplete_annotators=tuple(incomplete),
            )

    # -- persistence -----------------------------------------------------------

    def _log(self, record: dict[str, Any]) -> None:
        if self._log_path is None:
            return
        self._log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def import_study_records(
    store: StudyStore,
    records: Iterable[Mapping[str, Any]],
    study_id: str | None = None,
) -> str:
    """Load a recorded study (samples, combined cells, session timings) into a store.

    Cell records hold both rounds in one value: ``Accept`` and ``Reject`` kept
    the round-1 stance, ``A->R`` and ``R->A`` changed it after seeing the
    judge.  The implied round-2 decision approves the judge exactly when the
    final stance matches the judge's decision.  Decision timestamps are spread
    evenly across each session's recorded time window.
    """
    study_meta: dict[str, Any] = {}
    samples: list[StudySample] = []
    cells: dict[tuple[str, str], tuple[str, str]] = {}
    annotators: list[str] = []
    timings: dict[tuple[str, int], tuple[datetime.datetime, datetime.datetime]] = {}

    for record in records:
        kind = record.get("kind")
        if kind == "study":
            study_meta = dict(record)
        elif kind == "sample":
            samples.append(StudySample.from_record(record))
        elif kind == "cell":
            annotator = str(record["annotator_id"])
            if annotator not in annotators:
                annotators.append(annotator)
            value = str(record["record"])
            if value not in _CELL_VALUES:
                raise ValueError(f"unknown cell value {value!r}")
            cells[(annotator, str(record["sample_id"]))] = _CELL_VALUES[value]
        elif kind == "timing":
            timings[(str(record["annotator_id"]), int(record["round"]))] = (
                datetime.datetime.fromisoformat(str(record["started_at"])),
                datetime.datetime.fromisoformat(str(record["finished_at"])),
            )
        else:
            raise ValueError(f"unknown fixture record kind {kind!r}")

    if not samples:
        raise ValueError("fixture has no sample records")
    if not annotators:
        raise ValueError("fixture has no cell records")

    study = store.create_study(
        samples,
        annotators,
        study_id=study_id or str(study_meta.get("study_id") or "") or None,
        judge_seconds=(
            float(study_meta["judge_seconds"]) if study_meta.get("judge_seconds") is not None else None
        ),
    )

    judge = {s.sample_id: s.judge_decision for s in samples}
    sample_order = [s.sample_id for s in samples]

    for round_number in (1, 2):
        for annotator in annotators:
            session = study.session_for(annotator, round_number)
            window = timings.get((annotator, round_number))
            if window is None:
                start = datetime.datetime(2000, 1, 1)
                end = start + datetime.timedelta(seconds=len(sample_order))
            else:
                start, end = window
            session.started_at = start
            step = (end - start) / len(sample_order)
            for i, sample_id in enumerate(sample_order, 1):
                r1, final = cells[(annotator, sample_id)]
                if round_number == 1:
                    decision = r1
                else:
                    decision = APPROVE if final == judge[sample_id] else DISAPPROVE
                store.record_decision(
                    session.session_id,
                    sample_id,
                    decision,
                    now=lambda t=start + step * i: t,
                )
            # the synthesized last decision lands exactly on the recorded end time
            session.finished_at = end
    return study.study_id


def load_study_fixture(path: str | Path) -> list[dict[str, Any]]:
    """Read a study fixture file (JSONL records)."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def create_app(store: StudyStore | None = None, ui_dir: str | Path | None = None):
    """Build the HTTP service; optionally serve a static browser UI at the root."""
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="annotation-study", version="1.0")
    app.state.store = store if store is not None else StudyStore()

    def _store() -> StudyStore:
        return app.state.store

    @app.exception_handler(NotFoundError)
    async def _not_found(_: Request, exc: NotFoundError) -> JSONResponse:
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(ConflictError)
    async def _conflict(_: Request, exc: ConflictError) -> JSONResponse:
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _bad_request(_: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.post("/studies", status_code=201)
    async def create_study(payload: dict) -> dict:
        samples = [StudySample.from_record(r) for r in payload.get("samples", [])]
        annotators = [str(a) for a in payload.get("annotators", [])]
        study = _store().create_study(
            samples,
            annotators,
            study_id=payload.get("study_id"),
            judge_seconds=payload.get("judge_seconds"),
        )
        return {
            "study_id": study.study_id,
            "sample_count": len(study.samples),
            "sessions": {
                annotator: {
                    "round1": study.session_for(annotator, 1).session_id,
                    "round2": study.session_for(annotator, 2).session_id,
                }
                for annotator in study.annotators
            },
        }

    @app.get("/studies/{study_id}")
    async def study_summary(study_id: str) -> dict:
        study = _store().get_study(study_id)
        return {
            "study_id": study.study_id,
            "sample_count": len(study.samples),
            "annotators": list(study.annotators),
            "sessions": [
                {
                    "session_id": s.session_id,
                    "annotator_id": s.annotator_id,
                    "round": s.round_number,
                    "done": len(s.decisions),
                    "total": len(s.sample_ids),
                    "finished": s.finished,
                }
                for s in study.sessions.values()
            ],
        }

    @app.get("/sessions/{session_id}/next")
    async def next_sample(session_id: str) -> dict:
        return _store().get_next(session_id)

    @app.post("/sessions/{session_id}/decisions", status_code=201)
    async def decide(session_id: str, payload: dict) -> dict:
        decision = _store().record_decision(
            session_id,
            str(payload.get("sample_id", "")),
            str(payload.get("decision", "")),
        )
        session = _store().get_session(session_id)
        return {
            "ok": True,
            "sample_id": decision.sample_id,
            "decided_at": decision.decided_at.isoformat(),
            "progress": {"done": len(session.decisions), "total": len(session.sample_ids)},
        }

    @app.get("/studies/{study_id}/agreement")
    async def agreement(study_id: str) -> dict:
        return _store().compute_agreement(study_id).to_record()

    @app.get("/studies/{study_id}/transitions")
    async def transitions(study_id: str) -> dict:
        return _store().compute_transitions(study_id).to_record()

    @app.get("/studies/{study_id}/timing")
    async def timing(study_id: str) -> dict:
        return _store().timing_report(study_id).to_record()

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
