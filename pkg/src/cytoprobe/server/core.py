"""Event-sourced service core wrapping study, metrics and inject operations.

Every mutation is appended to the event log before it is acknowledged, and
``apply_event`` is the only state-transition path, used identically live and
during replay, so a restart from the log reproduces state bit for bit.
Client-visible payloads reference stimuli via opaque aliases: record ids and
filenames carry provenance, which must never reach a participant.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass, field

from .. import inject, metrics, study
from ..errors import ConflictError, NotFoundError, ValidationError
from .config import ServerConfig
from .events import EventLog, EventRecord


def _alias(scope: str, record_id: str) -> str:
    return hashlib.sha256(f"{scope}:{record_id}".encode()).hexdigest()[:16]


@dataclass
class _StudyState:
    plan: study.StudyPlan
    aliases: dict[str, str] = field(default_factory=dict)  # alias -> record id

    def __post_init__(self):
        if not self.aliases:
            for rid in self.plan.stimulus_ids():
                self.aliases[_alias(self.plan.study_id, rid)] = rid

    def alias_of(self, record_id: str) -> str:
        return _alias(self.plan.study_id, record_id)


class Service:
    """All service state plus the event log; single-appender semantics."""

    def __init__(self, config: ServerConfig):
        self.config = config
        self.log = EventLog(config.data_dir)
        self.catalog: dict[str, dict] = {}
        self.studies: dict[str, _StudyState] = {}
        self.sessions: dict[str, study.Session] = {}
        self.tasks: dict[str, inject.InjectionPlan] = {}
        self.task_annotators: dict[str, str] = {}
        self.scores: dict[str, inject.AnnotatorScore] = {}
        self.tokens: dict[str, dict] = {}
        self.last_seq = 0
        self._lock = threading.RLock()
        self._load_catalog()
        self._restore()

    # -- startup -----------------------------------------------------------

    def _load_catalog(self) -> None:
        import json

        manifest = os.path.join(self.config.data_dir, "manifest.json")
        if not os.path.exists(manifest):
            return
        with open(manifest, "r", encoding="utf-8") as fh:
            for entry in json.load(fh):
                self.catalog[entry["id"]] = entry

    def _restore(self) -> None:
        snap = self.log.read_snapshot()
        if snap is not None:
            state_doc, last_seq = snap
            self._from_snapshot(state_doc)
            self.last_seq = last_seq
        for record in self.log.read_all(after_seq=self.last_seq):
            self.apply_event(record)

    # -- event application (the only state-transition path) -----------------

    def apply_event(self, record: EventRecord) -> dict:
        """Apply one event; returns the acknowledgement payload."""
        kind, payload = record.kind, record.payload
        handler = getattr(self, f"_apply_{kind}", None)
        if handler is None:
            raise ValidationError(f"unknown event kind {kind!r}")
        ack = handler(payload)
        self.last_seq = record.seq
        token = payload.get("token")
        if token:
            self.tokens[token] = ack
        if self.config.snapshot_every and record.seq % self.config.snapshot_every == 0:
            self.log.write_snapshot(self._to_snapshot(), record.seq)
        return ack

    def _commit(self, kind: str, payload: dict) -> dict:
        """Append (durable) first, then apply; returns the ack."""
        with self._lock:
            token = payload.get("token")
            if token and token in self.tokens:
                return self.tokens[token]
            record = self.log.append(kind, payload)
            return self.apply_event(record)

    def _apply_study_created(self, payload: dict) -> dict:
        plan = study.StudyPlan.from_dict(payload["plan"])
        self.studies[plan.study_id] = _StudyState(plan)
        return {"study_id": plan.study_id, "pairs": len(plan.pair_trials), "singles": len(plan.single_trials)}

    def _apply_session_started(self, payload: dict) -> dict:
        st = self._study(payload["study_id"])
        session = study.start_session(
            st.plan,
            session_id=payload["session_id"],
            participant=payload["participant"],
            background=payload.get("background"),
            order_seed=payload["order_seed"],
        )
        self.sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "study_id": session.study_id,
            "trials": len(session.trial_order),
        }

    def _apply_response_recorded(self, payload: dict) -> dict:
        session = self._session(payload["session_id"])
        st = self._study(session.study_id)
        study.record_response(
            session, st.plan, payload["trial_id"], payload["answer"], payload["timestamp"]
        )
        return {
            "recorded": True,
            "trial_id": payload["trial_id"],
            "answered": len(session.responses),
            "total": len(session.trial_order),
            "state": session.state,
        }

    def _apply_task_issued(self, payload: dict) -> dict:
        plan = inject.InjectionPlan.from_dict(payload["plan"])
        self.tasks[plan.task_id] = plan
        self.task_annotators[plan.task_id] = payload["annotator"]
        annotator = payload["annotator"]
        if annotator not in self.scores:
            self.scores[annotator] = inject.AnnotatorScore(annotator_id=annotator)
        return {"task_id": plan.task_id, "items": len(plan.items)}

    def _apply_annotation_scored(self, payload: dict) -> dict:
        plan = self._task(payload["task_id"])
        annotator = payload["annotator"]
        score = self.scores.get(annotator) or inject.AnnotatorScore(annotator_id=annotator)
        delta, updated = inject.score_annotation(
            plan, payload["labels"], score, self.config.scoring
        )
        self.scores[annotator] = updated
        # the ack reveals aggregate score movement only, never which items
        # were probes
        return {
            "task_id": plan.task_id,
            "annotator": annotator,
            "points_delta": delta.points,
            "high_score": updated.high_score,
            "streak": updated.streak,
            "reliability": round(updated.reliability, 6),
        }

    # -- lookups -------------------------------------------------------------

    def _study(self, study_id: str) -> _StudyState:
        if study_id not in self.studies:
            raise NotFoundError(f"no study {study_id!r}")
        return self.studies[study_id]

    def _session(self, session_id: str) -> study.Session:
        if session_id not in self.sessions:
            raise NotFoundError(f"no session {session_id!r}")
        return self.sessions[session_id]

    def _task(self, task_id: str) -> inject.InjectionPlan:
        if task_id not in self.tasks:
            raise NotFoundError(f"no task {task_id!r}")
        return self.tasks[task_id]

    # -- public operations ----------------------------------------------------

    def create_study(self, seed: int) -> dict:
        records = list(self.catalog.values())
        study_id = f"study-{len(self.studies):04d}-{seed:08d}"
        plan = study.build_study(records, seed, study_id=study_id)
        return self._commit("study_created", {"plan": plan.to_dict()})

    def start_session(self, study_id: str, participant: str, background: str | None = None) -> dict:
        st = self._study(study_id)
        if not participant:
            raise ValidationError("participant pseudonym required")
        with self._lock:
            session_id = f"sess-{len(self.sessions):04d}"
            order_seed = int(
                hashlib.sha256(f"{study_id}:{session_id}".encode()).hexdigest()[:8], 16
            )
            return self._commit(
                "session_started",
                {
                    "study_id": study_id,
                    "session_id": session_id,
                    "participant": participant,
                    "background": background,
                    "order_seed": order_seed,
                },
            )

    def next_trial(self, session_id: str) -> dict:
        """The next unanswered trial as a zero-knowledge payload."""
        session = self._session(session_id)
        st = self._study(session.study_id)
        trial_id = session.next_trial_id()
        progress = {
            "answered": len(session.responses),
            "total": len(session.trial_order),
            "state": session.state,
        }
        if trial_id is None:
            return {"done": True, "trial": None, "progress": progress}
        trial = st.plan.trial(trial_id)
        base = f"/studies/{session.study_id}/stimuli"
        if isinstance(trial, study.PairTrial):
            payload = {
                "trial_id": trial_id,
                "kind": "pair",
                "images": {
                    "left": f"{base}/{st.alias_of(trial.left)}",
                    "right": f"{base}/{st.alias_of(trial.right)}",
                },
            }
        else:
            payload = {
                "trial_id": trial_id,
                "kind": "single",
                "image": f"{base}/{st.alias_of(trial.stimulus)}",
            }
        return {"done": False, "trial": payload, "progress": progress}

    def submit_response(
        self, session_id: str, trial_id: str, answer: str, token: str | None = None
    ) -> dict:
        session = self._session(session_id)
        st = self._study(session.study_id)
        with self._lock:
            if token and token in self.tokens:
                return self.tokens[token]
            # validate before committing so bad submissions never hit the log
            trial = st.plan.trial(trial_id)
            if trial_id in session.responses:
                raise ConflictError(f"trial {trial_id} already answered")
            valid = study.PAIR_ANSWERS if isinstance(trial, study.PairTrial) else study.SINGLE_ANSWERS
            if answer not in valid:
                raise ValidationError(f"answer must be one of {valid}, got {answer!r}")
            return self._commit(
                "response_recorded",
                {
                    "session_id": session_id,
                    "trial_id": trial_id,
                    "answer": answer,
                    "timestamp": time.time(),
                    "token": token,
                },
            )

    def response_rows(self, study_id: str) -> list[dict]:
        st = self._study(study_id)
        sessions = [s for s in self.sessions.values() if s.study_id == study_id]
        return study.response_rows(st.plan, sessions)

    def report_bytes(self, study_id: str) -> bytes:
        rows = self.response_rows(study_id)
        if not rows:
            raise ValidationError(f"study {study_id} has no completed sessions")
        return metrics.report_json_bytes(metrics.study_report(rows))

    def export_csv(self, study_id: str) -> str:
        st = self._study(study_id)
        sessions = [s for s in self.sessions.values() if s.study_id == study_id]
        return study.export_responses_csv(st.plan, sessions)

    def stimulus_path(self, study_id: str, alias: str) -> str:
        st = self._study(study_id)
        record_id = st.aliases.get(alias)
        if record_id is None:
            raise NotFoundError(f"no stimulus {alias!r} in study {study_id}")
        return self._record_file(record_id)

    def _record_file(self, record_id: str) -> str:
        entry = self.catalog.get(record_id)
        if entry is None:
            raise NotFoundError(f"record {record_id!r} not in catalog")
        return os.path.join(self.config.data_dir, entry["file"])

    def issue_task(
        self,
        annotator: str,
        probe_fraction: float = 0.5,
        real_count: int = 10,
        seed: int | None = None,
    ) -> dict:
        if not annotator:
            raise ValidationError("annotator id required")
        reals = [e["id"] for e in self.catalog.values() if e["provenance"] in ("real", "phantom")]
        pool = [e for e in self.catalog.values() if e["provenance"] in ("cgan", "dm") and e.get("class")]
        if len(reals) < real_count:
            raise ValidationError(f"catalog has only {len(reals)} real/phantom items, need {real_count}")
        with self._lock:
            if seed is None:
                seed = len(self.tasks) * 7919 + 13
            task_id = f"task-{len(self.tasks):04d}"
            plan = inject.plan_injection(
                reals[:real_count], pool, probe_fraction, seed, task_id=task_id
            )
            ack = self._commit(
                "task_issued", {"plan": plan.to_dict(), "annotator": annotator}
            )
        manifest = self.task_manifest(ack["task_id"])
        return manifest

    def task_manifest(self, task_id: str) -> dict:
        """Annotator-facing view: opaque ids and image URLs, nothing else."""
        plan = self._task(task_id)
        doc = inject.task_manifest(plan)
        for item in doc["items"]:
            item["image"] = f"/tasks/{task_id}/items/{item['id']}/image"
        doc["classes"] = list(self._class_names())
        return doc

    def _class_names(self):
        from ..catalog import CLASS_NAMES

        return CLASS_NAMES

    def task_item_path(self, task_id: str, item_id: str) -> str:
        plan = self._task(task_id)
        for item in plan.items:
            if item.item_id == item_id:
                return self._record_file(item.record_id)
        raise NotFoundError(f"no item {item_id!r} in task {task_id}")

    def submit_annotations(self, task_id: str, labels: dict[str, str], token: str | None = None) -> dict:
        plan = self._task(task_id)
        annotator = self.task_annotators[task_id]
        known = {it.item_id for it in plan.items}
        unknown = set(labels) - known
        if unknown:
            raise ValidationError(f"labels reference unknown items: {sorted(unknown)[:3]}")
        return self._commit(
            "annotation_scored",
            {"task_id": task_id, "annotator": annotator, "labels": labels, "token": token},
        )

    def leaderboard(self) -> list[dict]:
        ranked = inject.leaderboard(list(self.scores.values()))
        return [
            {
                "rank": i + 1,
                "annotator": s.annotator_id,
                "high_score": s.high_score,
                "reliability": round(s.reliability, 6),
                "probes_seen": s.probes_seen,
            }
            for i, s in enumerate(ranked)
        ]

    def annotator_score(self, annotator: str) -> dict:
        if annotator not in self.scores:
            raise NotFoundError(f"no annotator {annotator!r}")
        s = self.scores[annotator]
        return {
            "annotator": s.annotator_id,
            "high_score": s.high_score,
            "streak": s.streak,
            "reliability": round(s.reliability, 6),
            "probes_seen": s.probes_seen,
            "probes_correct": s.probes_correct,
        }

    # -- snapshots -------------------------------------------------------------

    def _to_snapshot(self) -> dict:
        return {
            "studies": {sid: st.plan.to_dict() for sid, st in self.studies.items()},
            "sessions": {sid: s.to_dict() for sid, s in self.sessions.items()},
            "tasks": {tid: p.to_dict() for tid, p in self.tasks.items()},
            "task_annotators": dict(self.task_annotators),
            "scores": {a: s.to_dict() for a, s in self.scores.items()},
            "tokens": dict(self.tokens),
        }

    def _from_snapshot(self, doc: dict) -> None:
        self.studies = {
            sid: _StudyState(study.StudyPlan.from_dict(p)) for sid, p in doc["studies"].items()
        }
        self.sessions = {
            sid: study.Session.from_dict(s) for sid, s in doc["sessions"].items()
        }
        self.tasks = {
            tid: inject.InjectionPlan.from_dict(p) for tid, p in doc["tasks"].items()
        }
        self.task_annotators = dict(doc["task_annotators"])
        self.scores = {
            a: inject.AnnotatorScore.from_dict(s) for a, s in doc["scores"].items()
        }
        self.tokens = dict(doc["tokens"])

    def snapshot_now(self) -> None:
        with self._lock:
            self.log.write_snapshot(self._to_snapshot(), self.last_seq)
