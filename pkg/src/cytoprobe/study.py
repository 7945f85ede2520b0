"""Turing-test protocol: plan composition, participant sessions, response log.

A default plan is 20 forced-choice pairs (10 with a cGAN fake, 10 with a DM
fake, each against a real or phantom partner) plus 30 single-image trials
(10 cGAN, 10 DM, 10 real/phantom). No stimulus appears twice within a plan.
Trial presentation order is randomized per participant session; sessions are
untimed but responses carry timestamps.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConflictError, NotFoundError, ValidationError

PAIRS_PER_GENERATOR = 10
SINGLES_PER_BUCKET = 10
GENERATORS = ("cgan", "dm")
REAL_PROVENANCES = ("real", "phantom")

EXPORT_HEADER = (
    "session",
    "participant",
    "trial",
    "kind",
    "generator",
    "truth",
    "answer",
    "correct",
    "timestamp",
)


@dataclass(frozen=True)
class PairTrial:
    trial_id: str
    left: str
    right: str
    fake_side: str  # "left" | "right"
    generator: str  # "cgan" | "dm"

    @property
    def fake_id(self) -> str:
        return self.left if self.fake_side == "left" else self.right

    @property
    def real_id(self) -> str:
        return self.right if self.fake_side == "left" else self.left


@dataclass(frozen=True)
class SingleTrial:
    trial_id: str
    stimulus: str
    truth: str  # "real" | "fake"
    generator: str  # "cgan" | "dm" | "none"


@dataclass
class StudyPlan:
    study_id: str
    pair_trials: list[PairTrial]
    single_trials: list[SingleTrial]
    seed: int

    def trial(self, trial_id: str):
        for t in self.pair_trials:
            if t.trial_id == trial_id:
                return t
        for t in self.single_trials:
            if t.trial_id == trial_id:
                return t
        raise NotFoundError(f"no trial {trial_id!r} in study {self.study_id}")

    @property
    def trial_ids(self) -> list[str]:
        return [t.trial_id for t in self.pair_trials] + [
            t.trial_id for t in self.single_trials
        ]

    def stimulus_ids(self) -> list[str]:
        out = []
        for t in self.pair_trials:
            out.extend([t.left, t.right])
        out.extend(t.stimulus for t in self.single_trials)
        return out

    def to_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "seed": self.seed,
            "pair_trials": [vars(t) for t in self.pair_trials],
            "single_trials": [vars(t) for t in self.single_trials],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyPlan":
        return cls(
            study_id=doc["study_id"],
            seed=doc["seed"],
            pair_trials=[PairTrial(**t) for t in doc["pair_trials"]],
            single_trials=[SingleTrial(**t) for t in doc["single_trials"]],
        )


def build_study(records, seed: int, study_id: str | None = None) -> StudyPlan:
    """Compose the default two-part plan from catalog records.

    ``records`` may be ImageRecords or manifest dicts with id/provenance.
    Needs 30 distinct real/phantom stimuli (20 pair partners + 10 singles)
    and 20 each of cgan and dm.
    """
    pools: dict[str, list[str]] = {"real": [], "cgan": [], "dm": []}
    for rec in records:
        rid = rec["id"] if isinstance(rec, dict) else rec.id
        prov = rec["provenance"] if isinstance(rec, dict) else rec.provenance
        key = "real" if prov in REAL_PROVENANCES else prov
        if key in pools:
            pools[key].append(rid)

    need = {
        "real": 2 * PAIRS_PER_GENERATOR + SINGLES_PER_BUCKET,
        "cgan": PAIRS_PER_GENERATOR + SINGLES_PER_BUCKET,
        "dm": PAIRS_PER_GENERATOR + SINGLES_PER_BUCKET,
    }
    shortfalls = [
        f"{k}: need {need[k]}, have {len(pools[k])}"
        for k in ("real", "cgan", "dm")
        if len(pools[k]) < need[k]
    ]
    if shortfalls:
        raise ValidationError("not enough stimuli: " + "; ".join(shortfalls))

    rng = np.random.default_rng(seed)
    picks = {k: [pools[k][i] for i in rng.choice(len(pools[k]), need[k], replace=False)] for k in pools}

    pair_trials = []
    reals = picks["real"]
    for g_idx, generator in enumerate(GENERATORS):
        for i in range(PAIRS_PER_GENERATOR):
            fake = picks[generator][i]
            real = reals[g_idx * PAIRS_PER_GENERATOR + i]
            fake_side = "left" if rng.random() < 0.5 else "right"
            left, right = (fake, real) if fake_side == "left" else (real, fake)
            pair_trials.append(
                PairTrial(
                    trial_id=f"pair-{len(pair_trials):02d}",
                    left=left,
                    right=right,
                    fake_side=fake_side,
                    generator=generator,
                )
            )
    order = rng.permutation(len(pair_trials))
    pair_trials = [
        PairTrial(f"pair-{i:02d}", t.left, t.right, t.fake_side, t.generator)
        for i, t in enumerate(pair_trials[j] for j in order)
    ]

    single_specs = (
        [("cgan", "fake")] * SINGLES_PER_BUCKET
        + [("dm", "fake")] * SINGLES_PER_BUCKET
        + [("none", "real")] * SINGLES_PER_BUCKET
    )
    stimuli = (
        picks["cgan"][PAIRS_PER_GENERATOR:]
        + picks["dm"][PAIRS_PER_GENERATOR:]
        + reals[2 * PAIRS_PER_GENERATOR :]
    )
    order = rng.permutation(len(single_specs))
    single_trials = [
        SingleTrial(
            trial_id=f"single-{i:02d}",
            stimulus=stimuli[j],
            truth=single_specs[j][1],
            generator=single_specs[j][0],
        )
        for i, j in enumerate(order)
    ]

    plan = StudyPlan(
        study_id=study_id or f"study-{seed:08d}",
        pair_trials=pair_trials,
        single_trials=single_trials,
        seed=seed,
    )
    ids = plan.stimulus_ids()
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate stimulus in plan")  # pools overlapped
    return plan


@dataclass
class Response:
    answer: str
    timestamp: float


@dataclass
class Session:
    session_id: str
    study_id: str
    participant: str
    background: str | None = None
    order_seed: int = 0
    trial_order: list[str] = field(default_factory=list)
    responses: dict[str, Response] = field(default_factory=dict)

    @property
    def state(self) -> str:
        if not self.responses:
            return "created"
        if len(self.responses) == len(self.trial_order):
            return "completed"
        return "in_progress"

    def next_trial_id(self) -> str | None:
        for tid in self.trial_order:
            if tid not in self.responses:
                return tid
        return None

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "study_id": self.study_id,
            "participant": self.participant,
            "background": self.background,
            "order_seed": self.order_seed,
            "trial_order": list(self.trial_order),
            "responses": {
                tid: {"answer": r.answer, "timestamp": r.timestamp}
                for tid, r in self.responses.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Session":
        s = cls(
            session_id=doc["session_id"],
            study_id=doc["study_id"],
            participant=doc["participant"],
            background=doc.get("background"),
            order_seed=doc.get("order_seed", 0),
            trial_order=list(doc["trial_order"]),
        )
        for tid, r in doc.get("responses", {}).items():
            s.responses[tid] = Response(r["answer"], r["timestamp"])
        return s


def start_session(
    plan: StudyPlan,
    session_id: str,
    participant: str,
    background: str | None = None,
    order_seed: int = 0,
) -> Session:
    """New session with its own randomized trial presentation order."""
    rng = np.random.default_rng(order_seed)
    ids = plan.trial_ids
    order = [ids[i] for i in rng.permutation(len(ids))]
    return Session(
        session_id=session_id,
        study_id=plan.study_id,
        participant=participant,
        background=background,
        order_seed=order_seed,
        trial_order=order,
    )


PAIR_ANSWERS = ("left", "right")
SINGLE_ANSWERS = ("real", "fake")


def record_response(
    session: Session,
    plan: StudyPlan,
    trial_id: str,
    answer: str,
    timestamp: float | None = None,
) -> Session:
    """Append one answer; completes the session once all trials are answered."""
    if session.study_id != plan.study_id:
        raise ValidationError("session does not belong to this study")
    trial = plan.trial(trial_id)  # NotFoundError for unknown ids
    if trial_id in session.responses:
        raise ConflictError(f"trial {trial_id} already answered")
    if isinstance(trial, PairTrial):
        if answer not in PAIR_ANSWERS:
            raise ValidationError(
                f"pair trial answer must be one of {PAIR_ANSWERS}, got {answer!r}"
            )
    else:
        if answer not in SINGLE_ANSWERS:
            raise ValidationError(
                f"single trial answer must be one of {SINGLE_ANSWERS}, got {answer!r}"
            )
    session.responses[trial_id] = Response(
        answer=answer, timestamp=time.time() if timestamp is None else timestamp
    )
    return session


def response_rows(plan: StudyPlan, sessions: list[Session]) -> list[dict]:
    """One row per (completed session, trial): the tabular response log."""
    rows = []
    for session in sessions:
        if session.state != "completed":
            continue
        for trial_id in plan.trial_ids:
            trial = plan.trial(trial_id)
            resp = session.responses[trial_id]
            if isinstance(trial, PairTrial):
                kind, truth = "pair", trial.fake_side
            else:
                kind, truth = "single", trial.truth
            rows.append(
                {
                    "session": session.session_id,
                    "participant": session.participant,
                    "trial": trial_id,
                    "kind": kind,
                    "generator": trial.generator,
                    "truth": truth,
                    "answer": resp.answer,
                    "correct": resp.answer == truth,
                    "timestamp": resp.timestamp,
                }
            )
    return rows


def export_responses_csv(plan: StudyPlan, sessions: list[Session]) -> str:
    """CSV export with the fixed header; empty string body when no session
    completed (the caller surfaces that as a warning, not an error)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EXPORT_HEADER)
    for row in response_rows(plan, sessions):
        writer.writerow(
            [
                row["session"],
                row["participant"],
                row["trial"],
                row["kind"],
                row["generator"],
                row["truth"],
                row["answer"],
                "true" if row["correct"] else "false",
                f"{row['timestamp']:.3f}",
            ]
        )
    return buf.getvalue()


def parse_responses_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(EXPORT_HEADER) - set(reader.fieldnames or [])
    if missing:
        raise ValidationError(f"response log missing columns: {sorted(missing)}")
    rows = []
    for raw in reader:
        rows.append(
            {
                "session": raw["session"],
                "participant": raw["participant"],
                "trial": raw["trial"],
                "kind": raw["kind"],
                "generator": raw["generator"],
                "truth": raw["truth"],
                "answer": raw["answer"],
                "correct": raw["correct"] == "true",
                "timestamp": float(raw["timestamp"]),
            }
        )
    return rows
