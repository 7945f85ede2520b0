"""Pick rates, confusion matrices and per-generator detection metrics.

Conventions, fixed once and documented rather than guessed:

* The positive class is "fake" everywhere.
* Pick rate comes in two complementary readings (picked-as-fake and
  picked-as-real); both are always reported.
* Detection rate (recall) and miss rate are exact complements:
  miss = 100 - recall, computed that way so the pair sums to 100 in floating
  point, not merely approximately.
* Real single trials carry no generator, so they enter each per-generator
  matrix as the shared real pool (tn/fp) and are counted once in the overall
  matrix. The generator-attributed cells (tp/fn and pair contributions) pool
  additively into the overall matrix.
* With ``pair_handling`` on (the default) every pair trial contributes two
  judgments: the chosen image was judged fake, the unchosen one real.
* Undefined rates (zero denominator) are explicit ``None`` markers, never
  silent zeros.
* Percentages are rounded to 2 decimals at the reporting boundary only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import UndefinedRateError, ValidationError

GENERATORS = ("cgan", "dm")


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    def relative(self) -> dict[str, float | None]:
        if self.total == 0:
            return {"tp": None, "fp": None, "tn": None, "fn": None}
        return {
            "tp": 100.0 * self.tp / self.total,
            "fp": 100.0 * self.fp / self.total,
            "tn": 100.0 * self.tn / self.total,
            "fn": 100.0 * self.fn / self.total,
        }


@dataclass
class MethodReport:
    generator: str
    pick_rate_as_fake: float | None
    pick_rate_as_real: float | None
    confusion: ConfusionMatrix
    accuracy: float | None
    precision: float | None
    recall: float | None
    miss_rate: float | None


def pick_rate(rows: list[dict], generator: str) -> tuple[float, float]:
    """Both pick-rate conventions over this generator's pair trials.

    picked-as-fake is the share of pair trials in which the synthetic image
    was the one chosen; picked-as-real is its forced-choice complement.
    """
    if generator not in GENERATORS:
        raise ValidationError(f"unknown generator {generator!r}")
    trials = [r for r in rows if r["kind"] == "pair" and r["generator"] == generator]
    if not trials:
        raise UndefinedRateError(f"no pair trials for generator {generator!r}")
    chosen_fake = sum(1 for r in trials if r["answer"] == r["truth"])
    as_fake = 100.0 * chosen_fake / len(trials)
    return as_fake, 100.0 - as_fake


def confusion(
    rows: list[dict], generator: str | None, pair_handling: bool = True
) -> ConfusionMatrix:
    """Tally the confusion matrix (positive = fake).

    ``generator`` None pools every generator into the overall matrix. Single
    fake trials map to tp/fn, real singles to tn/fp. With ``pair_handling``
    each pair trial adds one fake-judgment and one real-judgment.
    """
    m = ConfusionMatrix()
    for row in rows:
        if row["kind"] == "single":
            gen = row["generator"]
            if gen in GENERATORS:
                if generator is None or gen == generator:
                    if row["answer"] == "fake":
                        m.tp += 1
                    else:
                        m.fn += 1
            else:
                if row["answer"] == "real":
                    m.tn += 1
                else:
                    m.fp += 1
        elif row["kind"] == "pair" and pair_handling:
            if generator is None or row["generator"] == generator:
                if row["answer"] == row["truth"]:
                    m.tp += 1
                    m.tn += 1
                else:
                    m.fn += 1
                    m.fp += 1
    return m


def rates(matrix: ConfusionMatrix) -> tuple[float | None, float | None, float | None]:
    """(accuracy, precision, recall) as percentages; None where undefined."""
    accuracy = 100.0 * (matrix.tp + matrix.tn) / matrix.total if matrix.total else None
    precision = (
        100.0 * matrix.tp / (matrix.tp + matrix.fp) if (matrix.tp + matrix.fp) else None
    )
    recall = (
        100.0 * matrix.tp / (matrix.tp + matrix.fn) if (matrix.tp + matrix.fn) else None
    )
    return accuracy, precision, recall


def method_report(rows: list[dict], generator: str, pair_handling: bool = True) -> MethodReport:
    try:
        as_fake, as_real = pick_rate(rows, generator)
    except UndefinedRateError:
        as_fake = as_real = None
    matrix = confusion(rows, generator, pair_handling)
    accuracy, precision, recall = rates(matrix)
    return MethodReport(
        generator=generator,
        pick_rate_as_fake=as_fake,
        pick_rate_as_real=as_real,
        confusion=matrix,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        miss_rate=None if recall is None else 100.0 - recall,
    )


@dataclass
class StudyReport:
    methods: list[MethodReport]
    overall: ConfusionMatrix
    sessions: int
    responses: int
    pair_handling: bool


def study_report(rows: list[dict], pair_handling: bool = True) -> StudyReport:
    """Per-generator reports plus the pooled overall matrix."""
    if not rows:
        raise ValidationError("empty response log")
    return StudyReport(
        methods=[method_report(rows, g, pair_handling) for g in GENERATORS],
        overall=confusion(rows, None, pair_handling),
        sessions=len({r["session"] for r in rows}),
        responses=len(rows),
        pair_handling=pair_handling,
    )


# ---------------------------------------------------------------------------
# serialization (shared verbatim by the CLI and the HTTP report endpoint)


def _round2(v: float | None) -> float | None:
    return None if v is None else round(v, 2)


def report_to_dict(report: StudyReport) -> dict:
    return {
        "sessions": report.sessions,
        "responses": report.responses,
        "pair_handling": report.pair_handling,
        "methods": [
            {
                "generator": m.generator,
                "pick_rate_as_fake": _round2(m.pick_rate_as_fake),
                "pick_rate_as_real": _round2(m.pick_rate_as_real),
                "confusion": {
                    "tp": m.confusion.tp,
                    "fp": m.confusion.fp,
                    "tn": m.confusion.tn,
                    "fn": m.confusion.fn,
                },
                "confusion_relative": {
                    k: _round2(v) for k, v in m.confusion.relative().items()
                },
                "accuracy": _round2(m.accuracy),
                "precision": _round2(m.precision),
                "recall": _round2(m.recall),
                "miss_rate": _round2(m.miss_rate),
            }
            for m in report.methods
        ],
        "overall": {
            "confusion": {
                "tp": report.overall.tp,
                "fp": report.overall.fp,
                "tn": report.overall.tn,
                "fn": report.overall.fn,
            },
            "confusion_relative": {
                k: _round2(v) for k, v in report.overall.relative().items()
            },
        },
    }


def report_json_bytes(report: StudyReport) -> bytes:
    """Canonical JSON bytes; both report paths must emit exactly these."""
    doc = report_to_dict(report)
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _fmt(v: float | None) -> str:
    return "undefined" if v is None else f"{v:.2f}"


def report_text(report: StudyReport) -> str:
    """Plain-text table mirroring the JSON content."""
    lines = []
    lines.append("Turing-test study report")
    lines.append("========================")
    lines.append(f"sessions: {report.sessions}   responses: {report.responses}")
    lines.append(f"pair trials folded into confusion: {report.pair_handling}")
    lines.append("")
    head = (
        f"{'generator':<10} {'as-fake%':>9} {'as-real%':>9} "
        f"{'acc%':>9} {'prec%':>9} {'recall%':>9} {'miss%':>9}"
    )
    lines.append(head)
    lines.append("-" * len(head))
    for m in report.methods:
        lines.append(
            f"{m.generator:<10} {_fmt(m.pick_rate_as_fake):>9} {_fmt(m.pick_rate_as_real):>9} "
            f"{_fmt(m.accuracy):>9} {_fmt(m.precision):>9} {_fmt(m.recall):>9} {_fmt(m.miss_rate):>9}"
        )
        c = m.confusion
        lines.append(
            f"{'':<10} confusion tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}"
        )
    o = report.overall
    rel = o.relative()
    lines.append("")
    lines.append(f"overall confusion (absolute): tp={o.tp} fp={o.fp} tn={o.tn} fn={o.fn}")
    lines.append(
        "overall confusion (relative %): "
        f"tp={_fmt(rel['tp'])} fp={_fmt(rel['fp'])} tn={_fmt(rel['tn'])} fn={_fmt(rel['fn'])}"
    )
    return "\n".join(lines) + "\n"


def confusion_csv(report: StudyReport, relative: bool) -> str:
    """Long-format CSV of the matrices, one row per cell, for plotting."""
    lines = ["matrix,cell,value"]
    matrices = [(m.generator, m.confusion) for m in report.methods]
    matrices.append(("overall", report.overall))
    for name, matrix in matrices:
        if relative:
            for cell, value in matrix.relative().items():
                lines.append(f"{name},{cell},{'' if value is None else f'{value:.2f}'}")
        else:
            for cell in ("tp", "fp", "tn", "fn"):
                lines.append(f"{name},{cell},{getattr(matrix, cell)}")
    return "\n".join(lines) + "\n"
