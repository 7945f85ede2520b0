"""Regenerate the bundled sample response log and its golden report files.

Run from the repo root:  python tools/make_goldens.py
"""

import os
import random
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from cytoprobe import metrics, study

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "data")


def manifest_entries():
    entries = []
    for i in range(40):
        entries.append({"id": f"phantom-x-{i:03d}", "provenance": "phantom"})
    for i in range(25):
        entries.append({"id": f"cgan-x-{i:03d}", "provenance": "cgan"})
    for i in range(25):
        entries.append({"id": f"dm-x-{i:03d}", "provenance": "dm"})
    return entries


def simulate(plan, participant, session_id, order_seed, accuracy, rng):
    session = study.start_session(plan, session_id, participant, order_seed=order_seed)
    ts = 1_700_000_000.0
    for trial_id in session.trial_order:
        trial = plan.trial(trial_id)
        correct = rng.random() < accuracy
        if isinstance(trial, study.PairTrial):
            answer = trial.fake_side if correct else ("left" if trial.fake_side == "right" else "right")
        else:
            answer = trial.truth if correct else ("real" if trial.truth == "fake" else "fake")
        study.record_response(session, plan, trial_id, answer, timestamp=ts)
        ts += 7.0
    return session


def main():
    os.makedirs(DATA_DIR, exist_ok=True)
    plan = study.build_study(manifest_entries(), seed=42, study_id="study-sample")
    rng = random.Random(2024)
    sessions = [
        simulate(plan, "ada", "sess-0000", 11, 0.9, rng),
        simulate(plan, "grace", "sess-0001", 22, 0.6, rng),
        simulate(plan, "edsger", "sess-0002", 33, 0.35, rng),
    ]
    csv_text = study.export_responses_csv(plan, sessions)
    with open(os.path.join(DATA_DIR, "sample_responses.csv"), "w") as fh:
        fh.write(csv_text)

    rows = study.parse_responses_csv(csv_text)
    report = metrics.study_report(rows)
    golden = os.path.join(DATA_DIR, "golden")
    os.makedirs(golden, exist_ok=True)
    with open(os.path.join(golden, "report.json"), "wb") as fh:
        fh.write(metrics.report_json_bytes(report))
    with open(os.path.join(golden, "report.txt"), "w") as fh:
        fh.write(metrics.report_text(report))
    with open(os.path.join(golden, "confusion_absolute.csv"), "w") as fh:
        fh.write(metrics.confusion_csv(report, relative=False))
    with open(os.path.join(golden, "confusion_relative.csv"), "w") as fh:
        fh.write(metrics.confusion_csv(report, relative=True))
    print("golden files written to", golden)

    # cross-check the goldens against the brute-force tally oracle
    from oracles import brute_force_confusion

    for generator, method in zip(("cgan", "dm"), report.methods):
        tp, fp, tn, fn = brute_force_confusion(rows, generator)
        assert (method.confusion.tp, method.confusion.fp, method.confusion.tn, method.confusion.fn) == (tp, fp, tn, fn)
    tp, fp, tn, fn = brute_force_confusion(rows, None)
    assert (report.overall.tp, report.overall.fp, report.overall.tn, report.overall.fn) == (tp, fp, tn, fn)
    print("oracle cross-check passed")


if __name__ == "__main__":
    main()
