"""Administrative command line: phantoms, splits, training, synthesis,
study plans, offline reports (JSON + text + CSV + figures), probe-task
management, and the HTTP server.

Exit codes: 0 success, 1 validation failure (bad inputs, missing files,
schema violations), 2 runtime/numeric failure (training divergence; the
last stable checkpoint is written next to the requested output).
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys

import jsonschema
import numpy as np

from . import catalog, diffusion, gan, inject, metrics, nn, study
from .errors import CytoprobeError, NumericError, ValidationError

TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 2},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "noise_dim": {"type": "integer", "minimum": 1},
        "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "leaky_slope": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "T": {"type": "integer", "minimum": 1},
        "time_features": {"type": "integer", "minimum": 2},
    },
}


def _load_train_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        jsonschema.validate(doc, TRAIN_SCHEMA)
    except jsonschema.ValidationError as err:
        raise ValidationError(f"bad train config {path}: {err.message}") from err
    return doc


def _load_manifest(data_dir: str) -> list[dict]:
    path = os.path.join(data_dir, catalog.MANIFEST_NAME)
    if not os.path.exists(path):
        raise ValidationError(f"no {catalog.MANIFEST_NAME} in {data_dir}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _training_arrays(records: list[catalog.ImageRecord]):
    """Labeled records to ([-1,1] vectors, class indices)."""
    labeled = [r for r in records if r.class_label is not None]
    if not labeled:
        raise ValidationError("no labeled records to train on")
    X = np.stack([r.pixels.reshape(-1).astype(np.float64) / 127.5 - 1.0 for r in labeled])
    y = np.array([catalog.CLASS_INDEX[r.class_label] for r in labeled], dtype=np.int64)
    return X, y, labeled


# ---------------------------------------------------------------------------
# commands


def cmd_phantoms(args) -> int:
    records = catalog.render_phantom_corpus(args.per_class, args.seed)
    manifest = catalog.save_corpus(records, args.out)
    print(f"wrote {len(records)} phantoms ({args.per_class} per class) to {args.out}")
    print(f"manifest: {manifest}")
    return 0


def cmd_split(args) -> int:
    records = catalog.load_corpus(args.data)
    spec = catalog.SplitSpec(args.train, args.val, args.test, seed=args.seed)
    catalog.stratified_split(records, spec)
    catalog.save_manifest_only(records, args.data)
    sizes = {s: sum(r.split == s for r in records) for s in catalog.SPLITS}
    print(f"split {len(records)} records: {sizes}")
    return 0


def cmd_train(args) -> int:
    cfg_doc = _load_train_config(args.config)
    if args.epochs is not None:
        cfg_doc["epochs"] = args.epochs
    if args.seed is not None:
        cfg_doc["seed"] = args.seed
    records = catalog.load_corpus(args.data)
    train_records = [r for r in records if r.split in (None, "train")]
    X, y, labeled = _training_arrays(train_records)

    if args.model == "gan":
        weights = catalog.class_weights(labeled)
        weight_map = {catalog.CLASS_INDEX[k]: v for k, v in weights.items()}
        cfg = gan.GanConfig(
            data_dim=X.shape[1],
            num_classes=len(catalog.CLASS_NAMES),
            noise_dim=cfg_doc.get("noise_dim", 32),
            epochs=cfg_doc.get("epochs", 200),
            batch_size=cfg_doc.get("batch_size", 64),
            learning_rate=cfg_doc.get("learning_rate", 0.0002),
            leaky_slope=cfg_doc.get("leaky_slope", 0.2),
            seed=cfg_doc.get("seed", 0),
            hidden=tuple(cfg_doc.get("hidden", nn.DEFAULT_HIDDEN)),
        )
        model = gan.build_model(cfg)
        try:
            history = gan.train(model, X, y, cfg, class_weight_map=weight_map)
        except NumericError as err:
            crash = args.out + ".crash.json"
            if err.checkpoint is not None:
                model.generator.set_param_vector(err.checkpoint[0])
                model.discriminator.set_param_vector(err.checkpoint[1])
                gan.save_gan(crash, model)
            print(f"numeric failure: {err.message}; last stable checkpoint: {crash}", file=sys.stderr)
            return 2
        gan.save_gan(args.out, model)
        print(f"trained cGAN for {len(history)} steps; checkpoint: {args.out}")
    else:
        # class balancing for the diffusion model is by oversampling
        balanced = catalog.oversample(labeled, seed=cfg_doc.get("seed", 0))
        X, y, _ = _training_arrays(balanced)
        schedule = diffusion.NoiseSchedule.linear(cfg_doc.get("T", 100))
        cfg = diffusion.DiffusionConfig(
            data_dim=X.shape[1],
            num_classes=len(catalog.CLASS_NAMES),
            time_features=cfg_doc.get("time_features", 16),
            hidden=tuple(cfg_doc.get("hidden", (128, 128, 128, 128))),
            epochs=cfg_doc.get("epochs", 75),
            batch_size=cfg_doc.get("batch_size", 64),
            learning_rate=cfg_doc.get("learning_rate", 1e-3),
            leaky_slope=cfg_doc.get("leaky_slope", 0.2),
            seed=cfg_doc.get("seed", 0),
        )
        try:
            denoiser, history = diffusion.train_denoiser(X, y, schedule, cfg)
        except NumericError as err:
            print(f"numeric failure: {err.message}", file=sys.stderr)
            return 2
        diffusion.save_denoiser(args.out, denoiser, schedule)
        print(f"trained DM for {len(history)} steps; checkpoint: {args.out}")
    return 0


def cmd_synthesize(args) -> int:
    with open(args.model, "r", encoding="utf-8") as fh:
        fmt = json.load(fh).get("format")
    if fmt == gan.GAN_FORMAT:
        model = gan.load_gan(args.model)
        records = gan.synthesize_corpus(model, args.per_class, args.seed)
    elif fmt == diffusion.DM_FORMAT:
        denoiser, schedule = diffusion.load_denoiser(args.model)
        records = diffusion.synthesize_corpus(denoiser, schedule, args.per_class, args.seed)
    else:
        raise ValidationError(f"unrecognized model format {fmt!r} in {args.model}")
    catalog.save_corpus(records, args.out, append=args.append)
    print(f"synthesized {len(records)} records into {args.out}")
    return 0


def cmd_study_new(args) -> int:
    entries = _load_manifest(args.data)
    plan = study.build_study(entries, args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(plan.to_dict(), fh, indent=2)
        fh.write("\n")
    print(
        f"study {plan.study_id}: {len(plan.pair_trials)} pairs + "
        f"{len(plan.single_trials)} singles -> {args.out}"
    )
    return 0


def cmd_study_report(args) -> int:
    with open(args.log, "r", encoding="utf-8") as fh:
        rows = study.parse_responses_csv(fh.read())
    if not rows:
        print("warning: response log has no completed sessions", file=sys.stderr)
        return 0
    report = metrics.study_report(rows, pair_handling=not args.no_pair_folding)
    os.makedirs(args.out, exist_ok=True)

    json_path = os.path.join(args.out, "report.json")
    with open(json_path, "wb") as fh:
        fh.write(metrics.report_json_bytes(report))
    text_path = os.path.join(args.out, "report.txt")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(metrics.report_text(report))
    for rel, name in ((False, "confusion_absolute.csv"), (True, "confusion_relative.csv")):
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            fh.write(metrics.confusion_csv(report, relative=rel))

    artifacts = [json_path, text_path]
    if not args.no_figures:
        from . import figures

        artifacts += figures.render_report_figures(report, args.out)
    print(metrics.report_text(report))
    print("artifacts: " + ", ".join(sorted(os.listdir(args.out))))
    return 0


def cmd_inject_plan(args) -> int:
    entries = _load_manifest(args.data)
    reals = [e["id"] for e in entries if e["provenance"] in ("real", "phantom")]
    pool = [e for e in entries if e["provenance"] in ("cgan", "dm") and e.get("class")]
    if args.real is not None:
        reals = reals[: args.real]
    plan = inject.plan_injection(reals, pool, args.fraction, args.seed)

    os.makedirs(os.path.join(args.out, "images"), exist_ok=True)
    files = {e["id"]: e["file"] for e in entries}
    manifest = inject.task_manifest(plan)
    for item, plan_item in zip(manifest["items"], plan.items):
        src = os.path.join(args.data, files[plan_item.record_id])
        dst_rel = f"images/{plan_item.item_id}.ppm"
        shutil.copyfile(src, os.path.join(args.out, dst_rel))
        item["file"] = dst_rel
    manifest["classes"] = list(catalog.CLASS_NAMES)

    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(args.out, "answer_key.json"), "w", encoding="utf-8") as fh:
        json.dump(inject.answer_key(plan), fh, indent=2)
        fh.write("\n")
    with open(os.path.join(args.out, "plan.json"), "w", encoding="utf-8") as fh:
        json.dump(plan.to_dict(), fh, indent=2)
        fh.write("\n")
    n_probes = len(plan.probe_items())
    print(
        f"task {plan.task_id}: {len(plan.items)} items ({n_probes} probes) -> {args.out}\n"
        "annotator-facing: manifest.json + images/; keep plan.json and "
        "answer_key.json server-side"
    )
    return 0


def cmd_inject_score(args) -> int:
    with open(os.path.join(args.task, "plan.json"), "r", encoding="utf-8") as fh:
        plan = inject.InjectionPlan.from_dict(json.load(fh))
    with open(args.annotations, "r", encoding="utf-8") as fh:
        labels = json.load(fh)

    scores: dict[str, dict] = {}
    if args.scores and os.path.exists(args.scores):
        with open(args.scores, "r", encoding="utf-8") as fh:
            scores = json.load(fh)
    prior = (
        inject.AnnotatorScore.from_dict(scores[args.annotator])
        if args.annotator in scores
        else inject.AnnotatorScore(annotator_id=args.annotator)
    )
    delta, updated = inject.score_annotation(plan, labels, prior)
    scores[args.annotator] = updated.to_dict()
    if args.scores:
        with open(args.scores, "w", encoding="utf-8") as fh:
            json.dump(scores, fh, indent=2)
            fh.write("\n")
    print(
        json.dumps(
            {
                "annotator": args.annotator,
                "points_delta": delta.points,
                "probes_seen": delta.probes_seen,
                "probes_correct": delta.probes_correct,
                "high_score": updated.high_score,
                "streak": updated.streak,
                "reliability": round(updated.reliability, 6),
            },
            indent=2,
        )
    )
    return 0


def cmd_export(args) -> int:
    from .server.config import ServerConfig
    from .server.core import Service

    service = Service(ServerConfig(data_dir=args.data, snapshot_every=0))
    if args.format == "csv":
        payload = service.export_csv(args.study)
        mode = "w"
    else:
        payload = service.report_bytes(args.study)
        mode = "wb"
    with open(args.out, mode) as fh:
        fh.write(payload)
    print(f"exported {args.format} for {args.study} -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .server.app import run
    from .server.config import ServerConfig, load_config

    if args.config:
        config = load_config(args.config)
    else:
        data = args.data or os.environ.get("CYTOPROBE_DATA_DIR")
        if not data:
            raise ValidationError(
                "data dir required: --data, a config file, or CYTOPROBE_DATA_DIR"
            )
        config = ServerConfig(data_dir=data)
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port
    if args.data:
        config.data_dir = args.data
    print(f"serving {config.data_dir} on {config.host}:{config.port}")
    run(config)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cytoprobe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantoms", help="render a phantom corpus")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantoms)

    p = sub.add_parser("split", help="assign stratified train/val/test splits")
    p.add_argument("--data", required=True)
    p.add_argument("--train", type=float, default=0.8)
    p.add_argument("--val", type=float, default=0.1)
    p.add_argument("--test", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a generative model on a corpus")
    p.add_argument("model", choices=("gan", "dm"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON train config")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="sample a corpus from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--append", action="store_true", help="append to an existing corpus")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("study", help="study plans and reports")
    study_sub = p.add_subparsers(dest="study_command", required=True)
    q = study_sub.add_parser("new", help="compose a study plan from a corpus")
    q.add_argument("--data", required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_study_new)
    q = study_sub.add_parser("report", help="analytics over an exported response log")
    q.add_argument("--log", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--no-pair-folding", action="store_true")
    q.add_argument("--no-figures", action="store_true")
    q.set_defaults(func=cmd_study_report)

    p = sub.add_parser("inject", help="probe tasks and scoring")
    inj_sub = p.add_subparsers(dest="inject_command", required=True)
    q = inj_sub.add_parser("plan", help="build an injected annotation task")
    q.add_argument("--data", required=True)
    q.add_argument("--fraction", type=float, default=0.5)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--real", type=int, default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_inject_plan)
    q = inj_sub.add_parser("score", help="score an annotation batch against a task")
    q.add_argument("--task", required=True)
    q.add_argument("--annotations", required=True)
    q.add_argument("--annotator", required=True)
    q.add_argument("--scores", default=None, help="rolling scores JSON (read+write)")
    q.set_defaults(func=cmd_inject_score)

    p = sub.add_parser("export", help="export logs/reports from a server data dir")
    p.add_argument("--data", required=True)
    p.add_argument("--study", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as err:
        print(f"numeric failure: {err.message}", file=sys.stderr)
        return 2
    except (CytoprobeError, FileNotFoundError, json.JSONDecodeError) as err:
        message = getattr(err, "message", None) or str(err)
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
