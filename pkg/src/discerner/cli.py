"""Command-line pipeline for batch use.

Subcommands: ingest, tune, train, evaluate, predict, coverage, evidence.
Configuration comes from one JSON file plus flag overrides (flags win);
all randomness flows from --seed and every command writes a run manifest
next to its outputs. Exit codes: 0 success, 1 usage error, 2 data or
validation error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from . import baseline as rf
from . import model as hea
from . import report
from .corpus import (
    CRITERIA,
    Document,
    build_document,
    load_corpus_dir,
    load_documents,
    save_documents,
    stratified_folds,
)
from .embeddings import HashEmbedder, embed_document, load_archive
from .errors import DiscernError, NoAttention
from .evaluation import (
    CVReport,
    PredictionRecord,
    coverage_analysis,
    cross_validate,
    percent_agreement,
    read_prediction_dump,
    write_prediction_dump,
)
from .training import (
    LabeledExample,
    SearchSpace,
    TrainConfig,
    random_search,
    train_fold,
    validation_split,
)

DEFAULT_CONFIG = {
    "model": {
        "variant": "hea",
        "d_h_sent": 16,
        "d_h_doc": 16,
        "join_sent": "concat",
        "join_doc": "concat",
        "attention": "scaled_dot",
        "d_q": None,
        "dropout_p": 0.1,
    },
    "training": {
        "learning_rate": 3e-3,
        "l2": 1e-5,
        "max_epochs": 30,
        "batch_size": 8,
        "optimizer": "adam",
    },
    "search": {},
    "embeddings": {"dim": 32, "seed": 0},
    "forest": {
        "n_trees": 200,
        "min_leaf": 2,
        "max_depth": None,
        "features_per_split": None,
        "use_rfe": True,
        "rfe_trees": 25,
        "rfe_folds": 3,
    },
    "validation_fraction": 0.1,
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    config = DEFAULT_CONFIG
    if path:
        with open(path, encoding="utf-8") as fh:
            config = _merge(config, json.load(fh))
    return config


def _write_atomic(path: Path, data: str | bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data, encoding="utf-8")
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


def _write_json(path: Path, payload) -> None:
    _write_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


class RunContext:
    """Tracks outputs so the manifest can be written last, atomically."""

    def __init__(self, args, command: str):
        self.command = command
        self.seed = args.seed
        self.config_path = getattr(args, "config", None)
        self.out_dir = Path(args.out)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.config_path,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "engine_version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        _write_atomic(
            self.out_dir / "run_manifest.json",
            json.dumps(manifest, sort_keys=True, indent=2) + "\n",
        )


def _resolve_embeddings(spec: str, config: dict):
    if spec == "hash":
        emb = config["embeddings"]
        return HashEmbedder(dim=int(emb["dim"]), seed=int(emb.get("seed", 0)))
    if spec.startswith("archive:"):
        return load_archive(spec[len("archive:") :])
    raise DiscernError(f"--embeddings must be 'hash' or 'archive:<path>', got {spec!r}")


def _provider_label(source) -> str:
    if isinstance(source, HashEmbedder):
        return "hash"
    return source.provider_id


def _model_config(config: dict, variant: str, criterion: str, embed_dim: int) -> hea.ModelConfig:
    m = dict(config["model"])
    m["variant"] = variant
    m["criterion"] = criterion
    m["embed_dim"] = embed_dim
    return hea.ModelConfig.from_dict(m)


def _train_config(config: dict, model_config: hea.ModelConfig, seed: int) -> TrainConfig:
    t = dict(config["training"])
    adam = t.pop("adam", None)
    cfg = TrainConfig(model=model_config, seed=seed, **t)
    if adam:
        cfg = dataclasses.replace(
            cfg, adam=dataclasses.replace(cfg.adam, **adam)
        )
    return cfg


def _criteria_from_flag(value: str) -> list[str]:
    if value == "all":
        return list(CRITERIA)
    if value not in CRITERIA:
        raise DiscernError(f"--criterion must be one of {CRITERIA + ('all',)}, got {value!r}")
    return [value]


def _examples(
    docs: Sequence[Document], source, criterion: str
) -> list[LabeledExample]:
    return [
        LabeledExample(d.id, embed_document(d, source), d.labels[criterion])
        for d in docs
    ]


def _forest_config(config: dict) -> rf.ForestConfig:
    f = config["forest"]
    return rf.ForestConfig(
        n_trees=int(f["n_trees"]),
        min_leaf=int(f["min_leaf"]),
        max_depth=f["max_depth"],
        features_per_split=f["features_per_split"],
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> None:
    ctx = RunContext(args, "ingest")
    ctx.inputs["corpus"] = str(args.corpus)
    articles = load_corpus_dir(args.corpus)
    documents = [build_document(a) for a in articles]
    html_by_id = {a.id: a.html for a in articles}
    out = ctx.path("documents.json")
    save_documents(out, documents, html_by_id)
    ctx.finish()
    print(f"ingested {len(documents)} documents -> {out}")


def cmd_tune(args) -> None:
    ctx = RunContext(args, "tune")
    ctx.inputs["docs"] = str(args.docs)
    config = load_config(args.config)
    docs, _ = load_documents(args.docs)
    source = _resolve_embeddings(args.embeddings, config)
    if args.criterion == "all":
        raise DiscernError("tune optimizes one criterion at a time; pick one")
    criterion = _criteria_from_flag(args.criterion)[0]
    examples = _examples(docs, source, criterion)
    train, val = validation_split(
        examples, float(config["validation_fraction"]), args.seed
    )
    search_overrides = dict(config["search"])
    for key in ("l2_range", "learning_rate_range"):
        if key in search_overrides:
            search_overrides[key] = tuple(search_overrides[key])
    for key in ("d_h", "join", "attention", "dropout_p", "batch_size"):
        if key in search_overrides:
            search_overrides[key] = tuple(search_overrides[key])
    space = SearchSpace(
        **search_overrides, n_trials=args.trials, base_seed=args.seed
    )
    best, trials = random_search(
        space, train, val, variant=args.model, criterion=criterion, workers=args.workers
    )
    # emitted in the CLI config schema so it feeds straight into --config
    best_payload = {
        "model": best.model.to_dict(),
        "training": {
            "learning_rate": best.learning_rate,
            "l2": best.l2,
            "max_epochs": best.max_epochs,
            "batch_size": best.batch_size,
            "optimizer": best.optimizer,
            "adam": {
                "beta1": best.adam.beta1,
                "beta2": best.adam.beta2,
                "eps": best.adam.eps,
            },
        },
        "embeddings": config["embeddings"],
    }
    _write_json(ctx.path("best_config.json"), best_payload)
    lines = []
    for t in trials:
        for entry in t.log:
            lines.append(json.dumps(entry, sort_keys=True))
    _write_atomic(ctx.path("trials.jsonl"), "\n".join(lines) + "\n")
    _write_json(
        ctx.path("trials_summary.json"),
        [
            {
                "trial": t.index,
                "val_f1_macro": t.val_f1_macro,
                "best_epoch": t.best_epoch,
                "error": t.error,
                "config": t.config.to_dict(),
            }
            for t in trials
        ],
    )
    ctx.finish()
    winner = max((t.val_f1_macro for t in trials if t.error is None), default=float("nan"))
    print(f"best of {len(trials)} trials: val F1-macro {winner:.4f}")


def cmd_train(args) -> None:
    ctx = RunContext(args, "train")
    ctx.inputs["docs"] = str(args.docs)
    config = load_config(args.config)
    docs, html_by_id = load_documents(args.docs)
    criteria = _criteria_from_flag(args.criterion)
    if args.model == "rf":
        forest_config = _forest_config(config)
        for criterion in criteria:
            pipeline = rf.fit_baseline(
                [d.sentences for d in docs],
                [html_by_id.get(d.id, "") for d in docs],
                [d.labels[criterion] for d in docs],
                criterion,
                config=forest_config,
                seed=args.seed,
                use_rfe=bool(config["forest"]["use_rfe"]),
                rfe_config=rf.ForestConfig(n_trees=int(config["forest"]["rfe_trees"])),
                rfe_folds=int(config["forest"]["rfe_folds"]),
            )
            pipeline.save(ctx.path(f"forest_{criterion}.json"))
        ctx.finish()
        print(f"trained forests for {', '.join(criteria)}")
        return
    source = _resolve_embeddings(args.embeddings, config)
    for criterion in criteria:
        examples = _examples(docs, source, criterion)
        train, val = validation_split(
            examples, float(config["validation_fraction"]), args.seed + 101
        )
        model_config = _model_config(config, args.model, criterion, source.dim)
        train_config = _train_config(config, model_config, args.seed)
        checkpoint, log = train_fold(train, val, train_config)
        checkpoint.save(ctx.path(f"{criterion}.adck"))
        _write_atomic(
            ctx.path(f"train_log_{criterion}.jsonl"),
            "\n".join(json.dumps(e, sort_keys=True) for e in log) + "\n",
        )
    ctx.finish()
    print(f"trained {args.model} checkpoints for {', '.join(criteria)}")


def _neural_fold_trainer(criterion, base_config: TrainConfig, matrices, val_fraction, seed):
    def run(fold_index: int, train_docs, test_docs):
        examples = [
            LabeledExample(d.id, matrices[d.id], d.labels[criterion]) for d in train_docs
        ]
        tr, va = validation_split(examples, val_fraction, seed + 500 + fold_index)
        fold_config = dataclasses.replace(base_config, seed=seed + 1000 + fold_index)
        checkpoint, _ = train_fold(tr, va, fold_config)
        params = hea.params_from_arrays(fold_config.model, checkpoint.params)
        records = []
        for d in test_docs:
            result = hea.forward(fold_config.model, params, matrices[d.id])
            records.append(
                PredictionRecord(
                    doc_id=d.id,
                    criterion=criterion,
                    label_true=d.labels[criterion],
                    label_pred=result.prediction.label,
                    confidence=result.prediction.confidence,
                )
            )
        return records

    return run


def _rf_fold_trainer(criterion, config: dict, html_by_id, seed):
    forest_config = _forest_config(config)

    def run(fold_index: int, train_docs, test_docs):
        pipeline = rf.fit_baseline(
            [d.sentences for d in train_docs],
            [html_by_id.get(d.id, "") for d in train_docs],
            [d.labels[criterion] for d in train_docs],
            criterion,
            config=forest_config,
            seed=seed + fold_index,
            use_rfe=bool(config["forest"]["use_rfe"]),
            rfe_config=rf.ForestConfig(n_trees=int(config["forest"]["rfe_trees"])),
            rfe_folds=int(config["forest"]["rfe_folds"]),
        )
        records = []
        for d in test_docs:
            label, confidence = pipeline.predict(d.sentences, html_by_id.get(d.id, ""))
            records.append(
                PredictionRecord(
                    doc_id=d.id,
                    criterion=criterion,
                    label_true=d.labels[criterion],
                    label_pred=label,
                    confidence=confidence,
                )
            )
        return records

    return run


def _agreement_rows(docs: Sequence[Document]) -> list[tuple[str, float]]:
    """Per-criterion share of single-rater labels agreeing with the
    aggregated consensus label."""
    rows = []
    for criterion in CRITERIA:
        rater_labels = []
        reference = []
        for d in docs:
            scores = d.raw_scores.get(criterion)
            if not scores:
                continue
            consensus = d.labels[criterion]
            for s in scores:
                rater_labels.append(1 if s >= 3 else 0)
                reference.append(consensus)
        if rater_labels:
            rows.append((criterion, percent_agreement(rater_labels, reference)))
    return rows


def cmd_evaluate(args) -> None:
    ctx = RunContext(args, "evaluate")
    ctx.inputs["docs"] = str(args.docs)
    config = load_config(args.config)
    docs, html_by_id = load_documents(args.docs)
    criteria = _criteria_from_flag(args.criterion)
    if args.model != "rf":
        source = _resolve_embeddings(args.embeddings, config)
        matrices = {d.id: embed_document(d, source) for d in docs}
    reports: list[CVReport] = []
    all_records: list[PredictionRecord] = []
    for criterion in criteria:
        plan = stratified_folds(docs, criterion, args.folds, args.seed)
        if args.model == "rf":
            trainer = _rf_fold_trainer(criterion, config, html_by_id, args.seed)
            label = "RF"
        else:
            model_config = _model_config(config, args.model, criterion, source.dim)
            base = _train_config(config, model_config, args.seed)
            trainer = _neural_fold_trainer(
                criterion, base, matrices, float(config["validation_fraction"]), args.seed
            )
            label = f"{args.model.upper()} {_provider_label(source)}"
        cv_report, records = cross_validate(docs, plan, trainer, label)
        reports.append(cv_report)
        all_records.extend(records)
        _write_json(
            ctx.path(f"cv_report_{criterion}.json"),
            {
                "criterion": cv_report.criterion,
                "model": cv_report.model_label,
                "per_fold": cv_report.per_fold,
                "mean": cv_report.mean,
                "std": cv_report.std,
            },
        )
    write_prediction_dump(ctx.path("predictions.csv"), all_records)
    _write_atomic(ctx.path("cv_table.txt"), report.format_cv_table(reports))
    report.save_cv_figure(reports, ctx.path("cv_figure.png"))
    agreement = _agreement_rows(docs)
    if agreement:
        _write_atomic(
            ctx.path("agreement_table.txt"), report.format_agreement_table(agreement)
        )
    ctx.finish()
    print(report.format_cv_table(reports), end="")


def cmd_predict(args) -> None:
    ctx = RunContext(args, "predict")
    ctx.inputs["docs"] = str(args.docs)
    ctx.inputs["checkpoint"] = str(args.checkpoint)
    config = load_config(args.config)
    docs, html_by_id = load_documents(args.docs)
    records = []
    entries = []
    if args.model == "rf":
        pipeline = rf.BaselinePipeline.load(args.checkpoint)
        criterion = pipeline.criterion
        for d in docs:
            probs = pipeline.predict_proba(d.sentences, html_by_id.get(d.id, ""))
            label = int(probs.argmax())
            confidence = float(probs[label])
            records.append(
                PredictionRecord(d.id, criterion, d.labels[criterion], label, confidence)
            )
            entries.append(
                {
                    "doc_id": d.id,
                    "label_true": d.labels[criterion],
                    "label_pred": label,
                    "confidence": confidence,
                    "probs": [float(p) for p in probs],
                    "attention": None,
                }
            )
    else:
        loaded = hea.load_checkpoint(args.checkpoint)
        criterion = loaded.criterion
        params = loaded.build_params()
        source = _resolve_embeddings(args.embeddings, config)
        for d in docs:
            result = hea.forward(loaded.config, params, embed_document(d, source))
            pred = result.prediction
            records.append(
                PredictionRecord(d.id, criterion, d.labels[criterion], pred.label, pred.confidence)
            )
            entries.append(
                {
                    "doc_id": d.id,
                    "label_true": d.labels[criterion],
                    "label_pred": pred.label,
                    "confidence": pred.confidence,
                    "probs": [float(p) for p in pred.probs],
                    "attention": None
                    if pred.attention is None
                    else [float(a) for a in pred.attention],
                }
            )
    write_prediction_dump(ctx.path("predictions.csv"), records)
    _write_json(
        ctx.path("predictions.json"), {"criterion": criterion, "predictions": entries}
    )
    ctx.finish()
    print(f"wrote predictions for {len(records)} documents")


def cmd_coverage(args) -> None:
    ctx = RunContext(args, "coverage")
    ctx.inputs["dump"] = str(args.dump)
    records = read_prediction_dump(args.dump)
    levels = [float(v) for v in args.coverage.split(",") if v]
    if not levels:
        raise DiscernError("--coverage needs at least one level")
    by_criterion: dict[str, list[PredictionRecord]] = {}
    for r in records:
        by_criterion.setdefault(r.criterion, []).append(r)
    payload = {}
    tables = []
    for criterion in sorted(by_criterion):
        cov_report = coverage_analysis(by_criterion[criterion], levels)
        payload[criterion] = [
            {
                "coverage": row.coverage,
                "threshold": row.threshold,
                "precision": row.precision,
                "recall": row.recall,
                "accuracy": row.accuracy,
                "n_covered": row.n_covered,
                "n_abstained": row.n_abstained,
            }
            for row in cov_report.rows
        ]
        tables.append(report.format_coverage_table(cov_report))
        report.save_coverage_figure(cov_report, ctx.path(f"coverage_{criterion}.png"))
    _write_json(ctx.path("coverage_report.json"), payload)
    _write_atomic(ctx.path("coverage_table.txt"), "\n".join(tables))
    ctx.finish()
    print("\n".join(tables), end="")


def cmd_evidence(args) -> None:
    ctx = RunContext(args, "evidence")
    ctx.inputs["docs"] = str(args.docs)
    ctx.inputs["checkpoint"] = str(args.checkpoint)
    config = load_config(args.config)
    docs, _ = load_documents(args.docs)
    loaded = hea.load_checkpoint(args.checkpoint)
    if loaded.config.variant != "hea":
        raise NoAttention("evidence extraction needs an attention model checkpoint")
    params = loaded.build_params()
    source = _resolve_embeddings(args.embeddings, config)
    per_topic: dict[str, list[dict]] = {}
    csv_lines = ["doc_id,topic,confidence,rank,weight,sentence"]
    for d in docs:
        result = hea.forward(loaded.config, params, embed_document(d, source))
        pred = result.prediction
        sentences = hea.top_attended(pred, d, args.k)
        for rank, (text, weight) in enumerate(sentences, start=1):
            quoted = text.replace('"', '""')
            csv_lines.append(
                f'{d.id},{d.topic},{pred.confidence!r},{rank},{weight!r},"{quoted}"'
            )
        per_topic.setdefault(d.topic, []).append(
            {
                "doc_id": d.id,
                "confidence": pred.confidence,
                "label_pred": pred.label,
                "sentences": [
                    {"text": text, "weight": weight} for text, weight in sentences
                ],
            }
        )
    # the grouped view keeps the three most confidently predicted documents
    # per topic; the CSV carries every document's top-k sentences
    for topic, entries in per_topic.items():
        entries.sort(key=lambda e: (-e["confidence"], e["doc_id"]))
        per_topic[topic] = entries[:3]
    _write_atomic(ctx.path("evidence.csv"), "\n".join(csv_lines) + "\n")
    _write_json(
        ctx.path("evidence.json"),
        {"criterion": loaded.criterion, "k": args.k, "topics": per_topic},
    )
    ctx.finish()
    total = sum(len(v) for v in per_topic.values())
    print(f"wrote evidence for {len(docs)} documents ({total} highlighted across "
          f"{len(per_topic)} topics)")


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep usage failures on exit code 1
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="discerner", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", default=None, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=0)
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("ingest", help="corpus directory -> documents file")
    p.add_argument("--corpus", required=True)
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tune", help="uniform random hyperparameter search")
    p.add_argument("--docs", required=True)
    p.add_argument("--criterion", default="q5")
    p.add_argument("--embeddings", default="hash")
    p.add_argument("--model", choices=("hea", "he"), default="hea")
    p.add_argument("--trials", type=int, default=8)
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="train one checkpoint per criterion")
    p.add_argument("--docs", required=True)
    p.add_argument("--criterion", default="all")
    p.add_argument("--embeddings", default="hash")
    p.add_argument("--model", choices=("hea", "he", "rf"), default="hea")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="stratified k-fold cross-validation")
    p.add_argument("--docs", required=True)
    p.add_argument("--criterion", default="all")
    p.add_argument("--embeddings", default="hash")
    p.add_argument("--model", choices=("hea", "he", "rf"), default="hea")
    p.add_argument("--folds", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="prediction dump from a checkpoint")
    p.add_argument("--docs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", default="hash")
    p.add_argument("--model", choices=("hea", "he", "rf"), default="hea")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("coverage", help="selective-prediction analysis of a dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--coverage", default="0.8,1.0", help="comma-separated levels")
    common(p)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("evidence", help="top attended sentences per document")
    p.add_argument("--docs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", default="hash")
    p.add_argument("--k", type=int, default=3)
    common(p)
    p.set_defaults(func=cmd_evidence)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
        return 0
    except DiscernError as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 3


def main() -> None:
    sys.exit(run())
