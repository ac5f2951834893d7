"""Command-line entry point: ``logdp parse|train|detect|evaluate|synth``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from logdp.artifacts import file_digest, read_jsonl
from logdp.config import RunConfig, apply_overrides
from logdp.detector import SchemaMismatch, detect_batch, load_verdict_flags, save_verdicts
from logdp.evaluation import EvaluationError, evaluate, generate_synthetic, load_labels, save_labels
from logdp.ingest import (
    IngestError,
    TemplateStore,
    fit_templates,
    load_parsed,
    load_session_labels,
    parse_lines,
    read_log,
    save_parsed,
)
from logdp.models import ModelError
from logdp.pipeline import ModelBundle, fit
from logdp.sequencer import (
    EventCountMatrix,
    PartitionDiagnostics,
    SequencerError,
    build_ecm,
    data_source,
    partition,
    split_train_val,
)

logger = logging.getLogger("logdp")

EXPECTED_ERRORS = (
    FileNotFoundError,
    ValueError,
    IngestError,
    SequencerError,
    ModelError,
    SchemaMismatch,
    EvaluationError,
)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_parse(cfg: RunConfig, store_path: Optional[str] = None) -> dict:
    """Mine templates from the log (or reuse a frozen store) and write parsed messages."""
    if not cfg.log_path:
        raise ValueError("no log file given (--log or log_path in the config)")
    out = _out(cfg)
    lines, diag = read_log(cfg.log_path, cfg.parser)
    if store_path:
        store = TemplateStore.load(store_path)
        if store.fingerprint != cfg.parser.fingerprint:
            raise IngestError("parser configuration differs from the frozen template store")
    else:
        store = fit_templates(lines, cfg.parser)
        store_path = str(out / "store.jsonl")
        store.save(store_path)
    messages = parse_lines(lines, store, cfg.parser, diag)
    header = {
        "parser_fingerprint": store.fingerprint,
        "config_fingerprint": cfg.fingerprint,
        "templates": len(store),
    }
    save_parsed(messages, out / "parsed.jsonl", header)
    report = {
        **diag.to_dict(),
        "parsed_messages": len(messages),
        "templates": len(store),
        "catch_all_lines": diag.malformed,
        "store": store_path,
    }
    _write_json(out / "parse_report.json", report)
    return report


def _matrix_from_parsed(cfg: RunConfig, parsed: str, store_path: str) -> tuple[EventCountMatrix, dict]:
    store = TemplateStore.load(store_path)
    header, messages = load_parsed(parsed)
    if header.get("parser_fingerprint") != store.fingerprint:
        raise SchemaMismatch("parsed messages were produced with a different parser configuration")
    labels = load_session_labels(cfg.session_labels) if cfg.session_labels else None
    diag = PartitionDiagnostics()
    sequences = partition(messages, cfg.window, labels, diag)
    X = build_ecm(sequences, store, source=data_source(store.fingerprint, cfg.window))
    return X, {"sequences": X.n, "missing_session_key": diag.missing_session_key}


def cmd_train(
    cfg: RunConfig,
    parsed: Optional[str] = None,
    store_path: Optional[str] = None,
    ecm: Optional[str] = None,
    val_ecm: Optional[str] = None,
    figures: bool = False,
) -> dict:
    out = _out(cfg)
    report: dict = {}
    if ecm:
        pool = EventCountMatrix.load(ecm)
    elif parsed:
        X, info = _matrix_from_parsed(cfg, parsed, store_path or str(Path(parsed).parent / "store.jsonl"))
        report.update(info)
        n_train = math.ceil(cfg.train_fraction * X.n)
        pool = X.rows(np.arange(n_train))
        if n_train < X.n:
            test = X.rows(np.arange(n_train, X.n))
            test.save(out / "test.ecm.jsonl")
            report["test_sequences"] = test.n
    else:
        raise ValueError("train needs --parsed or --ecm")

    if cfg.drop_anomalous:
        keep = ~pool.anomalous_mask()
        report["dropped_anomalous"] = int((~keep).sum())
        pool = pool.rows(np.flatnonzero(keep))
    if val_ecm:
        train, val = pool, EventCountMatrix.load(val_ecm)
        if train.anomalous_mask().any():
            raise SequencerError("training data must be normal-only")
    else:
        train, val = split_train_val(pool, cfg.split_ratio)
    train.save(out / "train.ecm.jsonl")
    val.save(out / "val.ecm.jsonl")

    b = cfg.blankets
    bundle = fit(
        train, val,
        alpha=b.alpha, max_cond=b.max_cond, rule=b.rule, hp=cfg.mlp, seed=cfg.seed,
        margin=cfg.margin, jobs=cfg.jobs, config_fingerprint=cfg.fingerprint,
    )
    bundle.save(out / "bundle.jsonl")
    bundle.blankets.save(out / "blankets.jsonl")
    t = bundle.thresholds.values
    report.update({
        "train_sequences": train.n,
        "validation_sequences": val.n,
        "events": len(bundle.event_ids),
        "dependency_models": len(bundle.dependent_events),
        "proximity_models": len(bundle.independent_events),
        "per_event": [
            {
                "event_id": e,
                "model": bundle.models[e].kind,
                "blanket_size": len(bundle.blankets.blankets.get(e, ())),
                "threshold": float(t[j]),
                "fallback": getattr(bundle.models[e], "fallback", None),
            }
            for j, e in enumerate(bundle.event_ids)
        ],
        "bundle_sha256": file_digest(out / "bundle.jsonl"),
        "config_fingerprint": cfg.fingerprint,
    })
    _write_json(out / "train_report.json", report)
    if figures:
        from logdp.report import plot_thresholds

        plot_thresholds(bundle, out / "thresholds.png")
    return report


def cmd_detect(
    cfg: RunConfig,
    bundle_path: str,
    ecm: Optional[str] = None,
    parsed: Optional[str] = None,
    store_path: Optional[str] = None,
    verdicts_path: Optional[str] = None,
    margin: Optional[float] = None,
    figures: bool = False,
) -> dict:
    out = _out(cfg)
    bundle = ModelBundle.load(bundle_path)
    if margin is not None:
        bundle = bundle.with_margin(margin)
    if ecm:
        X = EventCountMatrix.load(ecm)
    elif parsed:
        X, _ = _matrix_from_parsed(cfg, parsed, store_path or str(Path(parsed).parent / "store.jsonl"))
    else:
        raise ValueError("detect needs --ecm or --parsed")
    verdicts = detect_batch(X, bundle)
    path = Path(verdicts_path) if verdicts_path else out / "verdicts.jsonl"
    save_verdicts(path, verdicts, bundle, {
        "bundle_sha256": file_digest(bundle_path),
        "margin": bundle.margin,
        "source": X.source,
    })
    report = {"sequences": len(verdicts), "anomalies": sum(v.is_anomaly for v in verdicts), "verdicts": str(path)}
    if figures:
        from logdp.report import plot_violations

        plot_violations(read_jsonl(path)[1:], out / "violations.png")
    return report


def cmd_evaluate(cfg: RunConfig, verdicts_path: str, labels_path: str, figures: bool = False) -> dict:
    out = _out(cfg)
    metrics = evaluate(load_verdict_flags(verdicts_path), load_labels(labels_path))
    record = {
        **metrics.to_dict(),
        "verdicts_sha256": file_digest(verdicts_path),
        "config_fingerprint": cfg.fingerprint,
    }
    _write_json(out / "metrics.json", record)
    (out / "metrics.txt").write_text(metrics.summary() + "\n")
    if figures:
        from logdp.report import plot_confusion

        plot_confusion(metrics, out / "confusion.png")
    return record


def cmd_synth(cfg: RunConfig) -> dict:
    out = _out(cfg)
    train, val, test, labels = generate_synthetic(cfg.synthetic)
    train.save(out / "train.ecm.jsonl")
    val.save(out / "val.ecm.jsonl")
    test.save(out / "test.ecm.jsonl")
    save_labels(out / "labels.jsonl", labels)
    spec = cfg.synthetic
    _write_json(out / "synth_spec.json", {**spec.to_dict(), "true_blankets": {str(k): v for k, v in spec.true_blankets().items()}})
    return {
        "train": train.n,
        "validation": val.n,
        "test": test.n,
        "anomalies": sum(r["label"] == "anomalous" for r in labels),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logdp", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--dataset", choices=["generic", "hdfs", "bgl"], help="parser preset")

    p = sub.add_parser("parse", parents=[common], help="mine templates and parse a log file")
    p.add_argument("--log", dest="log_path")
    p.add_argument("--depth", dest="parser.depth", type=int)
    p.add_argument("--similarity", dest="parser.similarity", type=float)
    p.add_argument("--store", dest="store_path", help="parse against this frozen store instead of fitting")

    windowed = argparse.ArgumentParser(add_help=False)
    windowed.add_argument("--parsed", help="parsed messages file")
    windowed.add_argument("--store", dest="store_path", help="template store (default: next to --parsed)")
    windowed.add_argument("--session-labels", dest="session_labels")
    windowed.add_argument("--window-mode", dest="window.mode", choices=["session", "fixed_count", "fixed_time", "sliding"])
    windowed.add_argument("--window-size", dest="window.size", type=float)
    windowed.add_argument("--window-step", dest="window.step", type=float)
    windowed.add_argument("--window-unit", dest="window.unit", choices=["count", "seconds"])
    windowed.add_argument("--figures", action="store_true", help="also render PNG figures")

    p = sub.add_parser("train", parents=[common, windowed], help="learn patterns and thresholds")
    p.add_argument("--ecm", help="normal-only event count matrix")
    p.add_argument("--val-ecm", help="separate validation matrix (skips the split)")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--drop-anomalous", dest="drop_anomalous", action="store_const", const=True)
    p.add_argument("--split-ratio", dest="split_ratio", type=float)
    p.add_argument("--alpha", dest="blankets.alpha", type=float)
    p.add_argument("--max-cond", dest="blankets.max_cond", type=int)
    p.add_argument("--rule", dest="blankets.rule", choices=["AND", "OR", "none"])
    p.add_argument("--hidden", dest="mlp.hidden", type=int)
    p.add_argument("--epochs", dest="mlp.epochs", type=int)
    p.add_argument("--learning-rate", dest="mlp.learning_rate", type=float)
    p.add_argument("--optimizer", dest="mlp.optimizer", choices=["adam", "momentum"])
    p.add_argument("--margin", type=float)

    p = sub.add_parser("detect", parents=[common, windowed], help="score sequences against a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--ecm", help="event count matrix to score")
    p.add_argument("--verdicts", help="output path (default: <out>/verdicts.jsonl)")
    p.add_argument("--margin", dest="detect_margin", type=float, help="override the bundle's margin")

    p = sub.add_parser("evaluate", parents=[common], help="precision, recall and F1 of a verdict file")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--labels", required=True, help="label file or event count matrix with labels")
    p.add_argument("--figures", action="store_true")

    p = sub.add_parser("synth", parents=[common], help="write a planted-dependency synthetic dataset")
    p.add_argument("--anomaly-rate", dest="synthetic.anomaly_rate", type=float)
    p.add_argument("--magnitude", dest="synthetic.magnitude", type=float)
    return parser


_RUN_KEYS = (
    "output_dir", "seed", "jobs", "log_path", "dataset", "session_labels", "train_fraction",
    "drop_anomalous", "split_ratio", "margin",
)


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config)
    overrides = {k: v for k, v in vars(args).items() if (k in _RUN_KEYS or "." in k)}
    if args.command == "synth" and args.seed is not None:
        overrides["synthetic.seed"] = args.seed
    if overrides.get("dataset"):
        # a new preset replaces the parser section wholesale
        cfg = RunConfig.from_dict({**_strip_parser(cfg), "dataset": overrides.pop("dataset")})
    return apply_overrides(cfg, overrides)


def _strip_parser(cfg: RunConfig) -> dict:
    from logdp.config import _plain

    d = _plain(cfg.to_dict())
    d.pop("parser")
    return d


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "parse":
            result = cmd_parse(cfg, args.store_path)
        elif args.command == "train":
            result = cmd_train(cfg, args.parsed, args.store_path, args.ecm, args.val_ecm, args.figures)
            result = {k: v for k, v in result.items() if k != "per_event"}
        elif args.command == "detect":
            result = cmd_detect(
                cfg, args.bundle, args.ecm, args.parsed, args.store_path, args.verdicts, args.detect_margin, args.figures
            )
        elif args.command == "evaluate":
            result = cmd_evaluate(cfg, args.verdicts, args.labels, args.figures)
        else:
            result = cmd_synth(cfg)
    except EXPECTED_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
