"""Command-line entry point; one subcommand per pipeline stage.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure. Every run
writes a RunManifest next to its outputs so artifacts stay traceable to the
exact inputs and seeds that produced them.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from labelqc import __version__
from labelqc.data import LabelType, emit, ingest, sample_downstream
from labelqc.errors import DataError, NumericError
from labelqc.features import featurize_batch
from labelqc.geo import ClusterIndex, Infrastructure
from labelqc.labelmodel import fit, predict_soft
from labelqc.lf import LFConfig, analyze, apply_all
from labelqc.model import ModelBundle
from labelqc.pipeline import (
    PipelineConfig,
    StageError,
    ablate_lf,
    baseline_logreg,
    evaluate,
    feature_importance,
    featurize_against_index,
    finetune_run,
    pretrain_run,
)
from labelqc.synth import SynthConfig, generate, make_expert_set


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    inputs: list[Path], outputs: list[Path], seed, started: float,
                    extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config_hash": hashlib.sha256(
            json.dumps({k: str(v) for k, v in sorted(vars(args).items())}).encode()
        ).hexdigest(),
        "input_hashes": {str(p): _sha256(p) for p in inputs if p and p.exists()},
        "outputs": {str(p): _sha256(p) for p in outputs if p.exists()},
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, default=0) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("LABELQC_SEED")
    return int(env) if env else default


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None or os.environ.get("LABELQC_SEED"):
        cfg = dataclasses.replace(cfg, seed=_seed(args, cfg.seed))
    return cfg


def _lf_config(args) -> LFConfig:
    return LFConfig.from_file(args.lf_config) if getattr(args, "lf_config", None) else LFConfig()


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    started = time.time()
    out = _out_dir(args)
    cfg = SynthConfig.from_file(args.config) if args.config else SynthConfig()
    if args.n is not None:
        cfg = dataclasses.replace(cfg, n_labels=args.n)
    if args.seed is not None or os.environ.get("LABELQC_SEED"):
        cfg = dataclasses.replace(cfg, seed=_seed(args, cfg.seed))
    labels, infra, truth = generate(cfg)
    fmt = args.format
    labels_path = out / f"labels.{fmt}"
    emit(labels, labels_path, fmt)
    infra_path = out / "infra.jsonl"
    infra.to_jsonl(infra_path)
    truth_path = out / "truth.jsonl"
    truth.save(truth_path)
    outputs = [labels_path, infra_path, truth_path]
    if args.expert_fraction:
        expert = make_expert_set(labels, truth, args.expert_fraction, cfg.seed)
        expert_path = out / f"expert.{fmt}"
        emit(expert, expert_path, fmt)
        outputs.append(expert_path)
    (out / "synth_config.json").write_text(cfg.to_json(), encoding="utf-8")
    outputs.append(out / "synth_config.json")
    _write_manifest(out, "synth", args, [], outputs, cfg.seed, started)
    print(f"wrote {len(labels)} labels to {labels_path}")
    return 0


def cmd_annotate(args) -> int:
    started = time.time()
    out = _out_dir(args)
    labels = ingest(args.labels)
    infra = Infrastructure.from_jsonl(args.infra)
    lf_cfg = _lf_config(args)
    feats, _ = featurize_batch(labels, infra)
    votes = apply_all(feats, lf_cfg, ids=[lb.id for lb in labels])
    params = fit(votes, class_balance=args.class_balance)
    soft = predict_soft(votes, params)
    annotated = out / ("annotated.jsonl" if args.labels.endswith(".jsonl") else "annotated.csv")
    # Soft labels ride along as extra columns on the original rows.
    if annotated.suffix == ".csv":
        import csv as _csv

        with open(args.labels, newline="", encoding="utf-8") as fin, open(
            annotated, "w", newline="", encoding="utf-8"
        ) as fout:
            reader = _csv.reader(fin)
            writer = _csv.writer(fout)
            header = next(reader)
            writer.writerow(header + ["p_correct", "covered"])
            for row, s in zip(reader, soft):
                writer.writerow(row + [repr(s.p_correct), str(s.covered).lower()])
    else:
        with open(args.labels, encoding="utf-8") as fin, open(annotated, "w", encoding="utf-8") as fout:
            rows = [line for line in fin if line.strip()]
            for line, s in zip(rows, soft):
                rec = json.loads(line)
                rec["p_correct"] = s.p_correct
                rec["covered"] = s.covered
                fout.write(json.dumps(rec) + "\n")
    params_path = out / "labelmodel.json"
    params_path.write_text(params.to_json(), encoding="utf-8")
    _write_manifest(out, "annotate", args, [Path(args.labels), Path(args.infra)],
                    [annotated, params_path], 0, started)
    print(f"annotated {len(labels)} labels -> {annotated}")
    return 0


def cmd_lf_report(args) -> int:
    started = time.time()
    labels = ingest(args.labels)
    infra = Infrastructure.from_jsonl(args.infra)
    feats, _ = featurize_batch(labels, infra)
    stats = analyze(apply_all(feats, _lf_config(args)))
    if args.json:
        print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    else:
        print(stats.as_table())
    if args.out:
        out = _out_dir(args)
        report_path = out / "lf_report.json"
        report_path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        _write_manifest(out, "lf-report", args, [Path(args.labels), Path(args.infra)],
                        [report_path], 0, started)
    return 0


def cmd_pretrain(args) -> int:
    started = time.time()
    out = _out_dir(args)
    raw = ingest(args.labels)
    infra = Infrastructure.from_jsonl(args.infra)
    cfg = _pipeline_config(args)
    result = pretrain_run(raw, infra, cfg)
    bundle_path = out / "bundle.ftb"
    result.bundle.save(bundle_path)
    clusters_path = out / "clusters.bin"
    result.index.save(clusters_path)
    lm_path = out / "labelmodel.json"
    lm_path.write_text(result.label_model.to_json(), encoding="utf-8")
    lf_path = out / "lf_report.json"
    lf_path.write_text(json.dumps(result.lf_stats.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    hist_path = out / "history.json"
    hist_path.write_text(json.dumps({
        "train_loss": result.history.train_loss,
        "val_loss": result.history.val_loss,
        "best_epoch": result.history.best_epoch,
        "n_raw": result.n_raw,
        "n_covered": result.n_covered,
        "split_warnings": list(result.split_warnings),
    }, indent=2), encoding="utf-8")
    _write_manifest(out, "pretrain", args, [Path(args.labels), Path(args.infra)],
                    [bundle_path, clusters_path, lm_path, lf_path, hist_path],
                    cfg.seed, started)
    print(f"pretrained bundle -> {bundle_path} ({bundle_path.stat().st_size} bytes)")
    return 0


def cmd_finetune(args) -> int:
    started = time.time()
    out = _out_dir(args)
    bundle = ModelBundle.load(args.bundle)
    expert = ingest(args.expert)
    infra = Infrastructure.from_jsonl(args.infra)
    index = ClusterIndex.load(args.clusters)
    cfg = _pipeline_config(args)
    result = finetune_run(bundle, expert, infra, index, args.k_per_type, cfg)
    bundle_path = out / "bundle_finetuned.ftb"
    result.bundle.save(bundle_path)
    sample_path = out / "finetune_sample.json"
    sample_path.write_text(json.dumps(list(result.sample_ids), indent=2), encoding="utf-8")
    _write_manifest(out, "finetune", args,
                    [Path(args.bundle), Path(args.expert), Path(args.infra), Path(args.clusters)],
                    [bundle_path, sample_path], cfg.seed, started)
    print(f"finetuned bundle -> {bundle_path}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    out = _out_dir(args)
    bundle = ModelBundle.load(args.bundle)
    test = ingest(args.test)
    infra = Infrastructure.from_jsonl(args.infra)
    index = ClusterIndex.load(args.clusters)
    report = evaluate(bundle, test, infra, index, threshold=args.threshold)
    report_path = out / "report.json"
    report_path.write_text(report.to_json(deterministic=True), encoding="utf-8")
    if args.json:
        print(report.to_json(deterministic=True))
    else:
        print(report.as_table())
    _write_manifest(out, "evaluate", args,
                    [Path(args.bundle), Path(args.test), Path(args.infra), Path(args.clusters)],
                    [report_path], 0, started, extra={"runtime_s": report.runtime_s})
    return 0


def cmd_baseline(args) -> int:
    started = time.time()
    out = _out_dir(args)
    train_labels = ingest(args.train)
    test = ingest(args.test)
    infra = Infrastructure.from_jsonl(args.infra)
    index = ClusterIndex.load(args.clusters)
    report = baseline_logreg(train_labels, test, infra, index, threshold=args.threshold)
    report_path = out / "baseline_report.json"
    report_path.write_text(report.to_json(deterministic=True), encoding="utf-8")
    print(report.as_table())
    _write_manifest(out, "baseline", args,
                    [Path(args.train), Path(args.test), Path(args.infra), Path(args.clusters)],
                    [report_path], 0, started)
    return 0


def cmd_ablate(args) -> int:
    started = time.time()
    out = _out_dir(args)
    raw = ingest(args.raw)
    expert = ingest(args.expert)
    test = ingest(args.test)
    infra = Infrastructure.from_jsonl(args.infra)
    cfg = _pipeline_config(args)
    result = ablate_lf(raw, expert, test, args.drop, cfg, infra, k_per_type=args.k_per_type)
    report_path = out / "ablation.json"
    report_path.write_text(json.dumps({
        "dropped": result.dropped,
        "full_registry": list(result.full_registry),
        "ablated_registry": list(result.ablated_registry),
        "full": result.full.to_dict(),
        "ablated": result.ablated.to_dict(),
    }, indent=2, sort_keys=True), encoding="utf-8")
    print(f"full F1={result.full.f1:.3f}  without {result.dropped}: F1={result.ablated.f1:.3f}")
    _write_manifest(out, "ablate", args,
                    [Path(args.raw), Path(args.expert), Path(args.test), Path(args.infra)],
                    [report_path], cfg.seed, started)
    return 0


def cmd_importance(args) -> int:
    started = time.time()
    out = _out_dir(args)
    bundle = ModelBundle.load(args.bundle)
    labels = ingest(args.labels)
    infra = Infrastructure.from_jsonl(args.infra)
    index = ClusterIndex.load(args.clusters)
    feats = featurize_against_index(labels, infra, index)
    report = feature_importance(bundle, feats)
    report_path = out / "importance.json"
    report_path.write_text(report.to_json(), encoding="utf-8")
    print(report.as_table())
    _write_manifest(out, "importance", args,
                    [Path(args.bundle), Path(args.labels), Path(args.infra), Path(args.clusters)],
                    [report_path], 0, started)
    return 0


def cmd_export_model(args) -> int:
    started = time.time()
    out = _out_dir(args)
    bundle = ModelBundle.load(args.bundle)  # validates magic/version/layout
    data = bundle.save_bytes()
    dest = out / (args.name or Path(args.bundle).name)
    dest.write_bytes(data)
    meta_path = out / "model_meta.json"
    meta_path.write_text(json.dumps({
        "version": bundle.version,
        "size_bytes": len(data),
        "schema": bundle.schema.to_dict(),
        "n_layers": bundle.n_layers,
        "n_heads": bundle.n_heads,
    }, indent=2, sort_keys=True), encoding="utf-8")
    print(f"exported {dest} ({len(data)} bytes)")
    _write_manifest(out, "export-model", args, [Path(args.bundle)], [dest, meta_path], 0, started)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from labelqc.service import create_app, load_state

    started = time.time()
    state = load_state(args.bundle, args.infra, args.clusters,
                       threshold=args.threshold, feedback_path=args.feedback_log)
    out = Path(args.feedback_log).parent
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, "serve", args,
                    [Path(args.bundle), Path(args.infra), Path(args.clusters)], [],
                    0, started)
    app = create_app(state)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="labelqc", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", help="pipeline config JSON")

    sp = sub.add_parser("synth", help="generate a synthetic city + labels")
    sp.add_argument("--config", help="synth config JSON")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    sp.add_argument("--expert-fraction", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("annotate", help="attach weak-supervision soft labels")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--infra", required=True)
    sp.add_argument("--lf-config")
    sp.add_argument("--class-balance", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_annotate)

    sp = sub.add_parser("lf-report", help="coverage/overlap/conflict analysis")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--infra", required=True)
    sp.add_argument("--lf-config")
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_lf_report)

    sp = sub.add_parser("pretrain", help="weak supervision + from-scratch pretraining")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--infra", required=True)
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("finetune", help="fine-tune a bundle on expert labels")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--expert", required=True)
    sp.add_argument("--infra", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--k-per-type", type=int, default=40)
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_finetune)

    sp = sub.add_parser("evaluate", help="score a bundle against expert verdicts")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--infra", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--threshold", type=float, default=float(os.environ.get("LABELQC_THRESHOLD", 0.5)))
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("baseline", help="logistic-regression baseline")
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--infra", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_baseline)

    sp = sub.add_parser("ablate", help="paired run with one LF removed")
    sp.add_argument("--raw", required=True)
    sp.add_argument("--expert", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--infra", required=True)
    sp.add_argument("--drop", required=True)
    sp.add_argument("--k-per-type", type=int, default=40)
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("importance", help="attention-based feature importance")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--infra", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_importance)

    sp = sub.add_parser("export-model", help="verify and re-emit a bundle")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--name")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_export_model)

    sp = sub.add_parser("serve", help="run the inference service")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--infra", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--threshold", type=float, default=float(os.environ.get("LABELQC_THRESHOLD", 0.5)))
    sp.add_argument("--port", type=int, default=8080)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--feedback-log", default="decisions.jsonl")
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as e:
        category = "numeric" if isinstance(e.cause, NumericError) else "data"
        print(f"error={category} stage={e.stage} {e.cause}", file=sys.stderr)
        return 4 if category == "numeric" else 3
    except NumericError as e:
        print(f"error=numeric {e}", file=sys.stderr)
        return 4
    except (DataError, FileNotFoundError) as e:
        print(f"error=data {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
