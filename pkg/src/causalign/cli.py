"""Command line surface: corruption-benchmark generation, training,
evaluation, and effect reports.

Exit codes: 2 bad flags or config, 3 I/O failures, 4 malformed files or
model/data shape mismatches, 5 training divergence. Dataset references are
either a ``.manifest.json`` path (tensor-file dataset) or an
``images.idx:labels.idx`` pair. MCL_THREADS (default 1) caps internal worker
parallelism; results are independent of it.
"""

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data as data_mod
from .checkpoint import Checkpoint
from .errors import ContractViolation, FormatError, TrainingDiverged
from .imgops import get_factor
from .trainer import TrainConfig, TrainedModel, analyze_batch, evaluate, metrics_to_csv_rows, train


class BadArgs(Exception):
    pass


def load_dataset_ref(ref: str) -> data_mod.Dataset:
    if ref.endswith(".json"):
        return data_mod.load_dataset(ref)
    if ":" in ref:
        images, labels = ref.split(":", 1)
        return data_mod.load_idx(images, labels)
    raise BadArgs(f"dataset reference must be a .manifest.json path or images.idx:labels.idx pair, got {ref!r}")


def cmd_gen_corrupt(args) -> int:
    if not (1 <= args.severity <= 5):
        raise BadArgs(f"--severity must be in 1..5, got {args.severity}")
    try:
        get_factor(args.factor)  # validate the id before loading anything
    except ContractViolation as e:
        raise BadArgs(str(e)) from None
    dataset = load_dataset_ref(args.input)
    corrupted = data_mod.make_corrupted(dataset, data_mod.CorruptionSpec(args.factor, args.severity, args.seed))
    manifest = data_mod.save_dataset(corrupted, args.out)
    print(manifest)
    return 0


_CONFIG_KEYS = {f.name for f in fields(TrainConfig)}
_REQUIRED_KEYS = {"seed", "source_train", "source_test"}


def parse_train_config(path) -> TrainConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid config JSON ({e})") from None
    if not isinstance(raw, dict):
        raise BadArgs(f"{path}: config must be a JSON object")
    unknown = sorted(set(raw) - _CONFIG_KEYS)
    if unknown:
        raise BadArgs(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(_REQUIRED_KEYS - set(raw))
    if missing:
        raise BadArgs(f"missing required config keys: {', '.join(missing)}")
    cfg = TrainConfig(**raw)
    try:
        cfg.validate()
    except ContractViolation as e:
        raise BadArgs(str(e)) from None
    return cfg


def cmd_train(args) -> int:
    cfg = parse_train_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source = load_dataset_ref(cfg.source_train)
    ckpt, metrics = train(cfg, source)
    ckpt_path = out_dir / "checkpoint.mcl"
    ckpt.save(ckpt_path)
    (out_dir / "metrics.csv").write_text("\n".join(metrics_to_csv_rows(metrics)) + "\n")
    (out_dir / "resolved-config.json").write_text(json.dumps(ckpt.config, indent=2, sort_keys=True) + "\n")
    print(ckpt_path)
    return 0


def _append_metrics(path, rows):
    exists = Path(path).exists()
    lines = list(metrics_to_csv_rows(rows))
    with open(path, "a") as f:
        if not exists:
            f.write(lines[0] + "\n")
        for line in lines[1:]:
            f.write(line + "\n")


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    trained = TrainedModel.from_checkpoint(ckpt)
    metrics_path = args.metrics or str(Path(args.checkpoint).parent / "metrics.csv")
    rows = []
    for ref in args.dataset:
        dataset = load_dataset_ref(ref)
        rows.append(evaluate(trained, dataset))
    _append_metrics(metrics_path, rows)
    width = max(len(r.split) for r in rows)
    for r in rows:
        print(f"{r.split:<{width}}  {r.accuracy:8.4f}")
    return 0


def cmd_effects(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    trained = TrainedModel.from_checkpoint(ckpt)
    dataset = load_dataset_ref(args.dataset)
    n = len(dataset)
    if args.limit is not None:
        if args.limit < 1:
            raise BadArgs(f"--limit must be positive, got {args.limit}")
        n = min(n, args.limit)
    images, labels = dataset.images[:n], dataset.labels[:n]
    preds = []
    omegas = []
    norms = []
    chunk = 256
    for start in range(0, n, chunk):
        p, o, e = analyze_batch(trained, images[start : start + chunk])
        preds.append(p)
        omegas.append(o)
        norms.append(e)
    preds = np.concatenate(preds)
    omegas = np.concatenate(omegas)
    norms = np.concatenate(norms)
    factor_ids = [f.id for f in trained.catalog]
    mean_omega = omegas.mean(axis=0)
    out_prefix = Path(args.out) if args.out else Path(args.dataset).with_suffix("").with_suffix("")
    report = {
        "dataset": dataset.name,
        "checkpoint": str(args.checkpoint),
        "factors": factor_ids,
        "count": int(n),
        "mean_omega": [float(v) for v in mean_omega],
        "records": [
            {
                "sample_id": int(i),
                "true_label": int(labels[i]),
                "predicted_label": int(preds[i]),
                "omega": [float(v) for v in omegas[i]],
                "effect_l1": [float(v) for v in norms[i]],
            }
            for i in range(n)
        ],
    }
    json_path = Path(str(out_prefix) + ".effects.json")
    csv_path = Path(str(out_prefix) + ".effects.csv")
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "true_label", "predicted_label"]
                        + [f"omega_{fid}" for fid in factor_ids]
                        + [f"effect_l1_{fid}" for fid in factor_ids])
        for rec in report["records"]:
            writer.writerow([rec["sample_id"], rec["true_label"], rec["predicted_label"]]
                            + [f"{v:.6f}" for v in rec["omega"]]
                            + [f"{v:.6f}" for v in rec["effect_l1"]])
    print(json_path)
    print(csv_path)
    print("mean_omega " + " ".join(f"{fid}={v:.4f}" for fid, v in zip(factor_ids, report["mean_omega"])))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-corrupt", help="generate a corrupted target dataset")
    gen.add_argument("--input", required=True, help="source dataset reference")
    gen.add_argument("--factor", required=True, help="variant factor id, e.g. NoiseGaussian")
    gen.add_argument("--severity", required=True, type=int, help="severity level 1..5")
    gen.add_argument("--seed", required=True, type=int)
    gen.add_argument("--out", required=True, help="output path prefix")
    gen.set_defaults(func=cmd_gen_corrupt)

    tr = sub.add_parser("train", help="train a model from a JSON config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out-dir", required=True)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on datasets")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True, nargs="+")
    ev.add_argument("--metrics", default=None, help="metrics CSV to append (default: next to checkpoint)")
    ev.set_defaults(func=cmd_eval)

    ef = sub.add_parser("effects", help="report per-sample mapping weights and effect norms")
    ef.add_argument("--checkpoint", required=True)
    ef.add_argument("--dataset", required=True)
    ef.add_argument("--limit", type=int, default=None)
    ef.add_argument("--out", default=None, help="output path prefix (default: derived from dataset)")
    ef.set_defaults(func=cmd_effects)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except BadArgs as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except (FormatError, ContractViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def entry():
    raise SystemExit(main())
