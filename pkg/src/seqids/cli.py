"""Command-line entry point.

Subcommands:

* ``gen-data``  write a synthetic labeled CSV (seeded, byte-reproducible)
* ``train``     load CSV -> encode -> 80/20 split -> optional SMOTE on the
                training split -> standardize -> train; writes
                ``checkpoint.bin``, ``epochs.csv`` and ``manifest.json``
* ``eval``      load a checkpoint and a CSV (full file or the run's held-out
                split), emit the classification report (JSON + text),
                confusion and ROC CSVs, and per-instance latency
* ``ablate``    train and evaluate the ten-variant grid on one shared split,
                emit ``ablation.csv``

Config files are flat ``key = value`` text ('#' starts a comment). Keys
match the model/training fields below; command-line flags override file
values. Every artifact directory receives exactly one ``manifest.json``
capturing the command, settings, seed, dataset fingerprint, tool version
and timestamps.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from . import metrics as M
from . import train as TR
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, InputError, SeqidsError
from .model import Model, ModelConfig, build_model, table3_grid
from .tensor import Tensor, set_default_dtype

MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TR.TrainConfig)}


# ---------------------------------------------------------------------------
# Config files and manifests

def parse_config_file(path) -> dict[str, str]:
    """Flat key-value grammar: ``key = value`` per line, '#' comments."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _coerce(key: str, value: str, target):
    if isinstance(target, bool):
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value


def apply_config(cfg, values: dict[str, str], allowed: set[str]):
    for key, value in values.items():
        if key not in allowed:
            continue
        current = getattr(cfg, key)
        setattr(cfg, key, _coerce(key, value, current))
    cfg.validate()
    return cfg


def dataset_fingerprint(path) -> dict:
    data = Path(path).read_bytes()
    text = data.decode("utf-8", errors="replace")
    lines = [l for l in text.splitlines() if l]
    cols = len(lines[0].split(",")) if lines else 0
    return {"path": str(path), "rows": max(len(lines) - 1, 0), "columns": cols,
            "sha256": hashlib.sha256(data).hexdigest()}


def write_manifest(out_dir: Path, command: str, settings: dict,
                   seed: int, fingerprint: dict | None, started: float) -> None:
    manifest = {
        "command": command,
        "settings": settings,
        "seed": seed,
        "dataset": fingerprint,
        "tool_version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def parse_imbalance(spec: str, classes: int) -> list[float]:
    """Either 'a:b' (one majority at weight a, the rest at b, scaled so the
    majority is 1) or an explicit comma list of per-class weights."""
    if ":" in spec:
        a, b = (float(v) for v in spec.split(":", 1))
        if a <= 0 or b <= 0:
            raise ConfigError(f"imbalance ratio parts must be positive, got {spec!r}")
        return [1.0] + [b / a] * (classes - 1)
    weights = [float(v) for v in spec.split(",") if v.strip()]
    if len(weights) != classes:
        raise ConfigError(f"imbalance list has {len(weights)} entries for {classes} classes")
    return weights


# ---------------------------------------------------------------------------
# Pipeline pieces shared by train / ablate

def _prepare(dataset: D.Dataset, seed: int, fraction: float, use_smote: bool,
             smote_k: int):
    split = D.train_test_split(dataset, fraction=fraction, seed=seed, stratified=True)
    pre_counts = split.train.class_counts().tolist()
    if use_smote:
        split.train = D.smote_oversample(split.train, k_neighbors=smote_k, seed=seed)
    standardizer = D.fit_standardizer(split.train.X)
    split.train.X = standardizer.transform(split.train.X)
    post_counts = split.train.class_counts().tolist()
    return split, standardizer, pre_counts, post_counts


def _save_model_checkpoint(path, model: Model, standardizer: D.Standardizer,
                           dataset: D.Dataset, train_cfg: TR.TrainConfig,
                           fraction: float, use_smote: bool) -> None:
    arrays = {f"model.{n}": t.data for n, t in model.named_arrays().items()}
    arrays["standardizer.mean"] = standardizer.mean
    arrays["standardizer.scale"] = standardizer.scale
    meta = {
        "config": model.cfg.to_dict(),
        "class_names": dataset.encoder.class_names,
        "feature_names": dataset.feature_names,
        "train": {"epochs": train_cfg.epochs, "batch_size": train_cfg.batch_size,
                  "lr": train_cfg.lr, "seed": train_cfg.seed,
                  "fraction": fraction, "smote": use_smote},
        "tool_version": __version__,
    }
    save_checkpoint(path, arrays, meta)


def _load_model_checkpoint(path):
    arrays, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["config"])
    model = build_model(cfg, np.random.default_rng(0))
    model.load_arrays({n[len("model."):]: a for n, a in arrays.items()
                       if n.startswith("model.")})
    standardizer = D.Standardizer(mean=arrays["standardizer.mean"],
                                  scale=arrays["standardizer.scale"])
    return model, standardizer, meta


def _evaluate_to_files(model: Model, standardizer: D.Standardizer, X_raw, y,
                       class_names, out_dir: Path, repetitions: int) -> dict:
    X = D.reshape_for_model(X_raw, standardizer)
    probs = TR.predict_proba(model, X)
    pred = probs.argmax(axis=1)
    cm = M.confusion(y, pred, len(class_names), class_names=list(class_names))
    report = M.class_report(cm)
    curves = M.roc_auc(probs, y)
    loss = float(TR.cross_entropy_loss(Tensor(probs), y).data)
    timing_batch = X[: min(64, X.shape[0])]
    latency = TR.measure_inference(model, timing_batch, repetitions=repetitions)
    blob = M.report_to_dict(report, cm, curves)
    blob["loss"] = loss
    blob["inference_seconds_per_instance"] = latency
    (out_dir / "report.json").write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    (out_dir / "report.txt").write_text(M.format_report_text(report) + "\n",
                                        encoding="utf-8")
    M.confusion_to_csv(cm, out_dir / "confusion.csv")
    M.roc_to_csv(curves, out_dir / "roc.csv")
    return blob


# ---------------------------------------------------------------------------
# Subcommands

def cmd_gen_data(args) -> int:
    classes, features = args.classes, args.features
    profile = parse_imbalance(args.imbalance, classes) if args.imbalance else None
    ds = D.synth_dataset(classes=classes, features=features, per_class=args.per_class,
                         imbalance_profile=profile, seed=args.seed,
                         separation=args.separation,
                         sequence_structure=args.sequence_structure,
                         structure_strength=args.structure_strength)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        raise InputError(f"output directory does not exist: {out.parent}")
    D.save_csv(ds, out)
    manifest_path = out.with_name(out.name + ".manifest.json")
    manifest = {
        "command": "gen-data",
        "settings": {"classes": classes, "features": features,
                     "per_class": args.per_class, "imbalance": args.imbalance,
                     "separation": args.separation,
                     "sequence_structure": args.sequence_structure,
                     "structure_strength": args.structure_strength},
        "seed": args.seed,
        "dataset": dataset_fingerprint(out),
        "tool_version": __version__,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    counts = ds.class_counts()
    print(f"wrote {out} ({ds.X.shape[0]} rows, {features} features, "
          f"{classes} classes, counts {counts.tolist()})")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    set_default_dtype(args.dtype)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset, dropped = D.load_csv(args.data, label_column=args.label_column)
    if dropped:
        print(f"dropped {dropped} unparseable row(s)", file=sys.stderr)

    model_cfg = ModelConfig(input_shape=(dataset.num_features, 1),
                            num_classes=dataset.encoder.num_classes)
    train_cfg = TR.TrainConfig()
    if args.config:
        file_values = parse_config_file(args.config)
        apply_config(model_cfg, file_values, MODEL_KEYS)
        apply_config(train_cfg, file_values, TRAIN_KEYS)
    for key, value in (("epochs", args.epochs), ("batch_size", args.batch_size),
                       ("lr", args.lr), ("seed", args.seed),
                       ("validation_fraction", args.val_fraction)):
        if value is not None:
            setattr(train_cfg, key, value)
    if args.smote is not None:
        model_cfg.use_smote = args.smote
    model_cfg.input_shape = (dataset.num_features, 1)
    model_cfg.num_classes = dataset.encoder.num_classes
    model_cfg.validate()
    train_cfg.validate()

    split, standardizer, pre_counts, post_counts = _prepare(
        dataset, train_cfg.seed, args.fraction, model_cfg.use_smote, args.smote_k)
    model = build_model(model_cfg, np.random.default_rng(train_cfg.seed))
    print(f"training {model_cfg.arch_name} ({model.param_count()} parameters) "
          f"on {split.train.X.shape[0]} rows")
    model, records = TR.train(model, split, train_cfg)
    for r in records:
        print(f"  epoch {r.epoch:3d}: loss {r.train_loss:.4f} acc {r.train_accuracy:.4f} "
              f"| val loss {r.val_loss:.4f} acc {r.val_accuracy:.4f} "
              f"({r.wall_time_seconds:.1f}s)")

    TR.write_epoch_csv(records, out_dir / "epochs.csv")
    _save_model_checkpoint(out_dir / "checkpoint.bin", model, standardizer,
                           dataset, train_cfg, args.fraction, model_cfg.use_smote)
    write_manifest(
        out_dir, "train",
        {"model": model_cfg.to_dict(),
         "train": dataclasses.asdict(train_cfg),
         "fraction": args.fraction, "smote": model_cfg.use_smote,
         "smote_k": args.smote_k, "dtype": args.dtype,
         "label_column": args.label_column,
         "train_class_counts_before_smote": pre_counts,
         "train_class_counts_after_smote": post_counts},
        train_cfg.seed, dataset_fingerprint(args.data), started)
    print(f"wrote {out_dir}/checkpoint.bin, epochs.csv, manifest.json")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, standardizer, meta = _load_model_checkpoint(args.checkpoint)

    dataset, dropped = D.load_csv(args.data, label_column=args.label_column)
    if dropped:
        print(f"dropped {dropped} unparseable row(s)", file=sys.stderr)
    expected_f = model.cfg.input_shape[0]
    if dataset.num_features != expected_f:
        raise ConfigError(
            f"feature width mismatch: checkpoint expects {expected_f} features, "
            f"data has {dataset.num_features}")
    stored_names = meta["class_names"]
    if dataset.encoder.class_names != stored_names:
        raise ConfigError(
            f"class labels differ from the checkpoint's: data {dataset.encoder.class_names} "
            f"vs checkpoint {stored_names}")

    if args.holdout:
        split = D.train_test_split(dataset, fraction=meta["train"]["fraction"],
                                   seed=meta["train"]["seed"], stratified=True)
        X_raw, y = split.test.X, split.test.y
        scope = "held-out split"
    else:
        X_raw, y = dataset.X, dataset.y
        scope = "full file"

    blob = _evaluate_to_files(model, standardizer, X_raw, y, stored_names,
                              out_dir, args.repetitions)
    print(f"evaluated {scope}: accuracy {blob['accuracy']:.4f} "
          f"(informational), loss {blob['loss']:.4f}, "
          f"latency {blob['inference_seconds_per_instance']:.2e}s/instance")
    write_manifest(out_dir, "eval",
                   {"checkpoint": str(args.checkpoint), "holdout": args.holdout,
                    "repetitions": args.repetitions,
                    "label_column": args.label_column},
                   meta["train"]["seed"], dataset_fingerprint(args.data), started)
    print(f"wrote {out_dir}/report.json, report.txt, confusion.csv, roc.csv, manifest.json")
    return 0


def cmd_ablate(args) -> int:
    started = time.time()
    set_default_dtype(args.dtype)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, dropped = D.load_csv(args.data, label_column=args.label_column)
    if dropped:
        print(f"dropped {dropped} unparseable row(s)", file=sys.stderr)

    # one shared split for every case; SMOTE/standardization are per case
    base_split = D.train_test_split(dataset, fraction=args.fraction,
                                    seed=args.seed, stratified=True)
    case_seeds = [int(s.generate_state(1)[0]) % (2 ** 31)
                  for s in np.random.SeedSequence(args.seed).spawn(10)]
    rows = []
    grid = table3_grid(input_shape=(dataset.num_features, 1),
                       num_classes=dataset.encoder.num_classes)
    for (case_id, cfg), case_seed in zip(grid, case_seeds):
        try:
            cfg = dataclasses.replace(cfg, bn_momentum=args.bn_momentum)
            train_ds = base_split.train
            if cfg.use_smote:
                train_ds = D.smote_oversample(train_ds, seed=case_seed)
            standardizer = D.fit_standardizer(train_ds.X)
            fit_split = D.SplitPair(
                train=D.Dataset(X=standardizer.transform(train_ds.X), y=train_ds.y,
                                encoder=train_ds.encoder,
                                feature_names=train_ds.feature_names),
                test=base_split.test, fraction=args.fraction)
            train_cfg = TR.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                                       lr=args.lr, seed=case_seed)
            model = build_model(cfg, np.random.default_rng(case_seed))
            model, _ = TR.train(model, fit_split, train_cfg)
            X_test = D.reshape_for_model(base_split.test.X, standardizer)
            probs = TR.predict_proba(model, X_test)
            pred = probs.argmax(axis=1)
            cm = M.confusion(base_split.test.y, pred, dataset.encoder.num_classes,
                             class_names=dataset.encoder.class_names)
            report = M.class_report(cm)
            loss = float(TR.cross_entropy_loss(Tensor(probs), base_split.test.y).data)
            latency = TR.measure_inference(
                model, X_test[: min(64, X_test.shape[0])], repetitions=10)
            rows.append({
                "case": case_id, "model": cfg.arch_name,
                "heads": cfg.num_heads if cfg.use_mha else "",
                "dropout": cfg.dropout_rate, "smote": cfg.use_smote,
                "dense_layers": len(cfg.dense_units) + 1,
                "accuracy": f"{report.accuracy:.6f}", "loss": f"{loss:.6f}",
                "fpr": f"{report.macro_fpr:.6f}", "inf_time": f"{latency:.3e}",
                "min_class_recall": f"{report.recall.min():.6f}", "error": ""})
            print(f"case #{case_id} {cfg.arch_name}: accuracy {report.accuracy:.4f}")
        except Exception as exc:  # keep going; the row records the failure
            rows.append({"case": case_id, "model": cfg.arch_name, "heads": "",
                         "dropout": cfg.dropout_rate, "smote": cfg.use_smote,
                         "dense_layers": len(cfg.dense_units) + 1, "accuracy": "",
                         "loss": "", "fpr": "", "inf_time": "",
                         "min_class_recall": "", "error": str(exc)})
            print(f"case #{case_id} failed: {exc}", file=sys.stderr)

    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    write_manifest(out_dir, "ablate",
                   {"epochs": args.epochs, "batch_size": args.batch_size,
                    "lr": args.lr, "fraction": args.fraction,
                    "bn_momentum": args.bn_momentum, "dtype": args.dtype,
                    "label_column": args.label_column},
                   args.seed, dataset_fingerprint(args.data), started)
    print(f"wrote {out_dir}/ablation.csv, manifest.json")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqids",
        description="Sequence-model intrusion detection toolkit")
    parser.add_argument("--version", action="version", version=f"seqids {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic labeled CSV")
    g.add_argument("--classes", type=int, default=6)
    g.add_argument("--features", type=int, default=60)
    g.add_argument("--per-class", type=int, default=500)
    g.add_argument("--imbalance", default=None,
                   help="'a:b' ratio (majority:rest) or per-class comma list")
    g.add_argument("--separation", type=float, default=5.0,
                   help="nearest-centroid margin in noise-sigma units")
    g.add_argument("--sequence-structure", action=argparse.BooleanOptionalAction,
                   default=True)
    g.add_argument("--structure-strength", type=float, default=0.75)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a labeled CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--label-column", default="label")
    t.add_argument("--config", default=None, help="flat key = value config file")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--val-fraction", type=float, default=None)
    t.add_argument("--fraction", type=float, default=0.8,
                   help="train fraction of the 80/20-style split")
    t.add_argument("--smote", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--smote-k", type=int, default=5)
    t.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a labeled CSV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--label-column", default="label")
    e.add_argument("--holdout", action="store_true",
                   help="evaluate only the run's held-out split of --data")
    e.add_argument("--repetitions", type=int, default=30)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate the ten-variant grid")
    a.add_argument("--data", required=True)
    a.add_argument("--label-column", default="label")
    a.add_argument("--epochs", type=int, default=15)
    a.add_argument("--batch-size", type=int, default=128)
    a.add_argument("--lr", type=float, default=1e-3)
    a.add_argument("--fraction", type=float, default=0.8)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--bn-momentum", type=float, default=0.99)
    a.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    a.add_argument("--out-dir", required=True)
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SeqidsError as exc:
        stage = args.command if hasattr(args, "command") else "seqids"
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
