"""Command-line interface: generate, train, evaluate, ablate, gradcheck, search.

Every run is fully determined by its flags, config file, seed, and input
files.  Outputs are reproducible byte for byte; wall-clock timestamps are
confined to the run manifest (and the timing fields of training logs).
Config files use ``key=value`` lines with the same names as the long flags
(dashes or underscores); explicit flags always win over file values.

Exit codes: 0 success, 2 usage or configuration error, 3 data error
(missing or malformed files, failed validation), 4 numeric error
(divergence, failed gradient check).
"""

import argparse
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import ablation, gradcheck, model, training
from .checkpoint import (CheckpointError, load_checkpoint, model_config_to_dict,
                         save_checkpoint)
from .data import (ChannelIndicatorScheme, DatasetFormatError, ValidationError,
                   load_dataset, normalize_times, save_dataset)
from .datagen import (ToyConfig, load_regular_table, make_toy_dataset,
                      asynchronize_table, induce_missing_table)
from .autodiff import NumericError
from .metrics import MetricError
from .model import ClassifierConfig, EncoderConfig, ModelConfig
from .training import SearchSpace, TrainConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    """Bad flags, bad config keys, or inconsistent options."""


def _bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _fractions(text):
    parts = [float(p) for p in str(text).split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return tuple(parts)


def _optional_int(text):
    lowered = str(text).strip().lower()
    if lowered in ("none", ""):
        return None
    return int(text)


def _utc_now():
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _load_config_file(path, parser):
    """Parse ``key=value`` lines into parser defaults; unknown keys fail."""
    known = {}
    for action in parser._actions:
        if action.dest not in ("help", "config"):
            known[action.dest] = action.type or str
    overrides = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read config file: {exc}") from None
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{line_no}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        dest = key.strip().replace("-", "_")
        if dest not in known:
            raise UsageError(f"{path}:{line_no}: unknown config key {key.strip()!r}")
        try:
            overrides[dest] = known[dest](value.strip())
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{line_no}: bad value for {key.strip()!r}: {exc}")
    return overrides


def _reparse_with_config(parser, args, argv):
    """Apply config-file values as subparser defaults, then re-parse the full
    command line so explicitly given flags win over the file."""
    if getattr(args, "config", None):
        sub = args.parser
        sub.set_defaults(**_load_config_file(args.config, sub))
        args = parser.parse_args(argv)
    return args


def _write_manifest(path, command, settings, outputs):
    lines = [f"command={command}", f"timestamp={_utc_now()}"]
    lines += [f"{k}={v}" for k, v in sorted(settings.items())]
    lines += [f"output={o}" for o in outputs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_records(path, header, records):
    """Structured text: '# key=value' header lines then one record per line."""
    lines = [f"# {k}={v}" for k, v in header.items()]
    for record in records:
        lines.append(" ".join(f"{k}={v}" for k, v in record.items()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _settings_from_args(args, skip=("func", "parser", "command", "config")):
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _format_float(x):
    return f"{x:.10g}" if isinstance(x, float) else str(x)


# ---------------------------------------------------------------- flags


def _add_model_flags(sub):
    sub.add_argument("--indicator", default="onehot",
                     choices=("onehot", "binary", "nominal"),
                     help="channel indicator encoding")
    sub.add_argument("--blocks", type=int, default=1,
                     help="number of residual blocks")
    sub.add_argument("--embedding-dim", type=int, default=128,
                     help="channel embedding dimension K")
    sub.add_argument("--include-time", type=_bool, default=True,
                     help="feed observation times to the encoder (true/false)")
    sub.add_argument("--time-embedding", default="absolute",
                     choices=("absolute", "delta", "sinusoidal", "none"))
    sub.add_argument("--causal", type=_bool, default=False,
                     help="use causal convolutions and pooling")
    sub.add_argument("--batch-norm", type=_bool, default=False,
                     help="mask-aware batch normalization after every convolution")
    sub.add_argument("--independent-encoders", type=_bool, default=False,
                     help="one encoder per channel instead of a shared one")
    sub.add_argument("--aggregation", default="sum", choices=("sum", "mean"))
    sub.add_argument("--loss", default="auto",
                     choices=("auto", "bce", "softmax", "sigmoid"))
    sub.add_argument("--dense-layers", type=int, default=2,
                     help="classifier dense layers before the output layer")
    sub.add_argument("--width", type=int, default=128, help="classifier width")
    sub.add_argument("--dropout", type=float, default=0.0)
    sub.add_argument("--kernel-override", type=_optional_int, default=None,
                     help="use this kernel length for every conv layer")
    sub.add_argument("--num-classes", type=_optional_int, default=None,
                     help="override the class count inferred from labels")


def _add_train_flags(sub):
    sub.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    sub.add_argument("--batch-size", type=int, default=64)
    sub.add_argument("--max-epochs", type=int, default=100)
    sub.add_argument("--patience", type=int, default=10,
                     help="early-stopping patience in epochs")
    sub.add_argument("--balanced", type=_bool, default=True,
                     help="class-balanced batches (binary tasks)")
    sub.add_argument("--normalize-values", type=_bool, default=False,
                     help="z-normalize values per channel with train statistics")
    sub.add_argument("--split", type=_fractions, default=(0.64, 0.16, 0.20),
                     help="train,val,test fractions")
    sub.add_argument("--split-seed", type=int, default=0)
    sub.add_argument("--seed", type=int, default=0)


def _model_config_from_args(args, dataset):
    num_classes = args.num_classes
    if num_classes is None:
        num_classes = max(int(max(dataset.labels(), default=1)) + 1, 2)
    scheme = ChannelIndicatorScheme(args.indicator, dataset.D)
    encoder = EncoderConfig(num_blocks=args.blocks,
                            embedding_dim=args.embedding_dim,
                            include_time=args.include_time,
                            time_embedding=args.time_embedding,
                            causal=args.causal,
                            use_batch_norm=args.batch_norm,
                            kernel_length_override=args.kernel_override)
    classifier = ClassifierConfig(num_classes=num_classes,
                                  num_dense_layers=args.dense_layers,
                                  width=args.width,
                                  dropout=args.dropout)
    return ModelConfig(scheme=scheme, encoder=encoder, classifier=classifier,
                       aggregation=args.aggregation,
                       independent_encoders=args.independent_encoders,
                       loss_kind=args.loss)


def _train_config_from_args(args, seed=None):
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                       max_epochs=args.max_epochs, patience=args.patience,
                       balanced_batching=args.balanced,
                       normalize_values=args.normalize_values,
                       seed=args.seed if seed is None else seed)


def _prepared_splits(args):
    dataset = load_dataset(args.data)
    dataset = normalize_times(dataset)
    splits = training.split_dataset(dataset, args.split, args.split_seed)
    return dataset, splits


def _metrics_record(m):
    record = {}
    for key, value in m.as_dict().items():
        record[key] = _format_float(value)
    return record


# ---------------------------------------------------------- subcommands


def cmd_generate(args, parser, argv):
    args = _reparse_with_config(parser, args, argv)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.subtype == "toy":
        config = ToyConfig(T=args.T, n=args.n, sparsity=args.sparsity,
                           seed=args.seed)
        dataset = make_toy_dataset(config, jobs=args.jobs)
    else:
        series = load_regular_table(args.input)
        if args.subtype == "asynchronize":
            dataset = asynchronize_table(series, seed=args.seed, jobs=args.jobs)
        else:
            dataset = induce_missing_table(series, args.p, seed=args.seed,
                                           jobs=args.jobs)
    save_dataset(dataset, out)
    _write_manifest(out.with_suffix(out.suffix + ".manifest"),
                    f"generate {args.subtype}", _settings_from_args(args), [out])
    print(f"wrote {len(dataset.instances)} instances to {out}")
    return EXIT_OK


def cmd_train(args, parser, argv):
    args = _reparse_with_config(parser, args, argv)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, splits = _prepared_splits(args)
    model_config = _model_config_from_args(args, dataset)
    train_config = _train_config_from_args(args)
    result = training.train(model_config, splits[0], splits[1], train_config)

    ckpt_path = out_dir / "checkpoint.json"
    save_checkpoint(ckpt_path, result.params, result.buffers, model_config,
                    time_range=dataset.time_range,
                    value_stats=result.value_stats,
                    extra={"train_config": asdict(train_config),
                           "split": list(args.split),
                           "split_seed": args.split_seed,
                           "data": str(args.data),
                           "best_epoch": result.best_epoch})

    header = {"command": "train", "seed": args.seed,
              "config": _config_summary(model_config, train_config)}
    _write_records(out_dir / "train_log.txt", header,
                   [{"epoch": r["epoch"],
                     "train_loss": _format_float(r["train_loss"]),
                     "val_metric": _format_float(r["val_metric"]),
                     "seconds": _format_float(r["seconds"])} for r in result.log])

    m = training.evaluate_model(splits[2], result.params, model_config,
                                result.buffers, result.value_stats)
    _write_records(out_dir / "metrics.txt", header, [_metrics_record(m)])
    _write_manifest(out_dir / "manifest.txt", "train", _settings_from_args(args),
                    [ckpt_path, out_dir / "train_log.txt", out_dir / "metrics.txt"])
    print(f"best epoch {result.best_epoch} val={result.best_metric:.4f} "
          f"test accuracy={m.accuracy:.4f}")
    return EXIT_OK


def _config_summary(model_config, train_config=None):
    parts = [f"blocks:{model_config.encoder.num_blocks}",
             f"K:{model_config.encoder.embedding_dim}",
             f"time:{model_config.encoder.time_embedding if model_config.encoder.include_time else 'off'}",
             f"dense:{model_config.classifier.num_dense_layers}x{model_config.classifier.width}",
             f"agg:{model_config.aggregation}",
             f"loss:{model_config.resolved_loss}"]
    if train_config is not None:
        parts += [f"lr:{train_config.learning_rate:g}",
                  f"batch:{train_config.batch_size}"]
    return ",".join(parts)


def cmd_evaluate(args, parser, argv):
    args = _reparse_with_config(parser, args, argv)
    ckpt = load_checkpoint(args.checkpoint)
    model_config = ckpt["model_config"]
    dataset = load_dataset(args.data)
    dataset = normalize_times(dataset, ckpt["time_range"])
    if args.split != "all":
        extra = ckpt["extra"]
        if "split" not in extra:
            raise UsageError("checkpoint records no split; use --split all")
        splits = training.split_dataset(dataset, tuple(extra["split"]),
                                        extra["split_seed"])
        dataset = {"train": splits[0], "val": splits[1],
                   "test": splits[2]}[args.split]
    m = training.evaluate_model(dataset, ckpt["params"], model_config,
                                ckpt["buffers"], ckpt["value_stats"])
    if args.online:
        if not model_config.encoder.causal:
            raise UsageError("--online requires a causal checkpoint")
        from .metrics import evaluate_online
        with_stats = dataset
        if ckpt["value_stats"] is not None:
            from .data import normalize_values
            with_stats = normalize_values(dataset, ckpt["value_stats"])
        m.online_accuracy = evaluate_online(with_stats.instances,
                                            ckpt["params"], model_config,
                                            ckpt["buffers"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = {"command": "evaluate", "checkpoint": args.checkpoint,
              "split": args.split, "config": _config_summary(model_config)}
    _write_records(out, header, [_metrics_record(m)])
    _write_manifest(out.with_suffix(out.suffix + ".manifest"), "evaluate",
                    _settings_from_args(args), [out])
    print(" ".join(f"{k}={v}" for k, v in _metrics_record(m).items()))
    return EXIT_OK


def cmd_ablate(args, parser, argv):
    args = _reparse_with_config(parser, args, argv)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, splits = _prepared_splits(args)
    model_config = _model_config_from_args(args, dataset)
    train_config = _train_config_from_args(args)
    header = {"command": "ablate", "seed": args.seed,
              "config": _config_summary(model_config, train_config)}
    records = []
    if args.single_channel is not None:
        result = ablation.run_single_channel(splits, args.single_channel,
                                             model_config, train_config)
        records.append(dict({"run": f"single-channel-{result.channel}"},
                            **_metrics_record(result.metrics),
                            skipped_train=result.skipped["train"],
                            skipped_test=result.skipped["test"]))
    elif args.ensemble:
        result = ablation.run_ensemble(splits, model_config, train_config,
                                       designated=args.designated)
        for member in result.members:
            records.append(dict({"run": f"single-channel-{member.channel}"},
                                **_metrics_record(member.metrics)))
        records.append(dict({"run": "ensemble"}, **_metrics_record(result.metrics),
                            skipped_test=result.skipped["test"]))
    else:
        comparison = ablation.run_variant_comparison(splits, model_config,
                                                     train_config, args.variant)
        for name, (_, _, m) in comparison.items():
            records.append(dict({"run": name}, **_metrics_record(m)))
    path = out_dir / "ablation.txt"
    _write_records(path, header, records)
    _write_manifest(out_dir / "manifest.txt", "ablate",
                    _settings_from_args(args), [path])
    for record in records:
        print(" ".join(f"{k}={v}" for k, v in record.items()))
    return EXIT_OK


def cmd_gradcheck(args, parser, argv):
    args = _reparse_with_config(parser, args, argv)
    results = gradcheck.suite(seed=args.seed, step=args.step)
    ok = True
    for name, err in results.items():
        passed = err < args.tolerance
        ok = ok and passed
        print(f"{name:28s} max_rel_err={err:.3e} "
              f"{'PASS' if passed else 'FAIL'}")
    print(f"gradcheck {'PASS' if ok else 'FAIL'} "
          f"(seed={args.seed}, step={args.step:g}, tolerance={args.tolerance:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_search(args, parser, argv):
    args = _reparse_with_config(parser, args, argv)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, splits = _prepared_splits(args)
    model_config = _model_config_from_args(args, dataset)
    train_config = _train_config_from_args(args)
    space = SearchSpace(num_trials=args.trials, repeats=args.repeats)
    result = training.random_search(space, model_config, train_config,
                                    splits[0], splits[1], splits[2],
                                    seed=args.seed, jobs=args.jobs)
    header = {"command": "search", "seed": args.seed, "trials": args.trials,
              "repeats": args.repeats}
    _write_records(out_dir / "trials.txt", header,
                   [{k: _format_float(v) for k, v in t.items()}
                    for t in result.trials])
    summary = {"best_trial": result.best_index,
               "best_config": _config_summary(result.best_model_config,
                                              result.best_train_config),
               "mean_accuracy": _format_float(result.mean_accuracy),
               "std_accuracy": _format_float(result.std_accuracy)}
    if result.mean_auroc is not None:
        summary["mean_auroc"] = _format_float(result.mean_auroc)
        summary["std_auroc"] = _format_float(result.std_auroc)
    _write_records(out_dir / "summary.txt", header, [summary])
    _write_manifest(out_dir / "manifest.txt", "search",
                    _settings_from_args(args),
                    [out_dir / "trials.txt", out_dir / "summary.txt"])
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


# -------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dcsf",
        description="Deep convolutional set functions for asynchronous "
                    "time series classification.")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("subtype", choices=("toy", "asynchronize", "missing"))
    gen.add_argument("--config", help="key=value config file")
    gen.add_argument("--T", type=int, default=20, help="toy series length")
    gen.add_argument("--n", type=int, default=4000, help="toy instance count")
    gen.add_argument("--sparsity", type=float, default=0.0)
    gen.add_argument("--p", type=float, default=0.1,
                     help="missing fraction for subtype 'missing'")
    gen.add_argument("--input", help="regular-series table (non-toy subtypes)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--jobs", type=int, default=1)
    gen.add_argument("--out", required=True, help="dataset file to write")
    gen.set_defaults(func=cmd_generate, parser=gen)

    tr = subs.add_parser("train", help="train a model and write a checkpoint")
    tr.add_argument("--config", help="key=value config file")
    tr.add_argument("--data", required=True, help="dataset file")
    tr.add_argument("--out-dir", required=True)
    _add_model_flags(tr)
    _add_train_flags(tr)
    tr.set_defaults(func=cmd_train, parser=tr)

    ev = subs.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--config", help="key=value config file")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="all",
                    choices=("all", "train", "val", "test"),
                    help="evaluate the recorded split of the data file")
    ev.add_argument("--online", action="store_true",
                    help="also report per-time-step accuracy (causal models)")
    ev.add_argument("--out", required=True, help="metrics file to write")
    ev.set_defaults(func=cmd_evaluate, parser=ev)

    ab = subs.add_parser("ablate", help="run an ablation comparison")
    ab.add_argument("--config", help="key=value config file")
    ab.add_argument("--data", required=True)
    ab.add_argument("--out-dir", required=True)
    ab.add_argument("--variant", default="no-time", choices=ablation.VARIANTS,
                    help="variant to compare against the default model")
    ab.add_argument("--single-channel", type=_optional_int, default=None,
                    help="train and evaluate on this channel only")
    ab.add_argument("--ensemble", type=_bool, default=False,
                    help="ensemble of per-channel models")
    ab.add_argument("--designated", type=int, default=1,
                    help="ensemble member whose output layer is retrained")
    _add_model_flags(ab)
    _add_train_flags(ab)
    ab.set_defaults(func=cmd_ablate, parser=ab)

    gc = subs.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--config", help="key=value config file")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--step", type=float, default=gradcheck.STEP)
    gc.add_argument("--tolerance", type=float, default=gradcheck.TOLERANCE)
    gc.set_defaults(func=cmd_gradcheck, parser=gc)

    se = subs.add_parser("search", help="random hyperparameter search")
    se.add_argument("--config", help="key=value config file")
    se.add_argument("--data", required=True)
    se.add_argument("--out-dir", required=True)
    se.add_argument("--trials", type=int, default=10)
    se.add_argument("--repeats", type=int, default=5)
    se.add_argument("--jobs", type=int, default=1)
    _add_model_flags(se)
    _add_train_flags(se)
    se.set_defaults(func=cmd_search, parser=se)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, parser, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, ValidationError, CheckpointError, MetricError,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
