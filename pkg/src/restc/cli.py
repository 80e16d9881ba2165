"""Command line entry point: ``restc {preprocess,train,evaluate,sweep,export-embeddings}``.

Settings resolve as built-in defaults < ``--config`` file < explicit flags,
and the resolved settings are written to ``config.resolved`` in the output
directory of every command.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""
import argparse
import logging
import sys
from dataclasses import fields

from . import pipeline
from .errors import (CheckpointError, ConfigError, ContractError, DataFormatError,
                     EmptyDatasetError, TrainingDivergenceError)
from .trainer import TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("restc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_HELP = {
    "epochs": "maximum training epochs",
    "batch_size": "sessions per batch",
    "dim": "embedding width D",
    "max_len": "cap on the session length L",
    "eta1": "contrastive-loss weight",
    "eta2": "L2 regularisation constant",
    "tau": "contrastive temperature",
    "lr": "Adam learning rate",
    "scheduler": "none | step:STEP[:GAMMA] | cosine:T_MAX[:LR_MIN]",
    "strategy": "negative sampling: spatial_only, single_align, multi_align, self_multi_align, mixed_noise",
    "include_positive": "put the positive pair in the InfoNCE denominator",
    "categorical_loss": "use categorical cross-entropy instead of per-item BCE",
    "no_sestrans": "ablation: zero the temporal view and drop the contrastive loss",
    "no_cfg": "ablation: zero the CFG rows",
    "no_cont": "ablation: drop the contrastive loss",
    "no_pe_g": "ablation: zero the graph-side position table",
    "no_pe_s": "ablation: zero the sequence-side position table",
    "mgat_layers": "MGAT layers (1-4)",
    "cfg_layers": "CFG propagation layers (1-4)",
    "sestrans_layers": "transformer blocks in the temporal encoder",
    "heads": "attention heads",
    "dropout": "dropout rate",
    "patience": "early-stopping patience in epochs",
    "val_fraction": "share of training examples held out for validation",
    "cfg_refresh": "recompute CFG embeddings every k steps",
}


def _add_shared(p):
    p.add_argument("--config", metavar="PATH", help="key = value settings file")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--out", metavar="DIR", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_train_flags(p):
    g = p.add_argument_group("training options")
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = type(f.default)
        if kind is bool:
            g.add_argument(flag, dest=f.name, action="store_true", default=None, help=_HELP.get(f.name))
        else:
            g.add_argument(flag, dest=f.name, type=kind, default=None, metavar=f.name.upper(),
                           help=f"{_HELP.get(f.name, '')} (default {f.default})")


def _cutoffs(text):
    try:
        vals = tuple(sorted({int(v) for v in text.split(",") if v.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"cutoffs must be comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("cutoffs must be positive")
    return vals


def build_parser():
    parser = _Parser(prog="restc", description="Spatio-temporal contrastive session recommender.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="raw click log -> dataset directory")
    p.add_argument("raw", help="CSV with session_id,item_id,timestamp rows")
    p.add_argument("--test-window-days", type=float, default=None, help="test window length (default 7)")
    p.add_argument("--min-item-count", type=int, default=None, help="drop rarer items (default 5)")
    _add_shared(p)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("dataset")
    _add_shared(p)
    _add_train_flags(p)

    p = sub.add_parser("evaluate", help="HR/MRR of a checkpoint, overall and per length group")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cutoffs", type=_cutoffs, default=None, help="comma-separated K values (default 10,20)")
    p.add_argument("--split", choices=["test", "train"], default=None)
    _add_shared(p)

    p = sub.add_parser("sweep", help="train every configuration of a grid")
    p.add_argument("dataset")
    p.add_argument("--grid", required=True, help='e.g. "tau=0.1,0.5;eta1=0,0.01"')
    p.add_argument("--workers", type=int, default=None, help="parallel worker processes (default 1)")
    _add_shared(p)
    _add_train_flags(p)

    p = sub.add_parser("export-embeddings", help="write fused session embeddings as CSV")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["test", "train"], default=None)
    _add_shared(p)
    return parser


# command-specific keys and their defaults; training keys come from TrainConfig
_EXTRA = {
    "preprocess": {"test_window_days": 7.0, "min_item_count": 5},
    "train": {},
    "evaluate": {"cutoffs": "10,20", "split": "test"},
    "sweep": {"workers": 1},
    "export-embeddings": {"split": "test"},
}
_EXTRA_TYPES = {"test_window_days": float, "min_item_count": int, "cutoffs": str, "split": str, "workers": int}


def resolve(args):
    """Merge defaults, the config file and explicit flags into one dict."""
    extra = _EXTRA[args.command]
    uses_train = args.command in ("train", "sweep")
    values = dict(extra)
    values["seed"] = 0
    if uses_train:
        values.update(TrainConfig().to_dict())
    if args.config:
        types = {**pipeline.TRAIN_TYPES, **_EXTRA_TYPES}
        from_file = pipeline.read_config_file(args.config, types)
        allowed = set(values)
        for key, value in from_file.items():
            if key in allowed:
                values[key] = value
            else:
                log.warning("%s: ignoring %r (not used by %s)", args.config, key, args.command)
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = ",".join(map(str, flag)) if key == "cutoffs" else flag
    return values


def _run(args):
    values = resolve(args)
    out = pipeline.ensure_dir(args.out)
    record = {"command": args.command, **values}
    for key in ("raw", "dataset", "checkpoint", "grid"):
        if getattr(args, key, None) is not None:
            record[key] = getattr(args, key)
    pipeline.write_config_file(out / "config.resolved", record)

    if args.command == "preprocess":
        stats = pipeline.preprocess(args.raw, out, values["test_window_days"], values["min_item_count"])
        print("\t".join(stats))
        print("\t".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in stats.values()))
    elif args.command == "train":
        config = pipeline.train_config_from(values)
        _, summary = pipeline.train(args.dataset, config, out)
        for k, v in summary.items():
            print(f"{k}\t{v}")
    elif args.command == "evaluate":
        report, baseline = pipeline.evaluate(args.dataset, args.checkpoint, out,
                                             _cutoffs(values["cutoffs"]), values["split"])
        print(report.table())
        print(f"popularity baseline HR@{max(report.cutoffs)} = {baseline.value('HR', max(report.cutoffs)):.4f}")
    elif args.command == "sweep":
        base = pipeline.train_config_from(values)
        grid = pipeline.parse_grid(args.grid)
        workers = values["workers"]
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        rows = pipeline.sweep(args.dataset, base, grid, out, workers)
        for row in rows:
            desc = " ".join(f"{k}={row[k]}" for k in grid)
            print(f"{row['run']}\t{desc}\tval_hr20={row['val_hr20']:.4f}\tval_mrr20={row['val_mrr20']:.4f}")
    elif args.command == "export-embeddings":
        path = pipeline.export(args.dataset, args.checkpoint, out, values["split"])
        print(path)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (UsageError, ConfigError, argparse.ArgumentTypeError) as exc:
        print(f"restc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergenceError as exc:
        print(f"restc {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EmptyDatasetError as exc:
        print(f"restc {args.command}: {exc}; check the input log, --min-item-count and --test-window-days",
              file=sys.stderr)
        return EXIT_DATA
    except (OSError, DataFormatError, CheckpointError, ContractError) as exc:
        print(f"restc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
