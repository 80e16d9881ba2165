"""File-level pipeline steps shared by the CLI and the acceptance checks.

Each step reads and writes plain files in a directory so a run can be
resumed or inspected from the shell.
"""
import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from .dataio import (augment_all, dataset_stats, ensure_dir, filter_and_split, load_dataset,
                     parse_sessions, write_examples, write_stats)
from .evaluation import (CUTOFFS, evaluate_model, evaluate_popularity, export_embeddings)
from .graphs import CFG, build_cfg, propagation_matrix
from .errors import ConfigError, DataFormatError, EmptyDatasetError
from .trainer import LOG_COLUMNS, TrainConfig, Trainer, config_hash, load_model

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "train_log.csv"


# -- key = value config files -------------------------------------------------------

def _coerce(value, kind, key):
    if kind is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


TRAIN_TYPES = {f.name: type(f.default) for f in fields(TrainConfig)}


def parse_config_text(text, types=None):
    """``key = value`` lines; ``#`` starts a comment.  Values are typed by ``types``."""
    types = TRAIN_TYPES if types is None else types
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(value, types[key], key) if key in types else value
    return out


def read_config_file(path, types=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    return parse_config_text(text, types)


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config_file(path, values):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(values):
            fh.write(f"{key} = {format_value(values[key])}\n")


def train_config_from(values):
    """Build a :class:`TrainConfig` from the training keys of ``values``."""
    return TrainConfig.from_dict({k: v for k, v in values.items() if k in TRAIN_TYPES})


# -- preprocess ------------------------------------------------------------------------

def preprocess(raw_path, out_dir, test_window_days=7, min_item_count=5):
    """Raw click CSV -> vocab, example files, CFG triples and a stats row."""
    events = parse_sessions(raw_path)
    train, test, vocab = filter_and_split(events, test_window_days, min_item_count)
    out = ensure_dir(out_dir)
    vocab.save(out / "vocab.tsv")
    write_examples(out / "train.examples", augment_all(train))
    write_examples(out / "test.examples", augment_all(test))
    build_cfg(train, len(vocab)).save(out / "cfg.tsv")
    stats = dataset_stats(train, test, vocab)
    write_stats(out / "stats.tsv", stats)
    return stats


def load_propagation(dataset):
    path = Path(dataset.directory) / "cfg.tsv"
    if not path.is_file():
        raise FileNotFoundError(f"dataset directory {dataset.directory} is missing cfg.tsv")
    cfg = CFG.load(path)
    if cfg.n_items != dataset.n_items:
        raise DataFormatError(f"{path}: CFG covers {cfg.n_items} items, vocabulary has {dataset.n_items}")
    return propagation_matrix(cfg)


# -- train -------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])


def read_log(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def train(dataset_dir, config, out_dir, figures=True):
    """Train on ``dataset_dir`` and write checkpoint, log, summary and figure.

    Returns ``(trainer, summary)``; the summary compares the final validation
    HR@20 against the popularity baseline on the same validation split.
    """
    dataset = load_dataset(dataset_dir)
    propagation = load_propagation(dataset)
    out = ensure_dir(out_dir)
    trainer = Trainer(config, dataset.train, dataset.n_items, propagation)
    rows = trainer.fit()
    write_log(out / LOG_NAME, rows)
    trainer.save_checkpoint(out / CHECKPOINT_NAME)
    summary = {"epochs_run": trainer.epoch, "best_epoch": trainer.best["epoch"] if trainer.best else trainer.epoch,
               "final_val_hr20": rows[-1]["val_hr20"], "final_val_mrr20": rows[-1]["val_mrr20"]}
    if trainer.val_examples:
        pop = evaluate_popularity(trainer.fit_examples, trainer.val_examples, dataset.n_items)
        summary["popularity_val_hr20"] = pop.value("HR", 20)
        summary["popularity_val_mrr20"] = pop.value("MRR", 20)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        for k, v in summary.items():
            writer.writerow([k, _fmt(v)])
    if figures:
        from .plotting import plot_training_curves
        plot_training_curves(rows, out / "training_curves.png")
    return trainer, summary


# -- evaluate / export -------------------------------------------------------------------

def _split(dataset, name):
    if name not in ("train", "test"):
        raise ConfigError(f"split must be train or test, got {name!r}")
    examples = dataset.train if name == "train" else dataset.test
    if not examples:
        raise EmptyDatasetError(f"{dataset.directory}: the {name} split has no examples")
    return examples


def evaluate(dataset_dir, checkpoint, out_dir, cutoffs=CUTOFFS, split="test", figures=True):
    """Score a checkpoint; writes ``metrics.csv``, ``metrics.txt`` and the
    popularity-baseline counterparts.  Returns ``(report, baseline)``."""
    dataset = load_dataset(dataset_dir)
    propagation = load_propagation(dataset)
    model, _ = load_model(checkpoint, dataset.n_items)
    examples = _split(dataset, split)
    out = ensure_dir(out_dir)
    report, _ = evaluate_model(model, examples, propagation, model.config.max_len, cutoffs=cutoffs)
    baseline = evaluate_popularity(dataset.train, examples, dataset.n_items, cutoffs)
    report.write_csv(out / "metrics.csv")
    baseline.write_csv(out / "baseline_metrics.csv")
    text = "model\n" + report.table() + "\n\npopularity baseline\n" + baseline.table() + "\n"
    (out / "metrics.txt").write_text(text, encoding="utf-8")
    if figures:
        from .plotting import plot_length_groups
        plot_length_groups(report, out / "length_groups.png", baseline, "MRR", max(report.cutoffs))
    return report, baseline


def export(dataset_dir, checkpoint, out_dir, split="test"):
    dataset = load_dataset(dataset_dir)
    propagation = load_propagation(dataset)
    model, _ = load_model(checkpoint, dataset.n_items)
    examples = _split(dataset, split)
    path = ensure_dir(out_dir) / "embeddings.csv"
    export_embeddings(model, examples, propagation, model.config.max_len, path, dataset.vocab)
    return path


# -- sweep ---------------------------------------------------------------------------

def parse_grid(text):
    """``"tau=0.1,0.5;eta1=0,0.01"`` -> ``{"tau": [0.1, 0.5], "eta1": [0.0, 0.01]}``."""
    grid = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"grid entry {part!r}: expected key=v1,v2,...")
        key, values = (s.strip() for s in part.split("=", 1))
        key = key.replace("-", "_")
        if key not in TRAIN_TYPES:
            raise ConfigError(f"grid key {key!r} is not a training option")
        vals = [_coerce(v.strip(), TRAIN_TYPES[key], key) for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"grid key {key!r} has no values")
        grid[key] = vals
    if not grid:
        raise ConfigError("grid is empty")
    return grid


def expand_grid(base, grid):
    """Cartesian product in key order; each entry is a full config dict."""
    keys = list(grid)
    configs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        values = dict(base)
        values.update(zip(keys, combo))
        configs.append(values)
    return configs


def _run_one(args):
    dataset_dir, values = args
    dataset = load_dataset(dataset_dir)
    propagation = load_propagation(dataset)
    config = TrainConfig.from_dict(values)
    trainer = Trainer(config, dataset.train, dataset.n_items, propagation)
    rows = trainer.fit()
    return {
        "epochs_run": trainer.epoch,
        "best_epoch": trainer.best["epoch"] if trainer.best else trainer.epoch,
        "val_hr20": rows[-1]["val_hr20"],
        "val_mrr20": rows[-1]["val_mrr20"],
        "best_val_mrr20": trainer.best["val_mrr20"] if trainer.best else math.nan,
        "final_main_loss": rows[-1]["main_loss"],
        "final_cont_loss": rows[-1]["cont_loss"],
    }


SWEEP_METRICS = ["epochs_run", "best_epoch", "val_hr20", "val_mrr20", "best_val_mrr20",
                 "final_main_loss", "final_cont_loss"]


def sweep(dataset_dir, base_config, grid, out_dir, workers=1, figures=True):
    """Train every grid configuration; one results row per configuration."""
    configs = expand_grid(base_config.to_dict(), grid)
    for values in configs:
        TrainConfig.from_dict(values)   # fail fast before any training
    jobs = [(str(dataset_dir), values) for values in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    config_cols = [f.name for f in fields(TrainConfig)]
    rows = []
    for i, (values, metrics) in enumerate(zip(configs, results)):
        rows.append({"run": i, "config_hash": config_hash(values), **values, **metrics})
    out = ensure_dir(out_dir)
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["run", "config_hash"] + config_cols + SWEEP_METRICS
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(row[c]) if c in config_cols else _fmt(row[c]) for c in header])
    if figures:
        from .plotting import plot_sweep
        numeric = [k for k in grid if TRAIN_TYPES[k] in (int, float)]
        if numeric:
            plot_sweep(rows, numeric[0], out / "sweep.png", list(grid))
    return rows


def read_results(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
