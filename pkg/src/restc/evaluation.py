"""Ranking metrics (HR@K, MRR@K), session-length groups and embedding export."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

CUTOFFS = (10, 20)
# half-open length intervals (lo, hi]
LENGTH_GROUPS = (("S", 0, 5), ("M", 5, 10), ("L", 10, math.inf))


@dataclass
class RankResult:
    rank: int
    length: int


def rank_target(scores, target):
    """1-based rank of item ``target`` (1..N) in ``scores`` (item i at column i-1).

    Ties go to the lower item index.
    """
    scores = np.asarray(scores)
    n = scores.shape[-1]
    if not 1 <= target <= n:
        raise ContractError(f"target {target} outside 1..{n}")
    s = scores[target - 1]
    return 1 + int(np.sum(scores > s)) + int(np.sum(scores[:target - 1] == s))


def rank_targets(scores, targets):
    """Vectorised :func:`rank_target` over a ``[C, N]`` score matrix."""
    scores = np.asarray(scores)
    targets = np.asarray(targets)
    c, n = scores.shape
    if np.any(targets < 1) or np.any(targets > n):
        raise ContractError(f"target outside 1..{n}")
    s = scores[np.arange(c), targets - 1][:, None]
    before = np.arange(n)[None, :] < (targets - 1)[:, None]
    return 1 + (scores > s).sum(axis=1) + ((scores == s) & before).sum(axis=1)


def _hr_mrr(ranks, k):
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        return math.nan, math.nan
    hit = ranks <= k
    return float(hit.mean()), float(np.where(hit, 1.0 / ranks, 0.0).mean())


@dataclass
class MetricReport:
    cutoffs: tuple
    overall: dict                      # {("HR", 20): value, ...}
    groups: dict = field(default_factory=dict)   # {"S": {("HR", 20): value}, ...}
    counts: dict = field(default_factory=dict)   # examples per group, "all" included

    def value(self, metric, cutoff, group="all"):
        table = self.overall if group == "all" else self.groups[group]
        return table[(metric, cutoff)]

    def rows(self):
        """``(metric, cutoff, group, value)`` tuples, overall first."""
        out = []
        for k in self.cutoffs:
            for metric in ("HR", "MRR"):
                out.append((metric, k, "all", self.overall[(metric, k)]))
        for name, _, _ in LENGTH_GROUPS:
            for k in self.cutoffs:
                for metric in ("HR", "MRR"):
                    out.append((metric, k, name, self.groups[name][(metric, k)]))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "cutoff", "group", "value"])
            for metric, k, group, value in self.rows():
                writer.writerow([metric, k, group, f"{value:.6f}"])

    def table(self):
        header = ["group", "n"] + [f"{m}@{k}" for k in self.cutoffs for m in ("HR", "MRR")]
        lines = ["  ".join(f"{h:>8}" for h in header)]
        for name in ["all"] + [g[0] for g in LENGTH_GROUPS]:
            table = self.overall if name == "all" else self.groups[name]
            vals = [f"{table[(m, k)]:8.4f}" for k in self.cutoffs for m in ("HR", "MRR")]
            lines.append("  ".join([f"{name:>8}", f"{self.counts.get(name, 0):>8}"] + vals))
        return "\n".join(lines)


def compute_metrics(ranks, lengths=None, cutoffs=CUTOFFS):
    """HR@K = mean(rank <= K); MRR@K = mean(1/rank if rank <= K else 0).

    ``lengths`` (session length per example) drives the S/M/L breakdown;
    empty groups report NaN.
    """
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ContractError("cannot compute metrics over zero examples")
    cutoffs = tuple(sorted(cutoffs))
    lengths = np.zeros_like(ranks) if lengths is None else np.asarray(lengths)
    overall = {}
    for k in cutoffs:
        overall[("HR", k)], overall[("MRR", k)] = _hr_mrr(ranks, k)
    groups, counts = {}, {"all": int(ranks.size)}
    for name, lo, hi in LENGTH_GROUPS:
        sel = ranks[(lengths > lo) & (lengths <= hi)]
        counts[name] = int(sel.size)
        groups[name] = {}
        for k in cutoffs:
            groups[name][("HR", k)], groups[name][("MRR", k)] = _hr_mrr(sel, k)
    return MetricReport(cutoffs, overall, groups, counts)


def evaluate_model(model, examples, propagation, max_len, batch_size=512, cutoffs=CUTOFFS):
    """Rank every target against all N items; returns ``(report, ranks)``."""
    from .dataio import make_batches

    ranks, lengths = [], []
    cls_index = model.config.n_items + 1
    for batch in make_batches(examples, batch_size, max_len, None, cls_index):
        scores = model.scores(batch, propagation)
        ranks.append(rank_targets(scores, batch.targets))
        lengths.append(batch.original_lengths)
    ranks = np.concatenate(ranks)
    return compute_metrics(ranks, np.concatenate(lengths), cutoffs), ranks


def popularity_scores(train_examples, n_items):
    """Training-target frequency per item (column i-1 is item i)."""
    counts = np.zeros(n_items)
    for ex in train_examples:
        counts[ex.target - 1] += 1
    return counts


def evaluate_popularity(train_examples, test_examples, n_items, cutoffs=CUTOFFS):
    scores = popularity_scores(train_examples, n_items)
    targets = np.array([ex.target for ex in test_examples])
    ranks = rank_targets(np.broadcast_to(scores, (len(targets), n_items)), targets)
    lengths = np.array([ex.original_length for ex in test_examples])
    return compute_metrics(ranks, lengths, cutoffs)


def export_embeddings(model, examples, propagation, max_len, path, vocab=None, batch_size=512):
    """Write fused session embeddings as CSV ``label,dim_0,...``; label is the target item."""
    from . import tensor as T
    from .dataio import make_batches

    dim = model.config.dim
    cls_index = model.config.n_items + 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"dim_{i}" for i in range(dim)])
        for batch in make_batches(examples, batch_size, max_len, None, cls_index):
            with T.no_grad():
                s_h = model.forward(batch, propagation, training=False).s_h.data
            for target, row in zip(batch.targets, s_h):
                label = vocab.external(int(target)) if vocab is not None else int(target)
                writer.writerow([label] + [repr(float(v)) for v in row])


def read_embeddings(path):
    labels, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            labels.append(rec[0])
            rows.append([float(v) for v in rec[1:]])
    return labels, np.array(rows)
