"""Session log ingestion, filtering, prefix augmentation and batching.

On-disk dataset directory layout::

    vocab.tsv        index<TAB>item_id, one line per retained item (1..N)
    train.examples   target<TAB>space separated prefix indices
    test.examples    same layout
    cfg.tsv          see :mod:`restc.graphs`
    stats.tsv        one header row and one value row (Table-1 style columns)
"""
import csv
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataFormatError, EmptyDatasetError

log = logging.getLogger(__name__)

PAD = 0
SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class RawEvent:
    session_id: str
    item_id: str
    timestamp: int


@dataclass(frozen=True)
class AugmentedExample:
    prefix: tuple
    target: int
    original_length: int  # prefix length before any truncation


class Vocab:
    """External item id <-> dense index.  0 is padding, N+1 is [CLS]."""

    def __init__(self, item_ids):
        self.items = list(item_ids)
        self.index = {item: i + 1 for i, item in enumerate(self.items)}
        if len(self.index) != len(self.items):
            raise ContractError("vocabulary item ids must be unique")

    def __len__(self):
        return len(self.items)

    @property
    def n_items(self):
        return len(self.items)

    @property
    def cls_index(self):
        return len(self.items) + 1

    def external(self, idx):
        if not 1 <= idx <= len(self.items):
            raise ContractError(f"index {idx} is not a real item")
        return self.items[idx - 1]

    def __contains__(self, item_id):
        return item_id in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.items == other.items

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, item in enumerate(self.items, start=1):
                fh.write(f"{i}\t{item}\n")

    @classmethod
    def load(cls, path):
        items = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                idx, item = line.split("\t", 1)
                if int(idx) != len(items) + 1:
                    raise DataFormatError(f"{path}:{lineno}: indices must be consecutive from 1")
                items.append(item)
        return cls(items)


# -- parsing -------------------------------------------------------------------

def _parse_row(row):
    if len(row) != 3:
        return None
    sid, item, ts = (f.strip() for f in row)
    if not sid or not item:
        return None
    try:
        ts = int(ts)
    except ValueError:
        return None
    if ts < 0:
        return None
    return RawEvent(sid, item, ts)


def read_events(path):
    """Parse ``session_id,item_id,timestamp`` lines.

    Returns ``(events, malformed)``.  A first line whose timestamp field is
    not an integer is taken to be a header.  Blank lines are ignored.
    """
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot read session log {path}: {exc.strerror or exc}") from exc
    events, malformed, total = [], 0, 0
    with fh:
        for lineno, row in enumerate(csv.reader(fh)):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            event = _parse_row(row)
            if event is None and lineno == 0 and len(row) == 3:
                continue  # header
            total += 1
            if event is None:
                malformed += 1
            else:
                events.append(event)
    if total and malformed * 2 > total:
        raise DataFormatError(f"{path}: {malformed} of {total} lines are malformed")
    return events, malformed


def parse_sessions(path):
    events, malformed = read_events(path)
    if malformed:
        log.warning("%s: skipped %d malformed line(s)", path, malformed)
    return events


# -- filtering / split -------------------------------------------------------------

def group_sessions(events):
    """Group events by session, each ordered by timestamp (ties keep file order).

    Returns a list of ``(session_id, [(item_id, timestamp), ...])`` ordered by
    session start time, then session id.
    """
    grouped = defaultdict(list)
    for e in events:
        grouped[e.session_id].append((e.item_id, e.timestamp))
    sessions = [(sid, sorted(clicks, key=lambda c: c[1])) for sid, clicks in grouped.items()]
    sessions.sort(key=lambda s: (s[1][0][1], s[0]))
    return sessions


def filter_and_split(events, test_window_days=7, min_item_count=5):
    """Apply the preprocessing protocol.

    Items seen fewer than ``min_item_count`` times (total occurrences) are
    dropped, then sessions left with fewer than two clicks.  Sessions whose
    last click is within ``test_window_days`` of the latest click become test
    sessions.  The vocabulary covers training items only; test clicks on
    unknown items are dropped, as are test sessions that shrink below two.

    Returns ``(train, test, vocab)`` where sessions are lists of indices.
    """
    if not events:
        raise EmptyDatasetError("no events to preprocess")
    counts = Counter(e.item_id for e in events)
    kept = []
    for sid, clicks in group_sessions(events):
        clicks = [c for c in clicks if counts[c[0]] >= min_item_count]
        if len(clicks) >= 2:
            kept.append((sid, clicks))
    if not kept:
        raise EmptyDatasetError(
            f"every session was filtered away (items need >= {min_item_count} occurrences, sessions >= 2 clicks)"
        )
    latest = max(clicks[-1][1] for _, clicks in kept)
    cutoff = latest - test_window_days * SECONDS_PER_DAY
    train_raw = [clicks for _, clicks in kept if clicks[-1][1] <= cutoff]
    test_raw = [clicks for _, clicks in kept if clicks[-1][1] > cutoff]
    if not train_raw:
        raise EmptyDatasetError("no training sessions remain before the test window")

    order = {}
    for clicks in train_raw:
        for item, _ in clicks:
            order.setdefault(item, len(order))
    vocab = Vocab(order)
    train = [[vocab.index[item] for item, _ in clicks] for clicks in train_raw]
    test = []
    for clicks in test_raw:
        seq = [vocab.index[item] for item, _ in clicks if item in vocab.index]
        if len(seq) >= 2:
            test.append(seq)
    return train, test, vocab


# -- augmentation / batching -----------------------------------------------------------

def augment_prefixes(session):
    """``[v1..vM]`` -> ``([v1], v2), ([v1, v2], v3), ..., ([v1..v(M-1)], vM)``."""
    session = tuple(session)
    if len(session) < 2:
        raise ContractError(f"augmentation needs a session of length >= 2, got {len(session)}")
    return [AugmentedExample(session[:k], session[k], k) for k in range(1, len(session))]


def augment_all(sessions):
    out = []
    for s in sessions:
        out.extend(augment_prefixes(s))
    return out


@dataclass
class Batch:
    items: np.ndarray      # [C, L+1] int, CLS right after the last real item
    lengths: np.ndarray    # [C] real (possibly truncated) prefix lengths
    targets: np.ndarray    # [C]
    mask: np.ndarray       # [C, L+1] bool, real items plus CLS
    original_lengths: np.ndarray

    def __len__(self):
        return len(self.targets)

    @property
    def width(self):
        return self.items.shape[1]


def encode_batch(examples, max_len, cls_index):
    """Lay out examples as a padded matrix; prefixes keep their last ``max_len`` items."""
    c = len(examples)
    items = np.zeros((c, max_len + 1), dtype=np.int64)
    lengths = np.empty(c, dtype=np.int64)
    for row, ex in enumerate(examples):
        prefix = ex.prefix[-max_len:]
        m = len(prefix)
        items[row, :m] = prefix
        items[row, m] = cls_index
        lengths[row] = m
    mask = np.arange(max_len + 1)[None, :] <= lengths[:, None]
    targets = np.array([ex.target for ex in examples], dtype=np.int64)
    original = np.array([ex.original_length for ex in examples], dtype=np.int64)
    return Batch(items, lengths, targets, mask, original)


def make_batches(examples, batch_size, max_len, shuffle_seed=None, cls_index=None):
    """Split examples into batches of ``batch_size`` (last one may be short).

    ``shuffle_seed=None`` keeps the input order.  ``cls_index`` defaults to
    one past the largest index present in the examples.
    """
    if batch_size < 1 or max_len < 1:
        raise ContractError("batch_size and max_len must be positive")
    if cls_index is None:
        cls_index = 1 + max(max(max(e.prefix), e.target) for e in examples) if examples else 1
    order = np.arange(len(examples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(examples))
    return [
        encode_batch([examples[i] for i in order[start:start + batch_size]], max_len, cls_index)
        for start in range(0, len(examples), batch_size)
    ]


def max_prefix_length(examples, cap=50):
    return min(cap, max(len(e.prefix) for e in examples))


# -- dataset directory -------------------------------------------------------------

def write_examples(path, examples):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(f"{ex.target}\t{' '.join(map(str, ex.prefix))}\n")


def read_examples(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                target, prefix = line.split("\t")
                prefix = tuple(int(t) for t in prefix.split())
                target = int(target)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: expected target<TAB>prefix") from exc
            if not prefix:
                raise DataFormatError(f"{path}:{lineno}: empty prefix")
            out.append(AugmentedExample(prefix, target, len(prefix)))
    return out


def dataset_stats(train, test, vocab):
    """Items, clicks, train/test example counts and mean prefix length."""
    train_ex = augment_all(train)
    test_ex = augment_all(test)
    every = train_ex + test_ex
    return {
        "items": len(vocab),
        "clicks": sum(len(s) for s in train) + sum(len(s) for s in test),
        "train": len(train_ex),
        "test": len(test_ex),
        "avg_len": sum(len(e.prefix) for e in every) / len(every),
    }


@dataclass
class Dataset:
    vocab: Vocab
    train: list
    test: list
    directory: Path = None

    @property
    def n_items(self):
        return len(self.vocab)


def load_dataset(directory):
    directory = Path(directory)
    for name in ("vocab.tsv", "train.examples", "test.examples"):
        if not (directory / name).is_file():
            raise FileNotFoundError(f"dataset directory {directory} is missing {name}")
    vocab = Vocab.load(directory / "vocab.tsv")
    train = read_examples(directory / "train.examples")
    test = read_examples(directory / "test.examples")
    limit = len(vocab)
    for ex in train + test:
        if not 1 <= ex.target <= limit or min(ex.prefix) < 1 or max(ex.prefix) > limit:
            raise DataFormatError(f"{directory}: example references an index outside 1..{limit}")
    return Dataset(vocab, train, test, directory)


def write_stats(path, stats):
    cols = ["items", "clicks", "train", "test", "avg_len"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(cols) + "\n")
        fh.write("\t".join(f"{stats[c]:.6f}" if c == "avg_len" else str(stats[c]) for c in cols) + "\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
