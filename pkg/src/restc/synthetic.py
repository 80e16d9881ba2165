"""Synthetic first-order Markov click logs for smoke runs and acceptance checks."""
import csv

import numpy as np

from .dataio import RawEvent, SECONDS_PER_DAY


def markov_transitions(n_items, dominant_prob, rng):
    """Row-stochastic ``[N, N]`` matrix: each item has one dominant successor
    (never itself) taking ``dominant_prob``; the rest is spread uniformly over
    the remaining non-self items."""
    shift = rng.permutation(n_items)
    successor = np.empty(n_items, dtype=np.int64)
    # a random cyclic order guarantees successor[i] != i
    successor[shift] = np.roll(shift, -1)
    probs = np.zeros((n_items, n_items))
    rest = (1.0 - dominant_prob) / (n_items - 2)
    for i in range(n_items):
        probs[i] = rest
        probs[i, i] = 0.0
        probs[i, successor[i]] = dominant_prob
    return probs


def markov_sessions(n_items=30, n_sessions=1500, dominant_prob=0.6, min_len=3, max_len=10, seed=0):
    """Sessions as lists of item numbers 0..N-1 plus the transition matrix."""
    rng = np.random.default_rng(seed)
    probs = markov_transitions(n_items, dominant_prob, rng)
    sessions = []
    for _ in range(n_sessions):
        length = int(rng.integers(min_len, max_len + 1))
        seq = [int(rng.integers(n_items))]
        for _ in range(length - 1):
            seq.append(int(rng.choice(n_items, p=probs[seq[-1]])))
        sessions.append(seq)
    return sessions, probs


def markov_events(n_items=30, n_sessions=1500, dominant_prob=0.6, days=30, seed=0, **kwargs):
    """Raw click events spread evenly over ``days`` days (60 s between clicks)."""
    sessions, _ = markov_sessions(n_items, n_sessions, dominant_prob, seed=seed, **kwargs)
    span = days * SECONDS_PER_DAY
    events = []
    for k, seq in enumerate(sessions):
        start = int(k * span / n_sessions)
        for j, item in enumerate(seq):
            events.append(RawEvent(f"s{k}", f"i{item}", start + 60 * j))
    return events


def write_events(path, events, header=True):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(["session_id", "item_id", "timestamp"])
        for e in events:
            writer.writerow([e.session_id, e.item_id, e.timestamp])
