"""Independent reference implementations used by several test modules."""
import numpy as np

from restc.graphs import Relation


def brute_force_edges(session):
    """Typed edge set of a session graph, enumerated pair by pair from the
    relation rules, over item values rather than node positions."""
    steps = list(zip(session, session[1:]))
    items = sorted(set(session))
    edges = set()
    for a in items:
        for b in items:
            if a == b:
                continue
            fwd = (a, b) in steps
            rev = (b, a) in steps
            if fwd and rev:
                edges.add((a, b, Relation.BI))
            elif fwd:
                edges.add((a, b, Relation.OUT))
            elif rev:
                edges.add((a, b, Relation.IN))
    for a in items:
        linked = any((a, x) in steps or (x, a) in steps for x in items if x != a)
        if (a, a) in steps or not linked:
            edges.add((a, a, Relation.SELF))
    return edges


def dense_cfg(sessions, n_items):
    """Co-occurrence counts by explicit loops; index i-1 is item i."""
    a = np.zeros((n_items, n_items))
    for s in sessions:
        for x, y in zip(s, s[1:]):
            if x != y:
                a[x - 1, y - 1] += 1
                a[y - 1, x - 1] += 1
    return a


def dense_propagation(a):
    a_tilde = a + np.eye(len(a))
    return a_tilde / a_tilde.sum(axis=1, keepdims=True)


def leaky(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()
