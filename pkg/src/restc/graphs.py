"""Per-session multi-relational graphs and the global item co-occurrence graph."""
import enum
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DataFormatError


class Relation(enum.IntEnum):
    IN = 0
    OUT = 1
    BI = 2
    SELF = 3


N_RELATIONS = len(Relation)


@dataclass(frozen=True)
class MSG:
    """Session graph over unique items.

    ``nodes`` holds item indices in first-occurrence order; ``edges`` holds
    ``(src, dst, Relation)`` with src/dst as positions in ``nodes`` and means
    "dst is a neighbour of src under that relation"; ``alias[k]`` is the node
    of the k-th session position.
    """

    nodes: tuple
    edges: tuple
    alias: tuple
    occurrences: dict = field(compare=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def typed_edges(self):
        """Edges as ``(src_item, dst_item, Relation)`` triples."""
        return {(self.nodes[s], self.nodes[d], r) for s, d, r in self.edges}

    def neighbours(self, node, relation):
        return [d for s, d, r in self.edges if s == node and r == relation]

    def adjacency(self, size=None):
        """Boolean ``[R, size, size]`` array, ``adj[r, i, j]`` iff j in N_i^(r)."""
        size = size or len(self.nodes)
        adj = np.zeros((N_RELATIONS, size, size), dtype=bool)
        for s, d, r in self.edges:
            adj[r, s, d] = True
        return adj


def build_msg(prefix):
    prefix = tuple(int(v) for v in prefix)
    if not prefix:
        raise ContractError("cannot build a graph for an empty session")
    node_of = {}
    for v in prefix:
        node_of.setdefault(v, len(node_of))
    nodes = tuple(node_of)
    alias = tuple(node_of[v] for v in prefix)
    occurrences = defaultdict(list)
    for pos, v in enumerate(prefix):
        occurrences[node_of[v]].append(pos)

    moves = set()
    loops = set()
    for a, b in zip(alias, alias[1:]):
        if a == b:
            loops.add(a)
        else:
            moves.add((a, b))
    edges = set()
    for a, b in moves:
        if (b, a) in moves:
            edges.add((a, b, Relation.BI))
            edges.add((b, a, Relation.BI))
        else:
            edges.add((a, b, Relation.OUT))
            edges.add((b, a, Relation.IN))
    touched = {a for a, _ in moves} | {b for _, b in moves} | loops
    for node in range(len(nodes)):
        if node in loops or node not in touched:
            edges.add((node, node, Relation.SELF))
    return MSG(nodes, tuple(sorted(edges)), alias, dict(occurrences))


@dataclass
class CFG:
    """Symmetric co-occurrence counts over items 1..N (stored 0-based)."""

    n_items: int
    weights: sp.csr_matrix

    def weight(self, a, b):
        return self.weights[a - 1, b - 1]

    @property
    def degree(self):
        """Diagonal of the degree matrix of A + I."""
        return np.asarray(self.weights.sum(axis=1)).ravel() + 1.0

    def save(self, path):
        coo = self.weights.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"N\t{self.n_items}\n")
            for k in order:
                fh.write(f"{coo.row[k] + 1}\t{coo.col[k] + 1}\t{int(coo.data[k])}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            head = fh.readline().rstrip("\n").split("\t")
            if len(head) != 2 or head[0] != "N":
                raise DataFormatError(f"{path}: first line must be 'N<TAB>count'")
            n = int(head[1])
            rows, cols, vals = [], [], []
            for line in fh:
                if not line.strip():
                    continue
                i, j, w = line.split("\t")
                rows.append(int(i) - 1)
                cols.append(int(j) - 1)
                vals.append(float(w))
        weights = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(n, weights)


def build_cfg(sessions, n_items):
    """Count adjacent distinct-item pairs (both directions) over ``sessions``."""
    rows, cols = [], []
    for s in sessions:
        for a, b in zip(s, s[1:]):
            if a == b:
                continue
            if not (1 <= a <= n_items and 1 <= b <= n_items):
                raise ContractError(f"item index outside 1..{n_items}")
            rows += [a - 1, b - 1]
            cols += [b - 1, a - 1]
    data = np.ones(len(rows))
    weights = sp.csr_matrix((data, (rows, cols)), shape=(n_items, n_items))
    weights.sum_duplicates()
    return CFG(n_items, weights)


def propagation_matrix(cfg):
    """Row-stochastic mean-pooling operator D^-1 (A + I) as CSR."""
    a_tilde = (cfg.weights + sp.identity(cfg.n_items, format="csr")).tocsr()
    inv_deg = 1.0 / np.asarray(a_tilde.sum(axis=1)).ravel()
    return sp.diags(inv_deg).dot(a_tilde).tocsr()
