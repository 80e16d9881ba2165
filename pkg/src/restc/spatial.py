"""Spatial encoder: relation-typed graph attention over session graphs and
position-aware soft attention pooling into the spatial view G(s)."""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .graphs import N_RELATIONS, build_msg


def init_spatial_params(params, n_items, dim, max_len):
    if "item_emb" not in params:
        params.uniform("item_emb", (n_items + 2, dim))
        params["item_emb"].data[0] = 0.0
    params.uniform("spatial.relations", (N_RELATIONS, dim))  # rows: in, out, bi, self
    params.uniform("spatial.pos", (max_len, dim))
    params.uniform("spatial.w_s", (2 * dim, dim))
    params.uniform("spatial.w5", (dim, dim))
    params.uniform("spatial.w6", (dim, dim))
    params.zeros("spatial.b5", (dim,))
    params.uniform("spatial.f_s", (dim,))


@dataclass
class GraphBatch:
    node_items: np.ndarray   # [C, U] item index per node, 0 for padding nodes
    node_mask: np.ndarray    # [C, U]
    adj: np.ndarray          # [C, R, U, U] bool, adj[c, r, i, j]: j in N_i^(r)
    alias: np.ndarray        # [C, M] node of each session position
    pos_mask: np.ndarray     # [C, M] real positions
    last_occurrence: np.ndarray  # [C, M] True at the final position of each unique item
    lengths: np.ndarray      # [C]

    @property
    def n_nodes(self):
        return self.node_mask.sum(axis=1)


class GraphCache:
    """Memoises MSGs by prefix; training revisits the same prefixes every epoch."""

    def __init__(self, limit=200_000):
        self._store = {}
        self.limit = limit

    def get(self, prefix):
        msg = self._store.get(prefix)
        if msg is None:
            msg = build_msg(prefix)
            if len(self._store) < self.limit:
                self._store[prefix] = msg
        return msg


def graph_batch(items, lengths, cache=None):
    """Assemble per-row MSGs of the real prefixes into padded arrays."""
    items = np.asarray(items)
    lengths = np.asarray(lengths)
    c = len(lengths)
    prefixes = [tuple(int(v) for v in items[r, :lengths[r]]) for r in range(c)]
    msgs = [cache.get(p) if cache is not None else build_msg(p) for p in prefixes]
    u = max(m.n_nodes for m in msgs)
    width = int(lengths.max())
    node_items = np.zeros((c, u), dtype=np.int64)
    node_mask = np.zeros((c, u), dtype=bool)
    adj = np.zeros((c, N_RELATIONS, u, u), dtype=bool)
    alias = np.zeros((c, width), dtype=np.int64)
    last = np.zeros((c, width), dtype=bool)
    for r, msg in enumerate(msgs):
        n = msg.n_nodes
        node_items[r, :n] = msg.nodes
        node_mask[r, :n] = True
        if msg.edges:
            e = np.asarray([(rel, s, d) for s, d, rel in msg.edges], dtype=np.int64)
            adj[r, e[:, 0], e[:, 1], e[:, 2]] = True
        alias[r, :len(msg.alias)] = msg.alias
        for positions in msg.occurrences.values():
            last[r, positions[-1]] = True
    pos_mask = np.arange(width)[None, :] < lengths[:, None]
    return GraphBatch(node_items, node_mask, adj, alias, pos_mask, last, lengths)


def mgat_scores(h, relations, adj, node_mask=None, slope=0.01):
    """Per-relation neighbour attention ``alpha [C, R, U, U]``.

    ``e_ij = r^T (h_i * h_j)`` for the relation r of the edge, softmaxed over
    each node's neighbours of that relation after LeakyReLU.  Nodes without
    neighbours under a relation get an all-zero row for it.
    """
    adj = np.asarray(adj, dtype=bool)
    if node_mask is not None:
        stranded = np.asarray(node_mask) & ~adj.any(axis=(1, 3))
        if stranded.any():
            raise ContractError("a graph node has no incident edge under any relation")
    c, u, d = h.shape
    hr = T.reshape(h, (c, 1, u, d)) * T.reshape(relations, (1, -1, 1, d))
    logits = hr @ T.reshape(T.swapaxes(h, -1, -2), (c, 1, d, u))
    return T.softmax(T.leaky_relu(logits, slope), mask=adj, allow_empty=True)


def mgat_aggregate(h, alpha):
    """``h~_i = sum_r sum_j alpha_ij^(r) h_j`` (relation heads summed)."""
    c, u, d = h.shape
    return (alpha @ T.reshape(h, (c, 1, u, d))).sum(axis=1)


def mgat(h, relations, graphs, n_layers=1, slope=0.01):
    if not 1 <= n_layers <= 4:
        raise ConfigError(f"MGAT layer count must be in [1, 4], got {n_layers}")
    for _ in range(n_layers):
        alpha = mgat_scores(h, relations, graphs.adj, graphs.node_mask, slope)
        h = mgat_aggregate(h, alpha)
    return h


def expand_to_sequence(h_nodes, graphs):
    """Re-expand node rows to session order -> ``[C, M, D]`` (padding rows zero)."""
    c = h_nodes.shape[0]
    rows = np.arange(c)[:, None]
    return T.index(h_nodes, (rows, graphs.alias)) * graphs.pos_mask[..., None]


def reversed_positions(pos_table, lengths, width):
    """Position rows ``[p_M, ..., p_1]`` for each session (distance from the end)."""
    lengths = np.asarray(lengths)
    if lengths.max() > pos_table.shape[0]:
        raise ContractError(f"session length {lengths.max()} exceeds position table ({pos_table.shape[0]} rows)")
    k = np.arange(width)[None, :]
    real = k < lengths[:, None]
    idx = np.where(real, lengths[:, None] - 1 - k, 0)
    return T.embedding(pos_table, idx) * real[..., None]


def local_spatial_aggregation(h_seq, lengths, pos_rows, w_s, w5, w6, b5, f_s, return_weights=False):
    """Soft-attention pooling of the expanded node embeddings -> ``G(s) [C, D]``.

    ``pos_rows`` are the reversed position embeddings aligned with ``h_seq``.
    """
    lengths = np.asarray(lengths)
    c, width, d = h_seq.shape
    real = (np.arange(width)[None, :] < lengths[:, None]).astype(np.float64)
    h_check = T.tanh(T.concat([pos_rows, h_seq], axis=-1) @ w_s)
    h_mean = h_seq.sum(axis=1) * (1.0 / lengths[:, None])
    gate = T.sigmoid(h_check @ w5 + T.reshape(h_mean @ w6, (c, 1, d)) + b5)
    beta = (gate @ f_s) * real
    g = T.reshape(T.reshape(beta, (c, 1, width)) @ h_seq, (c, d))
    return (g, beta) if return_weights else g


def encode_spatial(params, graphs, n_layers=1, slope=0.01, use_positions=True):
    """MGAT + pooling.

    Returns ``(G, h_seq, pos_rows, h_nodes)``: the spatial view ``[C, D]``,
    node embeddings in session order ``[C, M, D]``, the reversed position rows
    aligned with them, and the per-node MGAT output ``[C, U, D]``.
    """
    node_mask = graphs.node_mask
    h = T.embedding(params["item_emb"], graphs.node_items) * node_mask[..., None]
    h_nodes = mgat(h, params["spatial.relations"], graphs, n_layers, slope)
    h_seq = expand_to_sequence(h_nodes, graphs)
    pos_rows = reversed_positions(params["spatial.pos"], graphs.lengths, h_seq.shape[1])
    if not use_positions:
        pos_rows = pos_rows * 0.0
    g = local_spatial_aggregation(
        h_seq, graphs.lengths, pos_rows, params["spatial.w_s"], params["spatial.w5"],
        params["spatial.w6"], params["spatial.b5"], params["spatial.f_s"],
    )
    return g, h_seq, pos_rows, h_nodes
