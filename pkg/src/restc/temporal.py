"""Temporal encoder: position-aware transformer over the session sequence.

Inputs are padded index matrices ``[C, W]`` where row c holds ``M_c`` real
items, the [CLS] index at column ``M_c`` and padding after it.  The encoder
runs at width 2D (item embedding concatenated with a position embedding).
"""
import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError


def init_temporal_params(params, n_items, dim, max_len, n_layers=2):
    """Register item/position tables and all encoder weights on ``params``."""
    width = 2 * dim
    if "item_emb" not in params:
        params.uniform("item_emb", (n_items + 2, dim))
        params["item_emb"].data[0] = 0.0
    params.uniform("temporal.pos", (max_len + 1, dim))
    for layer in range(n_layers):
        pre = f"temporal.layer{layer}."
        for name in ("wq", "wk", "wv", "w1", "w2"):
            params.uniform(pre + name, (width, width))
        params.zeros(pre + "b1", (width,))
        params.zeros(pre + "b2", (width,))
        for ln in ("ln1", "ln2"):
            params.ones(pre + ln + ".gamma", (width,))
            params.zeros(pre + ln + ".beta", (width,))
    params.uniform("temporal.w3", (width, width))
    params.uniform("temporal.w4", (width, width))
    params.zeros("temporal.b3", (width,))
    params.uniform("temporal.f_t", (width,))
    params.uniform("temporal.out.wa", (2 * width, dim))
    params.zeros("temporal.out.ba", (dim,))
    params.uniform("temporal.out.wb", (dim, dim))
    params.zeros("temporal.out.bb", (dim,))


def embed_with_positions(item_table, pos_table, items, use_positions=True):
    """``X' = Concat(item embedding, position embedding)`` -> ``[C, W, 2D]``.

    Padding (index 0) contributes a zero item vector; [CLS] uses its own row.
    """
    items = np.asarray(items)
    width = items.shape[-1]
    if width > pos_table.shape[0]:
        raise ContractError(f"sequence width {width} exceeds position table ({pos_table.shape[0]} rows)")
    emb = T.embedding(item_table, items) * (items != 0)[..., None]
    pos = T.index(pos_table, slice(0, width))
    if not use_positions:
        pos = pos * 0.0
    pos = T.broadcast_to(pos, items.shape + (pos_table.shape[1],))
    return T.concat([emb, pos], axis=-1)


def multi_head_attention(x, mask, wq, wk, wv, heads, return_weights=False):
    """Scaled dot-product self-attention with key padding ``mask`` [C, W].

    Heads split the 2D width evenly; logits are scaled by sqrt(width).
    """
    c, w, width = x.shape
    if width % heads:
        raise ConfigError(f"width {width} is not divisible by {heads} heads")
    hd = width // heads

    def split(t):
        return T.transpose(T.reshape(t, (c, w, heads, hd)), (0, 2, 1, 3))

    q, k, v = split(x @ wq), split(x @ wk), split(x @ wv)
    scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(width))
    attn = T.softmax(scores, mask=np.asarray(mask)[:, None, None, :])
    out = T.reshape(T.transpose(attn @ v, (0, 2, 1, 3)), (c, w, width))
    return (out, attn) if return_weights else out


def transformer_layer(params, layer, x, mask, heads=2, dropout=0.1, rng=None, training=False):
    pre = f"temporal.layer{layer}."
    p = params
    att = multi_head_attention(x, mask, p[pre + "wq"], p[pre + "wk"], p[pre + "wv"], heads)
    x = T.layer_norm(x + T.dropout(att, dropout, rng, training), p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
    ffn = T.relu(x @ p[pre + "w1"] + p[pre + "b1"]) @ p[pre + "w2"] + p[pre + "b2"]
    return T.layer_norm(x + T.dropout(ffn, dropout, rng, training), p[pre + "ln2.gamma"], p[pre + "ln2.beta"])


def temporal_enhanced(x_out, x_init, lengths, w3, w4, b3, f_t, return_weights=False):
    """[CLS]-queried attention over real positions; values come from ``x_init``.

    Returns ``(h_t [C, 2D], x_c [C, 2D])``.
    """
    lengths = np.asarray(lengths)
    c, w, _ = x_out.shape
    rows = np.arange(c)
    x_c = T.index(x_out, (rows, lengths))
    real = np.arange(w)[None, :] < lengths[:, None]
    hidden = T.relu(T.reshape(x_c @ w3, (c, 1, -1)) + x_out @ w4 + b3)
    gamma = T.softmax(hidden @ f_t, mask=real)
    h_t = T.reshape(T.reshape(gamma, (c, 1, w)) @ x_init, (c, -1))
    return (h_t, x_c, gamma) if return_weights else (h_t, x_c)


def temporal_view(h_t, x_c, wa, ba, wb, bb, dropout=0.1, rng=None, training=False):
    """``T(s) = L2Norm(dropout(FFN(Concat(h_t, x_c))))`` -> ``[C, D]``."""
    z = T.concat([h_t, x_c], axis=-1)
    z = T.relu(z @ wa + ba) @ wb + bb
    z = T.dropout(z, dropout, rng, training)
    return T.l2_normalize_rows(z)


def encode_temporal(params, items, lengths, mask, heads=2, n_layers=2, dropout=0.1,
                    rng=None, training=False, use_positions=True):
    """Full temporal path for a padded batch -> ``T(s)`` rows ``[C, D]``."""
    x0 = embed_with_positions(params["item_emb"], params["temporal.pos"], items, use_positions)
    x = x0
    for layer in range(n_layers):
        x = transformer_layer(params, layer, x, mask, heads, dropout, rng, training)
    h_t, x_c = temporal_enhanced(
        x, x0, lengths, params["temporal.w3"], params["temporal.w4"], params["temporal.b3"], params["temporal.f_t"]
    )
    return temporal_view(
        h_t, x_c, params["temporal.out.wa"], params["temporal.out.ba"],
        params["temporal.out.wb"], params["temporal.out.bb"], dropout, rng, training,
    )
