"""Mean-pooling graph convolution over the global co-occurrence graph and
the CFG-enhanced per-item spatial embedding."""
import numpy as np

from . import tensor as T
from .errors import ConfigError


def init_cfg_params(params, dim, n_layers=3):
    if not 1 <= n_layers <= 4:
        raise ConfigError(f"CFG layer count must be in [1, 4], got {n_layers}")
    for k in range(1, n_layers + 1):
        params.uniform(f"cfg.w_c{k}", (dim, dim))
    params.uniform("cfg.w_g", (3 * dim, dim))


def cfg_propagate(z0, propagation, weights, slope=0.01):
    """``Z(k) = LeakyReLU(P Z(k-1) W_c(k))`` for each weight in ``weights``.

    ``z0`` holds the N real-item rows; ``propagation`` is the constant
    row-stochastic operator (dense or scipy sparse).
    """
    if not 1 <= len(weights) <= 4:
        raise ConfigError(f"CFG layer count must be in [1, 4], got {len(weights)}")
    z = z0
    for w in weights:
        z = T.leaky_relu(T.spmm(propagation, z) @ w, slope)
    return z


def cfg_embedding(params, propagation, n_layers, slope=0.01):
    """K-hop embedding indexed by item index: ``[N + 1, D]`` with a zero row 0."""
    table = params["item_emb"]
    n = propagation.shape[0]
    z0 = T.index(table, slice(1, n + 1))
    z = cfg_propagate(z0, propagation, [params[f"cfg.w_c{k}"] for k in range(1, n_layers + 1)], slope)
    return T.concat([np.zeros((1, z.shape[1])), z], axis=0)


def gather_session_rows(z_full, items, pos_mask):
    """CFG rows of the session items in session order (repeats repeat)."""
    pos_mask = np.asarray(pos_mask)
    return T.embedding(z_full, np.where(pos_mask, items, 0)) * pos_mask[..., None]


def enhance_spatial(pos_rows, h_seq, z_seq, w_g):
    """``H_g = Concat(P_e, H~, Z~_s) W_g``."""
    return T.concat([pos_rows, h_seq, z_seq], axis=-1) @ w_g
