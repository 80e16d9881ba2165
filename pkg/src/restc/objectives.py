"""Spatio-temporal contrastive loss, view fusion, prediction and the joint loss."""
import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DegenerateEmbeddingError

PROB_FLOOR = 1e-12


class Strategy(enum.Enum):
    SPATIAL_ONLY = "spatial_only"
    SINGLE_ALIGN = "single_align"
    MULTI_ALIGN = "multi_align"
    SELF_MULTI_ALIGN = "self_multi_align"
    MIXED_NOISE = "mixed_noise"

    @classmethod
    def parse(cls, text):
        aliases = {"so": "spatial_only", "sa": "single_align", "ma": "multi_align",
                   "sma": "self_multi_align", "mn": "mixed_noise"}
        text = aliases.get(text, text).replace("-", "_").lower()
        try:
            return cls(text)
        except ValueError as exc:
            raise ConfigError(f"unknown negative-sampling strategy {text!r}") from exc


@dataclass
class ContrastiveConfig:
    tau: float = 0.2
    strategy: Strategy = Strategy.MIXED_NOISE
    include_positive: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if isinstance(self.strategy, str):
            self.strategy = Strategy.parse(self.strategy)


@dataclass
class NegativeSet:
    """Candidate rows plus, per anchor, the candidate indices that are its negatives."""

    candidates: T.Tensor
    index: np.ndarray  # [C, k]


def _others(c):
    """``[C, C-1]`` matrix listing every j != i for each row i."""
    full = np.tile(np.arange(c), (c, 1))
    return full[~np.eye(c, dtype=bool)].reshape(c, c - 1)


def column_shuffle(rows, rng):
    """Independently permute the feature coordinates of every row."""
    c, d = rows.shape
    perms = np.argsort(rng.random((c, d)), axis=1)
    return T.index(rows, (np.arange(c)[:, None], perms))


def mixed_noise_negatives(t_batch, rng):
    """Pool = originals + column-shuffled copies (2C rows); each anchor draws C
    of them uniformly without replacement, never its own original row."""
    c = t_batch.shape[0]
    if c < 2:
        raise ConfigError("mixed-noise sampling needs a batch of at least 2 sessions")
    pool = T.concat([t_batch, column_shuffle(t_batch, rng)], axis=0)
    keys = rng.random((c, 2 * c))
    keys[np.arange(c), np.arange(c)] = np.inf
    index = np.argsort(keys, axis=1, kind="stable")[:, :c]
    return NegativeSet(pool, index)


def build_negatives(strategy, g_batch, t_batch, rng):
    strategy = Strategy.parse(strategy) if isinstance(strategy, str) else strategy
    c = t_batch.shape[0]
    if c < 2:
        raise ConfigError("contrastive negatives need a batch of at least 2 sessions")
    if strategy is Strategy.MIXED_NOISE:
        return mixed_noise_negatives(t_batch, rng)
    others = _others(c)
    if strategy is Strategy.SPATIAL_ONLY:
        return NegativeSet(g_batch, others)
    if strategy is Strategy.MULTI_ALIGN:
        return NegativeSet(t_batch, others)
    if strategy is Strategy.SINGLE_ALIGN:
        pick = rng.integers(0, c - 1, size=c)
        return NegativeSet(t_batch, others[np.arange(c), pick][:, None])
    if strategy is Strategy.SELF_MULTI_ALIGN:
        return NegativeSet(T.concat([g_batch, t_batch], axis=0), np.concatenate([others, others + c], axis=1))
    raise ConfigError(f"unhandled strategy {strategy}")


def _check_nonzero(rows, label):
    norms = np.sqrt((rows.data * rows.data).sum(axis=-1))
    if np.any(norms < 1e-12):
        raise DegenerateEmbeddingError(f"{label} contains a zero-norm row")


def contrastive_loss(g_batch, t_batch, negatives, tau, include_positive=False):
    """InfoNCE over cosine similarities, summed over the batch.

    The denominator runs over the negative set only unless
    ``include_positive`` (the usual InfoNCE form).
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    _check_nonzero(g_batch, "spatial view")
    _check_nonzero(t_batch, "temporal view")
    _check_nonzero(negatives.candidates, "negative pool")
    c = g_batch.shape[0]
    g = T.l2_normalize_rows(g_batch)
    t = T.l2_normalize_rows(t_batch)
    cand = T.l2_normalize_rows(negatives.candidates)
    positive = (g * t).sum(axis=1) * (1.0 / tau)
    sims = (g @ T.transpose(cand)) * (1.0 / tau)
    neg = T.index(sims, (np.arange(c)[:, None], negatives.index))
    if include_positive:
        neg = T.concat([T.reshape(positive, (c, 1)), neg], axis=1)
    return (T.logsumexp(neg, axis=1) - positive).sum()


def init_fusion_params(params, n_items, dim):
    params.uniform("fusion.w_f", (dim, dim))
    params.uniform("fusion.w7", (dim, dim))
    params.uniform("fusion.w8", (dim, dim))
    params.zeros("fusion.b7", (dim,))
    params.uniform("fusion.f_g", (dim,))
    params.uniform("fusion.w_y", (dim, n_items))


def fuse_views(h_g, t_view, h_seq, z_seq, select, w_f, w7, w8, b7, f_g, return_weights=False):
    """Gate each item by spatial and temporal context and sum the gated
    (CFG + MSG) embeddings over the positions flagged in ``select``.

    ``select`` [C, M] picks one position per unique item so the sum runs over
    unique items; shapes: ``h_g, h_seq, z_seq`` [C, M, D], ``t_view`` [C, D].
    """
    c, m, d = h_g.shape
    h_prime = T.tanh(h_g @ w_f)
    gate = T.sigmoid(h_prime @ w7 + T.reshape(t_view @ w8, (c, 1, d)) + b7)
    rho = (gate @ f_g) * np.asarray(select, dtype=np.float64)
    s_h = T.reshape(T.reshape(rho, (c, 1, m)) @ (z_seq + h_seq), (c, d))
    return (s_h, rho) if return_weights else s_h


def predict_scores(s_h, w_y):
    """Softmax over the N real items; returns ``(logits, probabilities)``."""
    logits = s_h @ w_y
    return logits, T.softmax(logits)


def main_loss(probs, targets, logits=None, categorical=False):
    """Batch-mean of the per-item binary cross entropy over a softmax output.

    ``targets`` are 1-based item indices.  With ``categorical`` the usual
    ``-log p_target`` is used instead (needs ``logits``).
    """
    targets = np.asarray(targets)
    c, n = probs.shape
    onehot = np.zeros((c, n))
    onehot[np.arange(c), targets - 1] = 1.0
    if categorical:
        if logits is None:
            raise ValueError("categorical loss needs logits")
        picked = T.index(logits, (np.arange(c), targets - 1))
        return (T.logsumexp(logits, axis=1) - picked).mean()
    p = T.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    per_item = onehot * T.log(p) + (1.0 - onehot) * T.log(1.0 - p)
    return -(per_item.sum() * (1.0 / c))


@dataclass
class LossBreakdown:
    main: float
    contrastive: float
    l2: float
    total: float
    eta1: float
    eta2: float
    objective: T.Tensor = None  # differentiable main + eta1 * contrastive

    def as_row(self):
        return {"main_loss": self.main, "cont_loss": self.contrastive, "l2": self.l2, "total": self.total}


def total_loss(main, contrastive, params, eta1, eta2):
    """Joint objective ``main + eta1 * cont + eta2 * ||theta||^2``.

    The L2 term is reported by value; its gradient ``2 * eta2 * theta`` is
    applied by the optimiser, so ``objective`` carries only the first two
    terms.  ``contrastive`` may be None (treated as 0).
    """
    if eta1 < 0 or eta2 < 0:
        raise ConfigError("loss weights must be non-negative")
    l2 = params.l2() if eta2 else 0.0
    objective = main
    cont_value = 0.0
    if contrastive is not None:
        cont_value = contrastive.item()
        if eta1:
            objective = main + contrastive * eta1
    main_value = main.item()
    total = main_value + eta1 * cont_value + eta2 * l2
    return LossBreakdown(main_value, cont_value, l2, total, eta1, eta2, objective)
