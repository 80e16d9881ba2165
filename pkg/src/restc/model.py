"""The full model: both encoders, CFG enhancement, fusion and prediction."""
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .cfg_encoder import cfg_embedding, enhance_spatial, gather_session_rows, init_cfg_params
from .errors import ConfigError
from .objectives import fuse_views, init_fusion_params, predict_scores
from .params import ModelParams
from .spatial import GraphCache, encode_spatial, graph_batch, init_spatial_params
from .temporal import encode_temporal, init_temporal_params


@dataclass
class ModelConfig:
    n_items: int
    dim: int = 64
    max_len: int = 50
    heads: int = 2
    sestrans_layers: int = 2
    mgat_layers: int = 1
    cfg_layers: int = 3
    dropout: float = 0.1
    leaky_slope: float = 0.01
    no_sestrans: bool = False
    no_cfg: bool = False
    no_pe_g: bool = False  # spatial (graph-side) position table zeroed
    no_pe_s: bool = False  # temporal (sequence-side) position table zeroed

    def __post_init__(self):
        if self.n_items < 1 or self.dim < 1 or self.max_len < 1:
            raise ConfigError("n_items, dim and max_len must be positive")
        if (2 * self.dim) % self.heads:
            raise ConfigError(f"2*dim={2 * self.dim} is not divisible by heads={self.heads}")
        if not 1 <= self.mgat_layers <= 4:
            raise ConfigError(f"mgat_layers must be in [1, 4], got {self.mgat_layers}")
        if not 1 <= self.cfg_layers <= 4:
            raise ConfigError(f"cfg_layers must be in [1, 4], got {self.cfg_layers}")
        if self.sestrans_layers < 1:
            raise ConfigError("sestrans_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class ForwardResult:
    temporal: T.Tensor      # T(s) [C, D] (zeros under no_sestrans)
    spatial: T.Tensor       # G(s) [C, D]
    h_seq: T.Tensor         # MSG embeddings in session order [C, M, D]
    h_nodes: T.Tensor       # per-node MGAT output [C, U, D]
    z_seq: T.Tensor         # CFG rows in session order [C, M, D]
    h_g: T.Tensor
    s_h: T.Tensor           # fused session embedding [C, D]
    logits: T.Tensor        # [C, N]
    probs: T.Tensor         # [C, N]
    z_full: T.Tensor = None  # CFG embedding table [N + 1, D] (None under no_cfg)


class RESTC:
    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        p = ModelParams(rng, config.dim)
        init_temporal_params(p, config.n_items, config.dim, config.max_len, config.sestrans_layers)
        init_spatial_params(p, config.n_items, config.dim, config.max_len)
        init_cfg_params(p, config.dim, config.cfg_layers)
        init_fusion_params(p, config.n_items, config.dim)
        self.params = p
        self.graph_cache = GraphCache()

    def forward(self, batch, propagation, training=False, rng=None, z_full=None):
        """Run every branch on a :class:`~restc.dataio.Batch`.

        Padding columns beyond the longest row are trimmed first; results
        do not depend on how much extra padding the batch carries.  A
        precomputed ``z_full`` skips the CFG propagation.
        """
        cfg = self.config
        p = self.params
        if training and cfg.dropout > 0 and rng is None:
            raise ValueError("training with dropout needs an rng")
        width = int(batch.lengths.max()) + 1
        items = batch.items[:, :width]
        mask = batch.mask[:, :width]
        c = len(batch.lengths)

        if cfg.no_sestrans:
            t_view = T.Tensor(np.zeros((c, cfg.dim)))
        else:
            t_view = encode_temporal(
                p, items, batch.lengths, mask, cfg.heads, cfg.sestrans_layers, cfg.dropout,
                rng, training, use_positions=not cfg.no_pe_s,
            )

        graphs = graph_batch(items, batch.lengths, self.graph_cache)
        g_view, h_seq, pos_rows, h_nodes = encode_spatial(
            p, graphs, cfg.mgat_layers, cfg.leaky_slope, use_positions=not cfg.no_pe_g
        )

        seq_items = items[:, :h_seq.shape[1]]
        if cfg.no_cfg:
            z_full = None
            z_seq = T.Tensor(np.zeros(h_seq.shape))
        else:
            if z_full is None:
                z_full = cfg_embedding(p, propagation, cfg.cfg_layers, cfg.leaky_slope)
            z_seq = gather_session_rows(z_full, seq_items, graphs.pos_mask)
        h_g = enhance_spatial(pos_rows, h_seq, z_seq, p["cfg.w_g"])
        s_h = fuse_views(
            h_g, t_view, h_seq, z_seq, graphs.last_occurrence,
            p["fusion.w_f"], p["fusion.w7"], p["fusion.w8"], p["fusion.b7"], p["fusion.f_g"],
        )
        logits, probs = predict_scores(s_h, p["fusion.w_y"])
        return ForwardResult(t_view, g_view, h_seq, h_nodes, z_seq, h_g, s_h, logits, probs, z_full)

    def scores(self, batch, propagation):
        """Evaluation-mode probabilities ``[C, N]`` as a numpy array."""
        with T.no_grad():
            return self.forward(batch, propagation, training=False).probs.data
