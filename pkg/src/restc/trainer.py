"""Multi-task training loop, LR scheduling, early stopping and checkpoints."""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .checkpoint import read_checkpoint, write_checkpoint
from .dataio import make_batches, max_prefix_length
from .errors import CheckpointError, ConfigError, DegenerateEmbeddingError, TrainingDivergenceError
from .evaluation import evaluate_model
from .model import RESTC, ModelConfig
from .objectives import Strategy, build_negatives, contrastive_loss, main_loss, total_loss
from .optim import AdamState, adam_step, parse_scheduler, schedule_lr

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "main_loss", "cont_loss", "l2", "total", "lr", "val_hr20", "val_mrr20"]


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 512
    dim: int = 64
    max_len: int = 50            # cap on L; the actual L comes from the data
    eta1: float = 0.001
    eta2: float = 1e-5
    tau: float = 0.2
    lr: float = 0.001
    scheduler: str = "none"      # none | step:STEP[:GAMMA] | cosine:T_MAX[:LR_MIN]
    seed: int = 0
    strategy: str = "mixed_noise"
    include_positive: bool = False
    categorical_loss: bool = False
    no_sestrans: bool = False
    no_cfg: bool = False
    no_cont: bool = False
    no_pe_g: bool = False
    no_pe_s: bool = False
    mgat_layers: int = 1
    cfg_layers: int = 3
    sestrans_layers: int = 2
    heads: int = 2
    dropout: float = 0.1
    patience: int = 5
    val_fraction: float = 0.2
    cfg_refresh: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "dim", "max_len", "sestrans_layers", "heads", "cfg_refresh"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.eta1 < 0 or self.eta2 < 0:
            raise ConfigError("eta1 and eta2 must be non-negative")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if not 1 <= self.mgat_layers <= 4 or not 1 <= self.cfg_layers <= 4:
            raise ConfigError("mgat_layers and cfg_layers must be in [1, 4]")
        Strategy.parse(self.strategy)
        parse_scheduler(self.scheduler)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    def model_config(self, n_items, max_len):
        return ModelConfig(
            n_items=n_items, dim=self.dim, max_len=max_len, heads=self.heads,
            sestrans_layers=self.sestrans_layers, mgat_layers=self.mgat_layers,
            cfg_layers=self.cfg_layers, dropout=self.dropout, no_sestrans=self.no_sestrans,
            no_cfg=self.no_cfg, no_pe_g=self.no_pe_g, no_pe_s=self.no_pe_s,
        )

    @property
    def contrastive_active(self):
        return not (self.no_cont or self.no_sestrans)


def config_hash(data):
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def split_validation(examples, fraction, seed):
    """Seeded random hold-out: returns ``(fit, validation)``."""
    if fraction <= 0 or len(examples) < 2:
        return list(examples), []
    order = np.random.default_rng(np.random.SeedSequence([seed, 7919])).permutation(len(examples))
    n_val = max(1, int(round(fraction * len(examples))))
    val = [examples[i] for i in sorted(order[:n_val])]
    fit = [examples[i] for i in sorted(order[n_val:])]
    return fit, val


class Trainer:
    """Owns the model, optimiser state and RNG streams for one training run.

    Dropout and negative sampling draw from separate generators so switching
    the contrastive branch off does not perturb the dropout masks.
    """

    def __init__(self, config, train_examples, n_items, propagation, val_examples=None):
        self.config = config
        self.n_items = n_items
        self.propagation = propagation
        if val_examples is None:
            self.fit_examples, self.val_examples = split_validation(train_examples, config.val_fraction, config.seed)
        else:
            self.fit_examples, self.val_examples = list(train_examples), list(val_examples)
        if not self.fit_examples:
            raise ConfigError("no training examples")
        self.max_len = max_prefix_length(list(train_examples) + list(self.val_examples), config.max_len)
        self.model = RESTC(config.model_config(n_items, self.max_len), seed=config.seed)
        self.state = AdamState(lr=config.lr)
        self.scheduler = parse_scheduler(config.scheduler)
        self.rng_dropout = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        self.rng_negatives = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
        self.epoch = 0
        self.global_step = 0
        self.history = []
        self.best = None
        self._z_cache = None

    @property
    def params(self):
        return self.model.params

    @property
    def cls_index(self):
        return self.n_items + 1

    def epoch_batches(self, epoch):
        seed = int(np.random.SeedSequence([self.config.seed, 31, epoch]).generate_state(1)[0])
        return make_batches(self.fit_examples, self.config.batch_size, self.max_len, seed, self.cls_index)

    # -- one step ------------------------------------------------------------
    def compute_loss(self, batch, training=True):
        """Forward + loss assembly; returns ``(LossBreakdown, ForwardResult)``."""
        cfg = self.config
        z_full = None
        if training and cfg.cfg_refresh > 1 and not cfg.no_cfg:
            if self.global_step % cfg.cfg_refresh and self._z_cache is not None:
                z_full = self._z_cache
        out = self.model.forward(batch, self.propagation, training=training, rng=self.rng_dropout, z_full=z_full)
        if training and cfg.cfg_refresh > 1 and out.z_full is not None and z_full is None:
            self._z_cache = T.Tensor(out.z_full.data)
        main = main_loss(out.probs, batch.targets, out.logits, categorical=cfg.categorical_loss)
        cont = None
        if cfg.contrastive_active and len(batch) >= 2:
            negatives = build_negatives(cfg.strategy, out.spatial, out.temporal, self.rng_negatives)
            cont = contrastive_loss(out.spatial, out.temporal, negatives, cfg.tau, cfg.include_positive)
        eta1 = cfg.eta1 if cfg.contrastive_active else 0.0
        return total_loss(main, cont, self.params, eta1, cfg.eta2), out

    def train_step(self, batch, batch_index=None):
        try:
            breakdown, _ = self.compute_loss(batch, training=True)
        except DegenerateEmbeddingError as exc:
            # overflowed weights or a fully dropped row leave cosine undefined
            diag = {"epoch": self.epoch, "batch": batch_index, "cause": str(exc)}
            raise TrainingDivergenceError(f"degenerate embedding at epoch {self.epoch}, batch {batch_index}: {exc}",
                                          diag) from exc
        if not math.isfinite(breakdown.total):
            diag = {"epoch": self.epoch, "batch": batch_index, **breakdown.as_row()}
            raise TrainingDivergenceError(f"non-finite loss at epoch {self.epoch}, batch {batch_index}: {diag}", diag)
        T.backward(breakdown.objective)
        adam_step(self.params, self.state, self.config.eta2)
        self.global_step += 1
        return breakdown

    def train_epoch(self, batches):
        """Run every batch once; returns mean losses over the epoch."""
        sums = {"main_loss": 0.0, "cont_loss": 0.0, "l2": 0.0, "total": 0.0}
        for i, batch in enumerate(batches):
            row = self.train_step(batch, i).as_row()
            for k in sums:
                sums[k] += row[k]
        return {k: v / max(1, len(batches)) for k, v in sums.items()}

    # -- full run ------------------------------------------------------------
    def validate(self):
        if not self.val_examples:
            return math.nan, math.nan
        report, _ = evaluate_model(self.model, self.val_examples, self.propagation, self.max_len)
        return report.value("HR", 20), report.value("MRR", 20)

    def fit(self, epochs=None, on_epoch=None):
        """Train with early stopping on validation MRR@20; restores the best epoch."""
        epochs = self.config.epochs if epochs is None else epochs
        stale = 0
        target = self.epoch + epochs
        while self.epoch < target:
            lr = schedule_lr(self.config.lr, self.scheduler, self.epoch)
            self.state.lr = lr
            metrics = self.train_epoch(self.epoch_batches(self.epoch))
            val_hr, val_mrr = self.validate()
            self.epoch += 1
            row = {"epoch": self.epoch, **metrics, "lr": lr, "val_hr20": val_hr, "val_mrr20": val_mrr}
            self.history.append(row)
            log.info("epoch %d main %.4f cont %.4f val HR@20 %.4f MRR@20 %.4f",
                     self.epoch, metrics["main_loss"], metrics["cont_loss"], val_hr, val_mrr)
            if on_epoch is not None:
                on_epoch(row)
            if math.isnan(val_mrr):
                continue
            if self.best is None or val_mrr > self.best["val_mrr20"]:
                self.best = {"epoch": self.epoch, "val_mrr20": val_mrr, "val_hr20": val_hr,
                             "params": self.params.state_dict()}
                stale = 0
            else:
                stale += 1
                if stale >= self.config.patience:
                    log.info("early stop after epoch %d (best %d)", self.epoch, self.best["epoch"])
                    break
        if self.best is not None:
            self.params.load_state_dict(self.best["params"])
        return self.history

    # -- persistence -----------------------------------------------------------
    def metadata(self):
        model_cfg = self.model.config.to_dict()
        return {
            "epoch": self.epoch,
            "global_step": self.global_step,
            "train_config": self.config.to_dict(),
            "model_config": model_cfg,
            "config_hash": config_hash({"train": self.config.to_dict(), "model": model_cfg}),
            "rng_dropout": self.rng_dropout.bit_generator.state,
            "rng_negatives": self.rng_negatives.bit_generator.state,
            "adam": {"lr": self.state.lr, "betas": list(self.state.betas), "eps": self.state.eps,
                     "step": self.state.step},
        }

    def save_checkpoint(self, path, extra=None):
        tensors = {}
        for name, p in self.params.items():
            tensors[f"param/{name}"] = p.data
        for name, arr in self.state.m.items():
            tensors[f"adam.m/{name}"] = arr
        for name, arr in self.state.v.items():
            tensors[f"adam.v/{name}"] = arr
        meta = self.metadata()
        if extra:
            meta.update(extra)
        write_checkpoint(path, meta, tensors)

    def load_checkpoint(self, path):
        meta, tensors = read_checkpoint(path)
        own = self.model.config.to_dict()
        if meta.get("model_config") != own:
            raise CheckpointError(f"{path}: model configuration does not match this run")
        self.params.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
        adam = meta["adam"]
        self.state = AdamState(lr=adam["lr"], betas=tuple(adam["betas"]), eps=adam["eps"], step=adam["step"])
        self.state.m = {k[7:]: v for k, v in tensors.items() if k.startswith("adam.m/")}
        self.state.v = {k[7:]: v for k, v in tensors.items() if k.startswith("adam.v/")}
        self.rng_dropout.bit_generator.state = meta["rng_dropout"]
        self.rng_negatives.bit_generator.state = meta["rng_negatives"]
        self.epoch = meta["epoch"]
        self.global_step = meta["global_step"]
        self._z_cache = None
        return meta


def load_model(path, n_items=None):
    """Rebuild an evaluation-ready model from a checkpoint."""
    meta, tensors = read_checkpoint(path)
    if "model_config" not in meta:
        raise CheckpointError(f"{path}: checkpoint has no model configuration")
    cfg = ModelConfig.from_dict(meta["model_config"])
    if n_items is not None and cfg.n_items != n_items:
        raise CheckpointError(
            f"{path}: checkpoint was trained on {cfg.n_items} items but the dataset has {n_items}"
        )
    model = RESTC(cfg)
    model.params.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
    return model, meta
