"""Matplotlib figures written next to the CSV reports."""
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

# fixed metadata keeps PNG bytes reproducible across runs
_PNG_META = {"Software": None}

plt.rcParams.update({
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_training_curves(rows, path):
    """Loss terms (left) and validation HR@20 / MRR@20 (right) per epoch."""
    epochs = [r["epoch"] for r in rows]
    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    ax_loss.plot(epochs, [r["main_loss"] for r in rows], marker="o", label="main")
    ax_loss.plot(epochs, [r["total"] for r in rows], marker=".", label="total")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    if any(r["cont_loss"] for r in rows):
        twin = ax_loss.twinx()
        twin.plot(epochs, [r["cont_loss"] for r in rows], color="tab:red", linestyle="--", label="contrastive")
        twin.set_ylabel("contrastive", color="tab:red")
    ax_loss.legend(loc="upper right")
    ax_val.plot(epochs, [r["val_hr20"] for r in rows], marker="o", label="HR@20")
    ax_val.plot(epochs, [r["val_mrr20"] for r in rows], marker="s", label="MRR@20")
    ax_val.set_xlabel("epoch")
    ax_val.set_ylim(0, 1)
    for ax in (ax_loss, ax_val):
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax_val.legend(loc="lower right")
    return _save(fig, path)


def plot_length_groups(report, path, baseline=None, metric="MRR", cutoff=20):
    """Bar chart of one metric per session-length group (S/M/L plus overall)."""
    groups = ["S", "M", "L", "all"]

    def values(rep):
        return [rep.value(metric, cutoff, g) for g in groups]

    fig, ax = plt.subplots()
    xs = range(len(groups))
    width = 0.38 if baseline is not None else 0.6
    model_vals = [0.0 if math.isnan(v) else v for v in values(report)]
    ax.bar([x - (width / 2 if baseline is not None else 0) for x in xs], model_vals, width, label="model")
    if baseline is not None:
        base_vals = [0.0 if math.isnan(v) else v for v in values(baseline)]
        ax.bar([x + width / 2 for x in xs], base_vals, width, label="popularity")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"{g}\n(n={report.counts.get(g, 0)})" for g in groups])
    ax.set_ylabel(f"{metric}@{cutoff}")
    ax.legend()
    return _save(fig, path)


def plot_sweep(rows, param, path, grid_keys=(), metric="val_hr20"):
    """Metric against one swept parameter, one line per other-parameter combo."""
    series = {}
    for r in rows:
        rest = tuple((k, r[k]) for k in grid_keys if k != param)
        series.setdefault(rest, []).append((float(r[param]), float(r[metric])))
    fig, ax = plt.subplots()
    for rest, pts in sorted(series.items(), key=lambda kv: str(kv[0])):
        pts.sort()
        label = ", ".join(f"{k}={v}" for k, v in rest) or None
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel(param)
    ax.set_ylabel(metric)
    if any(label for label in ax.get_legend_handles_labels()[1]):
        ax.legend()
    return _save(fig, path)
