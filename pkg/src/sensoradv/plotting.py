"""Report figures rendered to files with the Agg backend.

PNG metadata is stripped so identical inputs give identical bytes.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import MODEL_LABELS, row_label  # noqa: E402

_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _save(fig, path):
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def transfer_heatmap(report, path):
    """Error cells as a heatmap; diagonal (source == target) cells are boxed."""
    values = report.cells
    columns = [MODEL_LABELS.get(t, t) for t in report.targets]
    if report.ensemble is not None:
        values = np.column_stack([values, report.ensemble])
        columns.append("CNN Ensemble")
    fig, ax = plt.subplots(figsize=(1.6 * len(columns) + 4.5, 0.38 * len(report.rows) + 1.2))
    im = ax.imshow(100.0 * values, cmap="viridis", vmin=0.0, vmax=100.0, aspect="auto")
    ax.set_xticks(range(len(columns)), labels=columns, rotation=30, ha="right")
    ax.set_yticks(range(len(report.rows)), labels=[row_label(s, m) for s, m in report.rows])
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            v = 100.0 * values[i, j]
            ax.text(j, i, f"{v:.1f}", ha="center", va="center", fontsize=7,
                    color="black" if v > 60 else "white")
            if j < len(report.targets) and report.is_diagonal(i, report.targets[j]):
                ax.add_patch(plt.Rectangle((j - 0.5, i - 0.5), 1, 1, fill=False, lw=1.5, ec="red"))
    fig.colorbar(im, ax=ax, label="misclassification error (%)")
    fig.tight_layout()
    return _save(fig, path)


def ensemble_bars(report, path):
    """Ensemble error per attack row next to the clean baseline."""
    if report.ensemble is None:
        raise ValueError("report has no ensemble column")
    labels = [row_label(s, m) for s, m in report.rows]
    fig, ax = plt.subplots(figsize=(7.5, 0.32 * len(labels) + 1.2))
    y = np.arange(len(labels))
    ax.barh(y, 100.0 * report.ensemble, color="tab:blue")
    ax.axvline(100.0 * report.ensemble[0], color="gray", ls="--", lw=1, label="clean")
    ax.set_yticks(y, labels=labels)
    ax.invert_yaxis()
    ax.set_xlim(0, 100)
    ax.set_xlabel("ensemble misclassification error (%)")
    ax.legend(loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def perturbation_triptych(original, adversarial, path, title=None):
    """Original, adversarial and |difference|. The first two share the
    pixel range [0, 1]; the difference panel is min-max rescaled to its own
    range, stated on the colorbar."""
    original = np.asarray(original, dtype=np.float64)
    adversarial = np.asarray(adversarial, dtype=np.float64)
    diff = np.abs(adversarial - original)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, img, name in ((axes[0], original, "original"), (axes[1], adversarial, "adversarial")):
        ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0, aspect="auto", interpolation="nearest")
        ax.set_title(name)
    hi = float(diff.max())
    im = axes[2].imshow(diff, cmap="magma", vmin=0.0, vmax=hi if hi > 0 else 1.0, aspect="auto",
                        interpolation="nearest")
    axes[2].set_title("|difference| (rescaled)")
    fig.colorbar(im, ax=axes[2], label=f"absolute change, max {hi:.3g}")
    for ax in axes:
        ax.set_xlabel("column")
    axes[0].set_ylabel("row")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def training_curves(histories, path):
    """``histories`` maps model name to ``[(epoch, loss, train_error), ...]``."""
    fig, (ax_loss, ax_err) = plt.subplots(1, 2, figsize=(10, 3.6))
    for name, history in histories.items():
        if not history:
            continue
        epochs, loss, err = (np.array(c, dtype=np.float64) for c in zip(*history))
        label = MODEL_LABELS.get(name, name)
        ax_loss.plot(epochs, loss, marker=".", label=label)
        ax_err.plot(epochs, 100.0 * err, marker=".", label=label)
    ax_loss.set_yscale("log")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_err.set_xlabel("epoch")
    ax_err.set_ylabel("training error (%)")
    ax_loss.legend()
    fig.tight_layout()
    return _save(fig, path)
