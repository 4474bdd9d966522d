"""Report figures: predicted-vs-rated scatter, ROC curves, confusion matrix."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # fixed metadata keeps re-rendered files identical
    "svg.hashsalt": "pdpose",
}


def _grid(n, width=2.4, height=2.4):
    cols = min(n, 3)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(width * cols, height * rows), squeeze=False,
                             layout="constrained")
    for ax in axes.flat[n:]:
        ax.set_visible(False)
    return fig, list(axes.flat[:n])


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def roc_points(scores, labels):
    """ROC curve vertices (false-positive rate, true-positive rate)."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels) == 1
    thresholds = np.unique(scores)[::-1]
    p, n = labels.sum(), (~labels).sum()
    fpr, tpr = [0.0], [0.0]
    for t in thresholds:
        sel = scores >= t
        tpr.append((sel & labels).sum() / p if p else 0.0)
        fpr.append((sel & ~labels).sum() / n if n else 0.0)
    return np.array(fpr), np.array(tpr)


def scatter_panel(groups: dict, path, title: str = "", max_value: float = 4.0):
    """One predicted-vs-rated panel per key of ``groups`` -> (truth, pred, r)."""
    with plt.rc_context(RC):
        fig, axes = _grid(len(groups))
        for ax, (name, (truth, pred, r)) in zip(axes, groups.items()):
            ax.scatter(truth, pred, s=8, alpha=0.7, color="tab:blue", edgecolors="none")
            hi = max(max_value, float(np.max(truth, initial=0)), float(np.max(pred, initial=0)))
            ax.plot([0, hi], [0, hi], color="0.6", lw=0.8, ls="--")
            ax.set_xlim(-0.05 * hi, 1.05 * hi)
            ax.set_ylim(-0.05 * hi, 1.05 * hi)
            ax.set_xlabel("mean clinician rating")
            ax.set_ylabel("predicted")
            label = name if r is None else f"{name} (r = {r:.3f})"
            ax.set_title(label)
        if title:
            fig.suptitle(title)
        return _save(fig, Path(path))


def roc_panel(curves: dict, path, title: str = ""):
    """ROC curves, one line per key of ``curves`` -> (scores, labels, auc)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.4, 3.2))
        for name, (scores, labels, auc) in curves.items():
            if auc is None:
                continue
            fpr, tpr = roc_points(scores, labels)
            ax.plot(fpr, tpr, lw=1.2, label=f"{name} ({auc:.3f})")
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right", frameon=False, title="AUC")
        if title:
            ax.set_title(title)
        return _save(fig, Path(path))


def confusion_panel(truth, pred, classes, path, title: str = ""):
    truth, pred = np.asarray(truth), np.asarray(pred)
    m = np.array([[np.sum((truth == a) & (pred == b)) for b in classes] for a in classes])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.2, 2.8))
        ax.imshow(m, cmap="Blues")
        for i in range(len(classes)):
            for j in range(len(classes)):
                ax.text(j, i, str(m[i, j]), ha="center", va="center",
                        color="white" if m[i, j] > m.max() / 2 else "black")
        ax.set_xticks(range(len(classes)), classes)
        ax.set_yticks(range(len(classes)), classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("clinician label")
        if title:
            ax.set_title(title)
        return _save(fig, Path(path))
