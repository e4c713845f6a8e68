"""Headless matplotlib renderers for the report artifacts.

Every function draws one figure and writes it to the given path (format
inferred from the suffix), returning the path as a string. The Agg backend
is forced before pyplot loads so rendering works without a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SENTIMENT_NAMES = ("negative", "neutral", "positive")


def _finish(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_history(history, path) -> str:
    """Training loss and accuracy per epoch on twin axes."""
    if not history:
        raise ValueError("empty training history")
    epochs = [row["epoch"] for row in history]
    fig, ax_loss = plt.subplots(figsize=(6, 4))
    ax_loss.plot(epochs, [row["loss"] for row in history],
                 color="tab:red", marker="o", label="loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean train loss", color="tab:red")
    ax_acc = ax_loss.twinx()
    ax_acc.plot(epochs, [row["accuracy"] for row in history],
                color="tab:blue", marker="s", label="accuracy")
    ax_acc.set_ylabel("train accuracy", color="tab:blue")
    ax_acc.set_ylim(0.0, 1.05)
    ax_loss.set_title("training progress")
    return _finish(fig, path)


def plot_class_distribution(counts, class_names, path) -> str:
    counts = np.asarray(counts)
    if counts.size != len(class_names):
        raise ValueError("one count per class name required")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(counts.size), counts, color="tab:gray")
    ax.set_xticks(range(counts.size))
    ax.set_xticklabels(class_names, rotation=20, ha="right")
    ax.set_ylabel("posts")
    ax.set_title("class distribution")
    return _finish(fig, path)


def plot_sentiment_distribution(fractions, path) -> str:
    fractions = np.asarray(fractions)
    if fractions.size != 3:
        raise ValueError("expected (negative, neutral, positive) fractions")
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(range(3), fractions, color=("tab:red", "tab:gray", "tab:green"))
    ax.set_xticks(range(3))
    ax.set_xticklabels(SENTIMENT_NAMES)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("fraction of posts")
    ax.set_title("sentiment distribution")
    return _finish(fig, path)


def plot_topic_sweep(rows, path) -> str:
    """Held-in log likelihood against topic count; rows are (K, ll) pairs."""
    if not rows:
        raise ValueError("empty sweep")
    ks = [k for k, _ in rows]
    lls = [ll for _, ll in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, lls, marker="o", color="tab:purple")
    ax.set_xlabel("topic count")
    ax.set_ylabel("log likelihood")
    ax.set_title("topic count sweep")
    return _finish(fig, path)


def plot_confusion(cm, class_names, path) -> str:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if cm.shape[0] != len(class_names):
        raise ValueError("one name per class required")
    fig, ax = plt.subplots(figsize=(5.5, 5))
    image = ax.imshow(cm, cmap="Blues")
    fig.colorbar(image, ax=ax, shrink=0.8)
    threshold = cm.max() / 2 if cm.max() else 0.5
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                    color="white" if cm[i, j] > threshold else "black")
    ax.set_xticks(range(cm.shape[0]))
    ax.set_xticklabels(class_names, rotation=20, ha="right")
    ax.set_yticks(range(cm.shape[0]))
    ax.set_yticklabels(class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title("confusion matrix")
    return _finish(fig, path)


def plot_ablation(rows, metric, path) -> str:
    """One bar per modality variant for the chosen metric."""
    if not rows:
        raise ValueError("empty ablation results")
    names = [row["config"] for row in rows]
    values = [row["metrics"][metric] for row in rows]
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.bar(range(len(names)), values, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=15, ha="right")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_title("modality ablation")
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    return _finish(fig, path)


def plot_likelihood_trace(trace, path) -> str:
    """Gibbs log likelihood per sweep."""
    trace = np.asarray(trace)
    if trace.size == 0:
        raise ValueError("empty likelihood trace")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, trace.size + 1), trace, color="tab:orange")
    ax.set_xlabel("sweep")
    ax.set_ylabel("log likelihood")
    ax.set_title("sampler progress")
    return _finish(fig, path)
