"""Render evaluation reports (confusion heatmaps, window-size curves) with matplotlib."""
from __future__ import annotations

import numpy as np

from .gestures import LABELS, N_CLASSES


class MalformedReport(ValueError):
    pass


def _confusion_from(report: dict) -> np.ndarray:
    kind = report.get("kind")
    if kind == "metrics":
        mats = [report.get("confusion")]
    elif kind == "loso":
        rows = report.get("rows")
        if not isinstance(rows, list) or not rows:
            raise MalformedReport("loso report has no rows")
        mats = [r.get("confusion") if isinstance(r, dict) else None for r in rows]
    else:
        raise MalformedReport(f"no confusion matrix in a report of kind {kind!r}")
    total = np.zeros((N_CLASSES, N_CLASSES))
    for m in mats:
        try:
            arr = np.asarray(m, dtype=np.float64)
        except (TypeError, ValueError):
            raise MalformedReport("confusion matrix is not numeric") from None
        if arr.shape != (N_CLASSES, N_CLASSES):
            raise MalformedReport(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got shape {arr.shape}")
        total += arr
    return total


def plot_confusion(counts: np.ndarray, path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = counts.sum(axis=1, keepdims=True)
    norm = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    fig, ax = plt.subplots(figsize=(7.5, 6.5))
    im = ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(N_CLASSES), LABELS, rotation=45, ha="right")
    ax.set_yticks(range(N_CLASSES), LABELS)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(N_CLASSES):
        for j in range(N_CLASSES):
            if rows[i, 0] > 0:
                ax.text(j, i, f"{100 * norm[i, j]:.0f}", ha="center", va="center", fontsize=7,
                        color="white" if norm[i, j] > 0.6 else "black")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_window_study(rows: list[dict], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sizes = [r["size"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, [100 * r["overall_accuracy"] for r in rows], "o-", label="overall accuracy")
    ax.plot(sizes, [100 * r["mean_class_accuracy"] for r in rows], "s--", label="mean class accuracy")
    ax.set_xlabel("window size (frames)")
    ax.set_ylabel("accuracy (%)")
    ax.set_xticks(sizes)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report(report, path) -> None:
    """Dispatch on ``report["kind"]``; raises :class:`MalformedReport` on bad input."""
    if not isinstance(report, dict):
        raise MalformedReport("report must be a JSON object")
    kind = report.get("kind")
    if kind == "window_study":
        rows = report.get("rows")
        if not isinstance(rows, list) or not rows:
            raise MalformedReport("window study has no rows")
        for r in rows:
            if not isinstance(r, dict) or not all(
                isinstance(r.get(k), (int, float)) for k in ("size", "overall_accuracy", "mean_class_accuracy")
            ):
                raise MalformedReport(f"bad window study row {r!r}")
        plot_window_study(rows, path)
    elif kind in ("metrics", "loso"):
        title = report.get("subject", "") if kind == "metrics" else f"LOSO ({report.get('mode', '')})"
        plot_confusion(_confusion_from(report), path, title)
    else:
        raise MalformedReport(f"unknown report kind {kind!r}")
