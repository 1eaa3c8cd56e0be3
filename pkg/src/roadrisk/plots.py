"""SVG chart output for the report stage.

Matplotlib is configured for reproducible SVGs: a fixed hash salt and no
embedded creation date, so re-running a report yields identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    matplotlib.rcParams["svg.hashsalt"] = "roadrisk"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt

    plt.close(fig)


def save_roc_svg(path: Path, points: Sequence[tuple[float, float, float]], auc: float) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 5))
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    ax.plot(xs, ys, lw=1.5, label=f"model (AUC = {auc:.3f})")
    ax.plot([0, 1], [0, 1], ls="--", lw=1, color="gray", label="chance")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC curve")
    ax.legend(loc="lower right")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    _save(fig, path)


def save_pr_svg(path: Path, points: Sequence[tuple[float, float, float]]) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 5))
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    ax.plot(xs, ys, lw=1.5)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision (at test-set class balance)")
    ax.set_title("Precision-recall curve")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    _save(fig, path)


def save_threshold_svg(
    path: Path, points: Sequence[tuple[float, float, float, float]]
) -> None:
    """Recall/precision/FPR as functions of the decision threshold."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    finite = [p for p in points if math.isfinite(p[0])]
    ts = [p[0] for p in finite]
    ax.plot(ts, [p[1] for p in finite], lw=1.5, label="recall")
    ax.plot(ts, [p[2] for p in finite], lw=1.5, label="precision")
    ax.plot(ts, [p[3] for p in finite], lw=1.2, ls=":", label="false positive rate")
    ax.set_xlabel("decision threshold")
    ax.set_ylabel("metric value")
    ax.set_title("Metrics vs. threshold")
    ax.legend(loc="best")
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    _save(fig, path)


def save_importance_svg(path: Path, table: Sequence[tuple[str, float]]) -> None:
    plt = _plt()
    names = [name for name, _ in table][::-1]
    values = [v for _, v in table][::-1]
    fig, ax = plt.subplots(figsize=(6, 0.35 * max(4, len(names)) + 1))
    ax.barh(range(len(names)), values)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("impurity-decrease importance (normalized)")
    ax.set_title("Feature importance")
    fig.tight_layout()
    _save(fig, path)
