"""ROC figures rendered to files.

Uses the object-oriented matplotlib API (no pyplot state), and pins the SVG
hash salt and drops the date stamp so repeated renders are byte-identical.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib
from matplotlib.figure import Figure

_COLORS = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]


def roc_figure(curves: Mapping[str, Sequence], title: str = "") -> Figure:
    """Overlay per-model ROC curves for each method, with the chance diagonal."""
    fig = Figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    ax.plot([0, 1], [0, 1], color="black", linestyle="--", linewidth=0.8, label="chance")
    for i, (method, per_model) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        for m, curve in enumerate(per_model):
            ax.plot(curve.fpr, curve.tpr, color=color, linewidth=0.9, alpha=0.7,
                    marker=".", markersize=2, label=method if m == 0 else None)
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_aspect("equal")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize="small", frameon=False)
    fig.tight_layout()
    return fig


def save_figure(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = path.suffix.lstrip(".") or "svg"
    metadata = {"Date": None} if fmt in ("svg", "pdf") else None
    with matplotlib.rc_context({"svg.hashsalt": "attrib-audit", "svg.fonttype": "path"}):
        fig.savefig(path, format=fmt, metadata=metadata)
    return path
