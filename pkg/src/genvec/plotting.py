"""Figures written next to the TSV/JSON reports.

Uses the Agg backend and strips PNG metadata so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.0, 3.0),
    "figure.dpi": 100,
}
METHOD_COLORS = {"prototype": "#c0392b", "generative": "#2471a3"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_capacity(report, path) -> None:
    """Accuracy against reduced dimension, one line per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method in ("prototype", "generative"):
            pts = sorted((d, a) for d, m, a in report.rows if m == method)
            if pts:
                dims, accs = zip(*pts)
                ax.plot(dims, accs, "o-", label=method, color=METHOD_COLORS[method])
        ax.set_xscale("log", base=2)
        ax.set_xlabel("reduced dimension")
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0.0, 1.02)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_loss(history, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(range(1, len(history) + 1), history, color="k", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean training loss")
        _save(fig, path)
