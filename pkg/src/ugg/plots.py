"""Deterministic SVG plots (no timestamps, fixed element ids)."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "ugg", "svg.fonttype": "none", "figure.figsize": (5, 3.5)}


def _to_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def line_svg(xs, ys, xlabel: str, ylabel: str, title: str = "") -> str:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(list(xs), list(ys), marker="o")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _to_svg(fig)


def histogram_svg(values, bins: int = 20, xlabel: str = "", title: str = "") -> str:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.hist(list(values), bins=bins, range=(0.0, 1.0))
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _to_svg(fig)


def bar_svg(names, values, ylabel: str = "") -> str:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.bar(range(len(names)), list(values))
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        return _to_svg(fig)
