"""Figure rendering for report outputs.

Uses the non-interactive Agg backend so figures render to files in headless
environments. Each function writes a PNG next to the delimited report it
illustrates and returns the path written.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .diagnostics import KnorReport  # noqa: E402
from .metrics import MetricReport  # noqa: E402


def render_knor_figure(report: KnorReport, out_path: str | Path) -> Path:
    """Line chart of neighborhood overlap versus k, y fixed to [0, 1]."""
    out = Path(out_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(report.k_values, report.scores, marker="o")
    ax.set_xlabel("k")
    ax.set_ylabel("mean neighborhood overlap")
    ax.set_title(f"Cross-modal retrieval overlap ({report.pair_count} pairs)")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_eval_figure(report: MetricReport, out_path: str | Path) -> Path:
    """Summary bars for the corpus metrics plus a per-instance score histogram."""
    out = Path(out_path)
    fig, (ax_bars, ax_hist) = plt.subplots(1, 2, figsize=(10, 4))

    names = ["BLEU-1", "BLEU-4", "CIDEr"]
    values = [report.bleu1, report.bleu4, report.cider]
    bars = ax_bars.bar(names, values, color=["#4c72b0", "#55a868", "#c44e52"])
    for bar, value in zip(bars, values):
        ax_bars.text(bar.get_x() + bar.get_width() / 2, bar.get_height(),
                     f"{value:.4f}", ha="center", va="bottom", fontsize=9)
    ax_bars.set_ylabel("score")
    ax_bars.set_title(f"Corpus metrics ({report.instance_count} instances)")

    ax_hist.hist(report.per_instance_cider, bins=20, color="#8172b2")
    ax_hist.set_xlabel("per-instance consensus score")
    ax_hist.set_ylabel("count")
    ax_hist.set_title("Score distribution")

    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_gap_figure(labels: list[str], radii: list[float], out_path: str | Path) -> Path:
    """Bar chart comparing mean paired distances across correction settings."""
    out = Path(out_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(labels, radii, color="#4c72b0")
    for bar, value in zip(bars, radii):
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height(),
                f"{value:.4f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("mean paired distance")
    ax.set_title("Modality gap radius by correction mode")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


__all__ = ["render_knor_figure", "render_eval_figure", "render_gap_figure"]
