"""Matplotlib renderings of study reports, written to files next to the
delimited exports."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import StudyReport


def _save(fig, path: str) -> str:
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def pick_rate_figure(report: StudyReport, path: str) -> str:
    """Grouped bars: picked-as-fake vs picked-as-real per generator."""
    gens = [m.generator for m in report.methods]
    as_fake = [m.pick_rate_as_fake or 0.0 for m in report.methods]
    as_real = [m.pick_rate_as_real or 0.0 for m in report.methods]
    x = np.arange(len(gens))
    width = 0.38

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    bars1 = ax.bar(x - width / 2, as_fake, width, label="picked as fake", color="#c0504d")
    bars2 = ax.bar(x + width / 2, as_real, width, label="picked as real", color="#4f81bd")
    for bars in (bars1, bars2):
        for b in bars:
            ax.annotate(
                f"{b.get_height():.1f}",
                (b.get_x() + b.get_width() / 2, b.get_height()),
                ha="center",
                va="bottom",
                fontsize=8,
            )
    ax.set_xticks(x)
    ax.set_xticklabels([g.upper() for g in gens])
    ax.set_ylabel("pick rate [%]")
    ax.set_ylim(0, 110)
    ax.set_title("Forced-choice pick rate per generator")
    ax.legend(fontsize=8)
    return _save(fig, path)


def _draw_matrix(ax, matrix, title: str) -> None:
    counts = np.array([[matrix.tp, matrix.fn], [matrix.fp, matrix.tn]], dtype=float)
    rel = matrix.relative()
    rel_grid = np.array(
        [[rel["tp"] or 0.0, rel["fn"] or 0.0], [rel["fp"] or 0.0, rel["tn"] or 0.0]]
    )
    ax.imshow(rel_grid, cmap="Blues", vmin=0.0, vmax=100.0)
    for (i, j), count in np.ndenumerate(counts):
        ax.text(
            j,
            i,
            f"{int(count)}\n{rel_grid[i, j]:.1f}%",
            ha="center",
            va="center",
            fontsize=9,
            color="black",
        )
    ax.set_xticks([0, 1], labels=["judged fake", "judged real"], fontsize=8)
    ax.set_yticks([0, 1], labels=["fake", "real"], fontsize=8)
    ax.set_ylabel("truth", fontsize=8)
    ax.set_title(title, fontsize=10)


def confusion_figure(report: StudyReport, path: str) -> str:
    """Absolute counts and relative shares for each generator plus overall."""
    n = len(report.methods) + 1
    fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 3.0))
    for ax, m in zip(axes, report.methods):
        _draw_matrix(ax, m.confusion, m.generator.upper())
    _draw_matrix(axes[-1], report.overall, "overall")
    fig.suptitle("Real-vs-fake confusion (absolute and relative)", fontsize=11)
    fig.tight_layout()
    return _save(fig, path)


def render_report_figures(report: StudyReport, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    return [
        pick_rate_figure(report, os.path.join(out_dir, "pick_rate.png")),
        confusion_figure(report, os.path.join(out_dir, "confusion_matrices.png")),
    ]
