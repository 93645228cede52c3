"""Accuracy and error curves for evaluation grids."""

from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import Grid  # noqa: E402


def plot_grid(grid: Grid, out_dir) -> List[Path]:
    """Write ``<family>_accuracy.png`` and ``<family>_errors.png``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric, ylabel in (("accuracy", "accuracy (%)"), ("errors", "incorrect decodes")):
        mat = grid.matrix(metric)
        if metric == "accuracy":
            mat = 100 * mat
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, row in zip(grid.sources, mat):
            ax.plot(grid.max_iters, row[1:], marker="o", label=f"{name} ({grid.family})")
            ax.axhline(row[0], linestyle="--", linewidth=1, color=ax.lines[-1].get_color(),
                       label=f"{name} greedy")
        ax.set_xlabel("max_iter")
        ax.set_ylabel(ylabel)
        ax.set_xticks(grid.max_iters)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{grid.family}_{metric}.png"
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
