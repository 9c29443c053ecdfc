"""Self-contained SVG figures for reports, training and diagnostics.

Output is byte-stable for identical inputs: the SVG hash salt is fixed and
no creation date is embedded.
"""

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

STYLE = {
    "svg.hashsalt": "denoisenet",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.2),
    "axes.grid": True,
    "grid.alpha": 0.3,
}
METADATA = {"Date": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=METADATA)
    plt.close(fig)
    return path


def profile_plot(profiles: Mapping, baseline: str, path: Path) -> Path:
    """Sorted per-image gains over ``baseline``, one line per denoiser."""
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name in sorted(profiles):
            curve = profiles[name]
            ax.plot(np.arange(len(curve.gains)), curve.gains, label=f"{name} (zero crossing {curve.zero_crossing})")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xlabel("image index (sorted by gain)")
        ax.set_ylabel(f"PSNR gain over {baseline} [dB]")
        ax.legend(loc="upper left")
        return _save(fig, path)


def wins_plot(wins: Mapping[str, float], path: Path) -> Path:
    names = sorted(wins)
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(names, [100.0 * wins[n] for n in names], color="tab:blue")
        ax.bar_label(bars, fmt="%.1f%%")
        ax.set_ylabel("images won [%]")
        ax.set_ylim(0, 105)
        return _save(fig, path)


def confusion_plot(classes: Sequence[str], denoisers: Sequence[str], matrix: np.ndarray, path: Path) -> Path:
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots()
        image = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="Blues")
        ax.grid(False)
        ax.set_xticks(range(len(denoisers)), labels=list(denoisers), rotation=45, ha="right")
        ax.set_yticks(range(len(classes)), labels=list(classes))
        ax.set_xlabel("denoiser")
        ax.set_ylabel("image class")
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center",
                        color="white" if matrix[i, j] > 0.5 else "black")
        fig.colorbar(image, ax=ax, label="win probability")
        return _save(fig, path)


def class_means_plot(means: pd.DataFrame, path: Path) -> Path:
    """Grouped bars of mean PSNR per class, one bar per denoiser."""
    table = means.pivot(index="class", columns="denoiser", values="mean_psnr_db").sort_index()
    classes = list(table.index)
    names = sorted(table.columns)
    width = 0.8 / max(len(names), 1)
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(classes))
        for k, name in enumerate(names):
            ax.bar(x + k * width - 0.4 + width / 2, table[name].to_numpy(), width, label=name)
        ax.set_xticks(x, labels=classes)
        ax.set_ylabel("mean PSNR [dB]")
        finite = table.to_numpy()[np.isfinite(table.to_numpy())]
        if finite.size:
            ax.set_ylim(finite.min() - 1.0, finite.max() + 0.5)
        ax.legend(loc="lower right")
        return _save(fig, path)


def curve_plot(values: Sequence[float], xlabel: str, ylabel: str, path: Path, start: int = 0) -> Path:
    """Single line plot; used for loss history and RMSE against depth."""
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.arange(start, start + len(values)), np.asarray(values, dtype=np.float64), marker="." if len(values) < 64 else None)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        return _save(fig, path)
