"""Report figures, written straight to files (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from stablescore.metrics import BinnedComparison  # noqa: E402

MARKERS = ("o", "s", "^", "D", "v")

# Fixed metadata keeps PNG bytes reproducible for a given matplotlib version.
_PNG_META = {"Software": None}


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_relative_error(
    series: Mapping[str, BinnedComparison],
    path: str | Path,
    title: str = "Relative error against target distribution",
    clip_pct: float | None = 400.0,
) -> Path:
    """Per-bin relative error (%) with Wilson error bars, one marker style per series.

    Values above ``clip_pct`` are drawn at the clip line and annotated.
    """
    fig, ax = plt.subplots(figsize=(7.5, 3.8))
    k = len(series)
    width = 0.06
    for j, (name, cmp) in enumerate(series.items()):
        centers = 0.5 * (cmp.bin_edges[:-1] + cmp.bin_edges[1:]) + (j - (k - 1) / 2) * width / 2
        rel = 100 * cmp.relative_error
        lo = 100 * cmp.wilson_low
        hi = 100 * cmp.wilson_high
        shown = rel if clip_pct is None else np.minimum(rel, clip_pct)
        err = np.vstack([np.clip(shown - lo, 0, None), np.clip(np.minimum(hi, shown + 50) - shown, 0, None)])
        ax.errorbar(centers, shown, yerr=err, fmt=MARKERS[j % len(MARKERS)], ms=4, capsize=2, label=name)
        if clip_pct is not None:
            for x, r in zip(centers, rel):
                if r > clip_pct:
                    ax.annotate(f"{r:.0f}%", (x, clip_pct), fontsize=7, ha="center", va="bottom")
    ax.axhline(0.0, color="0.3", lw=0.8)
    ax.set_xticks(0.5 * (cmp.bin_edges[:-1] + cmp.bin_edges[1:]))
    ax.set_xticklabels(cmp.labels(), rotation=30, fontsize=7)
    ax.set_xlabel("score bin")
    ax.set_ylabel("relative error (%)")
    ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8, frameon=False)
    return _finish(fig, path)


def plot_reliability(curves: Mapping[str, tuple[np.ndarray, np.ndarray]], path: str | Path) -> Path:
    """Reliability diagram from ``name -> (mean_prediction, positive_rate)`` per bin."""
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.plot([0, 1], [0, 1], color="0.5", lw=0.8, ls="--")
    for j, (name, (mp, rate)) in enumerate(curves.items()):
        ax.plot(mp, rate, marker=MARKERS[j % len(MARKERS)], ms=3, lw=1, label=name)
    ax.set_xlabel("mean prediction")
    ax.set_ylabel("positive rate")
    ax.legend(fontsize=8, frameon=False)
    return _finish(fig, path)
