"""Report figures, rendered off-screen to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_pr_curve(curve, path, operating_point=None, title="Error detection"):
    """Precision against recall, one marker per threshold."""
    curve = np.asarray(curve, dtype=np.float64).reshape(-1, 3)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.plot(curve[:, 2], curve[:, 1], "o-", ms=3)
    if operating_point is not None:
        _, prec, rec = operating_point
        ax.plot([rec], [prec], "r*", ms=12, label=f"P={prec:.3f} R={rec:.3f}")
        ax.legend(loc="lower left")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_per_object_vi(curves: dict, path):
    """Cumulative distribution of per-object VI, one line per named segmentation."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, vi in curves.items():
        vi = np.sort(np.asarray(vi, dtype=np.float64))
        if vi.size == 0:
            continue
        ax.step(vi, np.arange(1, vi.size + 1) / vi.size, where="post", label=name)
    ax.set_xlabel("per-object VI (nats)")
    ax.set_ylabel("fraction of objects")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
