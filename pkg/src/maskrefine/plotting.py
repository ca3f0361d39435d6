"""Figures written next to the train-demo report."""
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "maskrefine",
}


def _save(fig, path):
    # no Software/date metadata so reruns give identical bytes
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def loss_curve(trace, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.plot(np.arange(1, len(trace) + 1), trace, marker="o", ms=3, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean focal loss")
        fig.tight_layout()
        _save(fig, path)


def refinement_examples(rows, path):
    """``rows`` holds ``(gt, bilinear, refined)`` binary masks per instance."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(rows), 3, figsize=(4.5, 1.5 * len(rows)), squeeze=False)
        for r, masks in enumerate(rows):
            for c, (title, m) in enumerate(zip(("ground truth", "bilinear", "refined"), masks)):
                ax = axes[r, c]
                ax.imshow(m, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
                ax.set_xticks([])
                ax.set_yticks([])
                if r == 0:
                    ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
