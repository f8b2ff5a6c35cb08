"""Matplotlib figures written next to the CSV/PGM outputs of the CLI."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

AXIS_LABELS = {
    "detector_sigma": "detector noise S/N",
    "device_sigma": "device variation sigma (rad)",
    "splitter_epsilon": "splitter offset",
}


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def accuracy_heatmap(row_values, col_values, means, path, row_axis, col_axis, title=""):
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(means, origin="lower", aspect="auto", cmap="viridis", vmin=0, vmax=1)
    ax.set_xticks(range(len(col_values)), [f"{v:g}" for v in col_values])
    ax.set_yticks(range(len(row_values)), [f"{v:g}" for v in row_values])
    ax.set_xlabel(AXIS_LABELS.get(col_axis, col_axis))
    ax.set_ylabel(AXIS_LABELS.get(row_axis, row_axis))
    for i in range(means.shape[0]):
        for j in range(means.shape[1]):
            if np.isfinite(means[i, j]):
                ax.text(j, i, f"{means[i, j]:.3f}", ha="center", va="center", fontsize=7,
                        color="w" if means[i, j] < 0.6 else "k")
    fig.colorbar(im, ax=ax, label="accuracy")
    ax.set_title(title)
    return _save(fig, path)


def training_curves(metrics, task_names, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [m["epoch"] for m in metrics]
    for t, name in enumerate(task_names):
        ax1.plot(epochs, [m["train_loss"][t] for m in metrics], marker="o", label=name)
        ax2.plot(epochs, [m["test_accuracy"][t] for m in metrics], marker="o", label=name)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("test accuracy")
    ax2.legend()
    return _save(fig, path)


def trace_montage(trace, reading, path, title=""):
    """Magnitude of every stage left to right, with the detector reading as bars."""
    stages = trace.stages()
    fig, axes = plt.subplots(1, len(stages) + 1, figsize=(1.8 * (len(stages) + 1), 2.2))
    for ax, (name, data) in zip(axes, stages):
        ax.imshow(np.abs(data), cmap="inferno")
        ax.set_title(name, fontsize=7)
        ax.axis("off")
    axes[-1].bar(range(len(reading)), reading, color="tab:blue")
    axes[-1].set_title("detectors", fontsize=7)
    axes[-1].tick_params(labelsize=6)
    fig.suptitle(title, fontsize=9)
    return _save(fig, path)
