"""Report figures, rendered off-screen to image files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_series(rows: list[dict], keys, path, title: str = ""):
    """One stacked panel per key against ``time``."""
    t = np.array([r["time"] for r in rows])
    fig, axes = plt.subplots(len(keys), 1, figsize=(6, 1.8 * len(keys)), sharex=True, squeeze=False)
    for ax, k in zip(axes[:, 0], keys):
        ax.plot(t, [r[k] for r in rows], lw=1.2)
        ax.set_ylabel(k)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("time [s]")
    if title:
        axes[0, 0].set_title(title)
    _save(fig, path)


def plot_depth_maps(current, target, path, title: str = ""):
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.2))
    for ax, dm, name in zip(axes, (current, target), ("indentation", "target")):
        im = ax.imshow(dm.samples.T, origin="lower", cmap="viridis")
        ax.contour(dm.occupancy().T.astype(float), levels=[0.5], colors="w", linewidths=0.8)
        ax.set_title(name)
        fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_particles(x, path, title: str = "", reference=None):
    """Side (x-z) and top (x-y) scatter views."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, (i, j), name in zip(axes, ((0, 2), (0, 1)), ("side", "top")):
        if reference is not None and len(reference):
            ax.scatter(reference[:, i], reference[:, j], s=1, c="0.75", label="reference")
        ax.scatter(x[:, i], x[:, j], s=1, c="tab:orange", label="particles")
        ax.set_aspect("equal")
        ax.set_title(name)
    if reference is not None:
        axes[0].legend(loc="upper right", fontsize=7, markerscale=4)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_bench(rows: list[dict], path, gpu_fps=None):
    """Bar chart of env steps per second per world count; GPU figure drawn as a reference line."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    labels = [f"{r['worlds']} world{'s' if r['worlds'] > 1 else ''}" for r in rows]
    ax.bar(labels, [r["aggregate_env_steps_per_s"] for r in rows], color="tab:blue", label="aggregate")
    ax.bar(labels, [r["env_steps_per_s"] for r in rows], color="tab:cyan", width=0.4, label="per world")
    if gpu_fps:
        ax.axhspan(gpu_fps[0], gpu_fps[1], color="tab:red", alpha=0.3, label="GPU reference (context)")
    ax.set_ylabel("env steps / s")
    ax.legend(fontsize=7)
    _save(fig, path)
