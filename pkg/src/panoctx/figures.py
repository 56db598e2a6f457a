"""Matplotlib renderings of the report artifacts.

Every CLI command that emits CSV/JSON also drops PNG figures next to
them (disable with --no-figures). Rendering is file-only: the Agg
backend is forced before pyplot is imported.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .formats import LabelMap


def save_entries_chart(rows, path) -> None:
    """Log-scale bar chart of analytic vs measured affinity entries.

    `rows` are mappings with config/he/we/analytic_entries/measured_entries.
    """
    labels = [f"{r['config']}\n{r['he']}x{r['we']}" for r in rows]
    analytic = [r["analytic_entries"] for r in rows]
    measured = [r["measured_entries"] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(rows)), 4))
    ax.bar(x - 0.2, analytic, width=0.4, label="analytic")
    ax.bar(x + 0.2, measured, width=0.4, label="measured")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("affinity entries")
    ax.set_title("Affinity-map entries per configuration")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_gradcheck_chart(results, tol: float, path) -> None:
    """Bar chart of max relative gradient errors with the tolerance line."""
    names = [r["op"] for r in results]
    errors = [max(r["max_rel_error"], 1e-18) for r in results]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(names)), 4))
    ax.bar(x, errors, color=["tab:green" if r["passed"] else "tab:red" for r in results])
    ax.axhline(tol, color="black", linestyle="--", label=f"tolerance {tol:g}")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("max relative error")
    ax.set_title("Gradient check: analytic vs central differences")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_label_map_figure(label_map: LabelMap, path, title: str | None = None) -> None:
    """Discrete-color rendering of an indexed label raster with a legend."""
    k = len(label_map.classes)
    cmap = plt.get_cmap("tab20", max(k, 2))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.imshow(label_map.indices, cmap=cmap, vmin=-0.5, vmax=max(k, 2) - 0.5,
              interpolation="nearest")
    handles = [
        plt.Rectangle((0, 0), 1, 1, color=cmap(i)) for i in range(k)
    ]
    ax.legend(handles, label_map.classes, loc="center left",
              bbox_to_anchor=(1.02, 0.5), fontsize=7)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_heatmap_figure(values: np.ndarray, path, title: str | None = None,
                        colorbar_label: str | None = None) -> None:
    """Continuous heatmap of a 2-D float raster."""
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(np.asarray(values), cmap="viridis", interpolation="nearest")
    cbar = fig.colorbar(im, ax=ax)
    if colorbar_label:
        cbar.set_label(colorbar_label)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
