"""Figures for training and inspection runs (rendered with the Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

ROLE_LABELS = ("o", "oo", "ot", "t", "tt", "to")


def plot_loss_curve(log: Sequence, path, title: str = "training loss") -> Path:
    """Per-step loss with the learning rate on a twin axis."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5), constrained_layout=True)
    steps = [r.step for r in log]
    ax.plot(steps, [r.loss for r in log], color="tab:blue", lw=1.2, label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("BCE loss")
    ax.set_title(title)
    if steps:
        ax.set_yscale("log")
        lr_ax = ax.twinx()
        lr_ax.step(steps, [r.lr for r in log], where="post", color="tab:gray", lw=0.8, ls="--")
        lr_ax.set_ylim(0, 1.1 * max(r.lr for r in log))
        lr_ax.set_ylabel("learning rate", color="tab:gray")
    else:
        ax.text(0.5, 0.5, "no steps", ha="center", va="center", transform=ax.transAxes)
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _bars(ax, values, labels, title):
    x = np.arange(len(values))
    ax.bar(x, values, color="tab:orange")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylim(0, 1)
    ax.set_title(title, fontsize=9)


def plot_attention(dump: dict, path) -> Path:
    """Question-role token attention, node/edge attention and the fused α weights."""
    path = Path(path)
    fig = plt.figure(figsize=(11, 6.5), constrained_layout=True)
    grid = fig.add_gridspec(2, 4)

    roles = dump["question_roles"]
    words = dump["question_tokens"]
    heat = np.array([roles[r]["token_attention"] for r in ROLE_LABELS])
    ax = fig.add_subplot(grid[0, :2])
    im = ax.imshow(heat, aspect="auto", cmap="viridis", vmin=0, vmax=1)
    ax.set_yticks(range(len(ROLE_LABELS)))
    ax.set_yticklabels(ROLE_LABELS)
    ax.set_xticks(range(len(words)))
    ax.set_xticklabels(words, rotation=45, ha="right", fontsize=8)
    ax.set_title("decomposed question attention", fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.8)

    ocr = dump["ocr_tokens"]
    n_obj = len(dump["node_attention"]["o"])
    obj_labels = [f"obj{i}" for i in range(n_obj)]
    ax = fig.add_subplot(grid[0, 2])
    _bars(ax, dump["alpha"]["object"], obj_labels, "α object")
    ax = fig.add_subplot(grid[0, 3])
    _bars(ax, dump["alpha"]["text"], ocr, "α text")

    for col, role in enumerate(("oo", "ot", "tt", "to")):
        entry = dump["edge_attention"][role]
        ax = fig.add_subplot(grid[1, col])
        src = obj_labels if role[0] == "o" else list(ocr)
        dst = obj_labels if role[1] == "o" else list(ocr)
        mat = np.zeros((len(src), len(dst)))
        for e in entry["edges"]:
            mat[e["source"], e["target"]] = e["q"]
        ax.imshow(mat, cmap="magma", vmin=0, vmax=1, aspect="auto")
        ax.set_yticks(range(len(src)))
        ax.set_yticklabels([f"{s} ({p:.2f})" for s, p in zip(src, entry["p"])], fontsize=7)
        ax.set_xticks(range(len(dst)))
        ax.set_xticklabels(dst, rotation=45, ha="right", fontsize=7)
        state = "" if entry["enabled"] else " (disabled)"
        ax.set_title(f"edge attention {role}{state}", fontsize=9)

    fig.suptitle(f"{dump['id']}: {dump['question']}  →  {dump['answer']!r}", fontsize=10)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
