"""SVG figures from the CSV artifacts (loss curves, CDFs, ROC, AMI grids)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids/metadata so the same data renders to the same bytes
matplotlib.rcParams["svg.hashsalt"] = "netmamba"
_META = {"Date": None, "Creator": None}


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    out = {}
    for k in rows[0]:
        try:
            out[k] = np.array([float(r[k]) for r in rows])
        except ValueError:
            out[k] = np.array([r[k] for r in rows])
    return out


def _save(fig, out: str | Path) -> Path:
    out = Path(out)
    fig.savefig(out, format="svg", metadata=_META)
    plt.close(fig)
    return out


def plot_loss(loss_csv: str | Path, out: str | Path) -> Path:
    d = read_csv(loss_csv)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k in ("total", "stride", "size", "interval"):
        if k in d:
            ax.plot(d["step"], d[k], label=k, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("reconstruction loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return _save(fig, out)


def plot_cdf(stats_csv: str | Path, out: str | Path) -> Path:
    """Side-by-side CDFs of per-batch throughput and latency."""
    d = read_csv(stats_csv)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, key, label in ((axes[0], "throughput_mbps", "throughput (Mb/s)"),
                           (axes[1], "latency_seconds", "latency (s)")):
        v = np.sort(d.get(key, np.zeros(0)))
        ax.step(v, np.arange(1, len(v) + 1) / max(len(v), 1), where="post")
        ax.set_xlabel(label)
        ax.set_ylabel("CDF")
        ax.set_ylim(0, 1.02)
    fig.tight_layout()
    return _save(fig, out)


def plot_roc(roc_csv: str | Path, out: str | Path) -> Path:
    d = read_csv(roc_csv)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(d["fpr"], d["tpr"], lw=1.2)
    ax.plot([0, 1], [0, 1], ls=":", c="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate (OOD)")
    fig.tight_layout()
    return _save(fig, out)


def plot_ami(ami_csv: str | Path, out: str | Path, n_header: int | None = None) -> Path:
    """Heat map, one row per packet; a vertical rule marks the header/payload boundary."""
    grid = np.loadtxt(ami_csv, delimiter=",", ndmin=2)
    fig, ax = plt.subplots(figsize=(9, 2.5))
    im = ax.imshow(grid, aspect="auto", cmap="viridis", vmin=0, vmax=max(float(grid.max()), 1e-9))
    if n_header:
        ax.axvline(n_header - 0.5, c="white", lw=1)
    ax.set_xlabel("stride position")
    ax.set_ylabel("packet")
    fig.colorbar(im, ax=ax, label="AMI")
    fig.tight_layout()
    return _save(fig, out)
