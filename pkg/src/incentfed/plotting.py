"""Figures written next to the CSV traces.

Only reads traces; nothing here feeds back into the numbers.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_run(trace, out_dir) -> list[Path]:
    """Global loss, participation levels and NE distance for one run."""
    out_dir = Path(out_dir)
    rounds = np.arange(trace.R + 1)
    written = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(rounds, trace.loss, lw=1.5)
        ax.set_xlabel("communication round r")
        ax.set_ylabel("global loss")
        written.append(_save(fig, out_dir / "loss.png"))

        fig, ax = plt.subplots()
        for i in range(trace.m):
            line, = ax.plot(rounds, trace.N[:, i], lw=1.2, label=f"client {i + 1}")
            if trace.n_star is not None:
                ax.axhline(trace.n_star[i], color=line.get_color(), ls=":", lw=0.8)
        ax.set_xlabel("communication round r")
        ax.set_ylabel("participation $N_{i,r}$")
        ax.legend(ncol=2)
        written.append(_save(fig, out_dir / "participation.png"))

        if trace.n_star is not None:
            fig, ax = plt.subplots()
            dist = np.where(trace.ne_dist > 0, trace.ne_dist, np.nan)
            ax.semilogy(rounds, dist, lw=1.2, label="$\\|N_r - N^*\\|$")
            ax.semilogy(rounds, trace.ne_dist[0] * trace.rho**rounds, "k--", lw=0.8, label="linear-rate bound")
            ax.set_xlabel("communication round r")
            ax.legend()
            written.append(_save(fig, out_dir / "ne_distance.png"))
    return written


def plot_sweep(traces: dict, out_dir, target=None) -> list[Path]:
    """Loss curves for each ``H`` on a shared axis."""
    out_dir = Path(out_dir)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for H, tr in sorted(traces.items()):
            ax.plot(np.arange(tr.R + 1), tr.loss, lw=1.2, label=f"H={H}")
        if target is not None:
            ax.axhline(target, color="k", ls=":", lw=0.8, label="target")
        ax.set_xlabel("communication round r")
        ax.set_ylabel("global loss")
        ax.legend()
        return [_save(fig, out_dir / "loss_by_H.png")]
