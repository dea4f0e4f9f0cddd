"""Line plots of density profiles and descent histories."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..core import Solution  # noqa: E402

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 3.6),
        "axes.linewidth": 0.6,
        "font.size": 9,
        "legend.fontsize": 8,
        "legend.frameon": False,
        "svg.hashsalt": "crowd-mfg",
    }
)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def profile_figure(sol: Solution, times: Sequence[float], path: str | Path, title: str = "") -> Path:
    """Density (and potential, when present) at the requested times."""
    panels = 2 if sol.phi is not None else 1
    fig, axes = plt.subplots(1, panels, squeeze=False, figsize=(6.0 if panels == 1 else 9.0, 3.4))
    x = sol.grid.centers
    for t in times:
        k = sol.rho.index_of(t)
        label = f"t = {sol.times[k]:.2f}"
        axes[0, 0].plot(x, sol.rho.values[k], lw=1.0, label=label)
        if panels == 2:
            axes[0, 1].plot(x, sol.phi.values[k], lw=1.0, label=label)
    axes[0, 0].set_xlabel("x")
    axes[0, 0].set_ylabel(r"$\rho$")
    axes[0, 0].legend()
    if panels == 2:
        axes[0, 1].set_xlabel("x")
        axes[0, 1].set_ylabel(r"$\phi$")
    if title:
        fig.suptitle(title)
    return _save(fig, Path(path))


def comparison_figure(
    runs: Mapping[str, Solution], times: Sequence[float], path: str | Path, channel: str = "rho"
) -> Path:
    """One panel per time, one line per run."""
    fig, axes = plt.subplots(1, len(times), squeeze=False, figsize=(3.0 * len(times), 3.0), sharey=True)
    for ax, t in zip(axes[0], times):
        for name, sol in runs.items():
            traj = sol.channels()[channel]
            if traj is None:
                continue
            k = traj.index_of(t)
            ax.plot(sol.grid.centers, traj.values[k], lw=1.0, label=name)
        ax.set_title(f"t = {t:g}")
        ax.set_xlabel("x")
    axes[0, 0].set_ylabel(channel)
    axes[0, 0].legend()
    return _save(fig, Path(path))


def history_figure(objective: Sequence[float], gradient: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(1, 2, figsize=(8.0, 3.0))
    it = np.arange(len(objective))
    ax[0].plot(it, objective, lw=1.0)
    ax[0].set_xlabel("iteration")
    ax[0].set_ylabel("objective")
    ax[1].semilogy(it, gradient, lw=1.0)
    ax[1].set_xlabel("iteration")
    ax[1].set_ylabel("gradient norm")
    return _save(fig, Path(path))


def series_figure(t: np.ndarray, series: Mapping[str, np.ndarray], ylabel: str, path: str | Path) -> Path:
    fig, ax = plt.subplots()
    for name, y in series.items():
        ax.plot(t, y, lw=1.0, label=name)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save(fig, Path(path))
