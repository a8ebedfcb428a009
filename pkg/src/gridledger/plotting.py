"""Figures for the report path.  Everything renders off-screen to PNG."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}
# no software/version tag, so reruns give identical files
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_bus_comparison(bus_ids: Sequence[int], central: np.ndarray,
                        distributed: dict[str, np.ndarray], ylabel: str,
                        path: str | Path) -> Path:
    """Per-bus centralized estimate against one or more distributed runs."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        x = np.arange(len(bus_ids))
        ax.plot(x, central, "o-", color="0.2", lw=1.2, ms=5, label="centralized")
        marks = iter(["s", "^", "D", "v"])
        for name, vals in distributed.items():
            ax.plot(x, vals, next(marks), ls="--", lw=0.9, ms=4, mfc="none", label=name)
        ax.set_xticks(x, [str(b) for b in bus_ids])
        ax.set_xlabel("bus")
        ax.set_ylabel(ylabel)
        ax.legend()
        return _save(fig, Path(path))


def plot_objective_trace(traces: dict[str, Sequence[float]], reference: float,
                         path: str | Path) -> Path:
    """Relative excess of the stitched-state objective over the centralized
    optimum, per outer iteration."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        for name, tr in traces.items():
            excess = np.maximum((np.asarray(tr) - reference) / reference, 1e-12)
            ax.semilogy(np.arange(1, len(tr) + 1), excess, lw=1.1, label=name)
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("(J - J_central) / J_central")
        ax.legend()
        return _save(fig, Path(path))


def plot_gas(sizes: Sequence[float], per_tx: Sequence[float], total: Sequence[float],
             path: str | Path) -> Path:
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.5, 3))
        a1.plot(sizes, per_tx, "o-", lw=1.1, ms=4)
        a1.set_xlabel("payload size (bytes)")
        a1.set_ylabel("gas per transaction")
        a2.semilogx(sizes, total, "o-", lw=1.1, ms=4, base=2)
        a2.set_xlabel("payload size (bytes)")
        a2.set_ylabel("total gas")
        return _save(fig, Path(path))
