"""Matplotlib figures drawn from plot-data rows (Agg backend, PNG files)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LABELS = {
    "pers_return": "personalised return",
    "meta_return": "meta-policy return",
    "grad_L_norm_sq": r"$\|\nabla \mathcal{L}\|^2$",
    "distance": "mean squared distance",
    "bound_rhs": "distance bound",
}


def _by_series(rows):
    out = defaultdict(lambda: ([], [], []))
    for name, x, mean, std in rows:
        xs, ms, ss = out[name]
        xs.append(x)
        ms.append(mean)
        ss.append(std)
    return out


def _band(ax, xs, ms, ss, label):
    lo = [m - s for m, s in zip(ms, ss)]
    hi = [m + s for m, s in zip(ms, ss)]
    ax.plot(xs, ms, marker="o", ms=3, label=label)
    ax.fill_between(xs, lo, hi, alpha=0.25, lw=0)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_series(rows, series: Sequence[str], path, ylabel: str, *, logy: bool = False) -> Path | None:
    """One panel with a mean line and a one-std band per series; ``None`` if no series has data."""
    data = _by_series(rows)
    present = [s for s in series if s in data]
    if not present:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for s in present:
        _band(ax, *data[s], LABELS.get(s, s))
    ax.set_xlabel("round")
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    ax.legend(frameon=False)
    return _save(fig, path)


def render_run_figures(rows, out_dir) -> list[Path]:
    """Returns, gradient norm and distance-versus-bound figures for one experiment."""
    out_dir = Path(out_dir)
    made = [
        plot_series(rows, ("pers_return", "meta_return"), out_dir / "returns.png", "greedy return"),
        plot_series(rows, ("grad_L_norm_sq",), out_dir / "grad_norm.png", "squared gradient norm"),
        plot_series(rows, ("distance", "bound_rhs"), out_dir / "distance_bound.png", "squared distance",
                    logy=True),
    ]
    return [p for p in made if p is not None]


def plot_bars(labels: Sequence[str], means: Sequence[float], stds: Sequence[float], path, ylabel: str,
              highlight: int | None = None) -> Path:
    """Bar chart with std error bars; ``highlight`` marks one bar."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    colors = ["C1" if i == highlight else "C0" for i in range(len(labels))]
    ax.bar(range(len(labels)), means, yerr=stds, color=colors, capsize=3)
    ax.set_xticks(range(len(labels)), labels)
    ax.set_ylabel(ylabel)
    return _save(fig, path)
