"""Figure rendering for delay traces and efficiency tables.

Uses the non-interactive Agg backend so figures render identically in
headless environments.  Files are written atomically like every other
artifact.
"""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiment import TableRow
from .physics import SignalTrace


def _atomic_savefig(figure, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    suffix = os.path.splitext(path)[1] or ".png"
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=suffix)
    os.close(fd)
    try:
        figure.savefig(tmp_path)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    finally:
        plt.close(figure)


def save_trace_figure(trace: SignalTrace, path: str,
                      title: str | None = None) -> None:
    """Render a delay scan as a line plot."""
    figure, axis = plt.subplots(figsize=(7.0, 4.5))
    axis.plot(trace.tau_grid, trace.values, color="tab:blue", linewidth=1.2)
    axis.set_xlabel("delay between photons (fs)")
    if trace.normalized:
        axis.set_ylabel("absorption probability (peak-normalized)")
    else:
        axis.set_ylabel("absorption probability (arbitrary units)")
    if title:
        axis.set_title(title)
    axis.grid(True, alpha=0.3)
    figure.tight_layout()
    _atomic_savefig(figure, path)


def save_table_figure(rows: list[TableRow], path: str) -> None:
    """Render efficiency rows as grouped bars with std error bars.

    One group per (band, step) cell; one bar per entanglement time.
    """
    if not rows:
        raise ValueError("need at least one table row to plot")
    te_values = sorted({row.entanglement_time for row in rows}, reverse=True)
    cells = []
    for row in rows:
        key = (row.band.low, row.band.high, row.band.step)
        if key not in cells:
            cells.append(key)
    positions = {key: index for index, key in enumerate(cells)}
    width = 0.8 / len(te_values)

    figure, axis = plt.subplots(figsize=(max(7.0, 1.1 * len(cells)), 4.8))
    for series, te in enumerate(te_values):
        xs, means, stds = [], [], []
        for row in rows:
            if row.entanglement_time != te:
                continue
            key = (row.band.low, row.band.high, row.band.step)
            xs.append(positions[key] + (series - (len(te_values) - 1) / 2) * width)
            means.append(row.mean_pct)
            stds.append(row.std_pct)
        axis.bar(xs, means, width=width, yerr=stds, capsize=3,
                 label=f"T_e = {te:g} fs")
    labels = [f"{low:g}-{high:g}\nstep {step:g}" for low, high, step in cells]
    axis.set_xticks(range(len(cells)))
    axis.set_xticklabels(labels, fontsize=8)
    axis.set_ylabel("classification efficiency (%)")
    axis.set_xlabel("level band (nm)")
    axis.set_ylim(0, 105)
    axis.legend()
    axis.grid(True, axis="y", alpha=0.3)
    figure.tight_layout()
    _atomic_savefig(figure, path)
