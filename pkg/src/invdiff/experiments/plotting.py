"""Deterministic SVG line plots with a CSV sidecar holding the plotted values."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..discretization import SampledField  # noqa: E402

__all__ = ["emit_plot", "emit_xy_plot"]

# fixed element ids and no timestamp make the SVG text reproducible
_RC = {"svg.hashsalt": "invdiff", "svg.fonttype": "none", "path.simplify": False}
_METADATA = {"Date": None, "Creator": "invdiff"}


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write(path: Path, x: np.ndarray, ys: Sequence[np.ndarray], labels: Sequence[str],
           title: str, xlabel: str, ylabel: str, logy: bool) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with plt.rc_context(_RC):
            fig, ax = plt.subplots(figsize=(6.0, 4.0))
            for y, label in zip(ys, labels):
                ax.plot(x, y, label=label, linewidth=1.2)
            if logy:
                ax.set_yscale("log")
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if title:
                ax.set_title(title)
            ax.grid(True, linewidth=0.3)
            ax.legend(loc="best", fontsize="small")
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata=_METADATA)
            plt.close(fig)
        sidecar = path.with_suffix(".csv")
        with open(sidecar, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([xlabel or "x", *labels])
            for i in range(x.size):
                w.writerow([_fmt(x[i]), *(_fmt(y[i]) for y in ys)])
    except OSError as exc:
        raise OSError(f"cannot write plot {path}: {exc}") from exc
    return path


def emit_plot(
    fields: Sequence[SampledField],
    labels: Sequence[str],
    path: str | Path,
    title: str = "",
    ylabel: str = "",
    logy: bool = False,
) -> Path:
    """Plot fields sharing one grid to ``path`` (SVG) and ``path`` with suffix ``.csv``.

    The SVG is byte-identical for identical inputs; the CSV holds the node
    coordinates and every curve in 17 significant digits.
    """
    if not fields:
        raise ValueError("nothing to plot")
    if len(labels) != len(fields):
        raise ValueError("one label per field is required")
    grid = fields[0].grid
    if any(f.grid != grid for f in fields):
        raise ValueError("all fields must share one grid")
    return _write(path, grid.nodes, [f.values for f in fields], labels, title, "x", ylabel, logy)


def emit_xy_plot(
    x,
    curves: Sequence,
    labels: Sequence[str],
    path: str | Path,
    title: str = "",
    xlabel: str = "x",
    ylabel: str = "",
    logy: bool = False,
) -> Path:
    """Like :func:`emit_plot` for explicit abscissae (sweeps, singular values)."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(c, dtype=float) for c in curves]
    if not ys or any(y.shape != x.shape for y in ys):
        raise ValueError("curves must be non-empty and match x")
    if len(labels) != len(ys):
        raise ValueError("one label per curve is required")
    return _write(path, x, ys, labels, title, xlabel, ylabel, logy)
