"""Optional PNG rendering of the CSV grids the CLI writes.

CSV files stay the contract; pictures are a convenience and need the
``plots`` extra (matplotlib, drawn off-screen with the Agg backend).
"""

from __future__ import annotations

import csv
from pathlib import Path


def _read(path: Path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = []
    for j in range(len(header)):
        try:
            cols.append([float(r[j]) for r in body])
        except ValueError:
            cols.append([])
    return header, cols


def render_grids(grid_dir: Path) -> list[str]:
    """Draw column 2 against column 1 for every CSV; returns warnings."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return ["plots skipped: matplotlib is not installed (pip install 'artifact[plots]')"]
    notes = []
    for path in sorted(Path(grid_dir).glob("*.csv")):
        header, cols = _read(path)
        if len(cols) < 2 or not cols[0] or not cols[1]:
            notes.append(f"plots: {path.name} has no numeric pair of columns")
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(cols[0], cols[1], lw=1.2)
        ax.set_xlabel(header[0])
        ax.set_ylabel(header[1])
        ax.set_title(path.stem)
        fig.tight_layout()
        fig.savefig(path.with_suffix(".png"), dpi=120)
        plt.close(fig)
    return notes
