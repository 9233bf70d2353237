"""CSV writing shared by trajectories, controls, traces and study tables."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """17 significant digits in scientific notation; blanks for missing values."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".16e")


def write_csv(path, columns, rows, comment: str | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def read_column(path) -> np.ndarray:
    """Single-column numeric CSV; ``#`` comment lines and a text header are skipped."""
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line.split(",")[0]))
            except ValueError:
                if values:
                    raise
    return np.asarray(values)
