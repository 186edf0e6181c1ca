"""CSV writers. Numbers are written with 17 significant digits."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FMT = "%.17g"


def expand_columns(name: str, values: np.ndarray) -> tuple[list[str], list[np.ndarray]]:
    """Column names and columns for a scalar, vector (name_i) or 2x2 (name_ij) series."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        return [name], [v]
    if v.ndim == 2:
        return [f"{name}_{i + 1}" for i in range(v.shape[1])], [v[:, i] for i in range(v.shape[1])]
    if v.ndim == 3:
        names, cols = [], []
        for i in range(v.shape[1]):
            for j in range(v.shape[2]):
                names.append(f"{name}_{i + 1}{j + 1}")
                cols.append(v[:, i, j])
        return names, cols
    raise ValueError(f"cannot flatten {name} with shape {v.shape}")


def write_table(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]):
    # adding 0.0 turns -0.0 into 0.0
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns]) + 0.0
    np.savetxt(path, data, fmt=FMT, delimiter=",", header=",".join(header), comments="")


def write_series(path: Path, t: np.ndarray, series: Mapping[str, np.ndarray]):
    """One time column followed by every series, flattened per expand_columns."""
    header, cols = ["t"], [t]
    for name, v in series.items():
        h, c = expand_columns(name, v)
        header += h
        cols += c
    write_table(path, header, cols)


def write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence]):
    """Mixed text/number rows; floats use the 17-digit format."""
    def cell(x):
        if isinstance(x, (float, np.floating)):
            return FMT % x
        if isinstance(x, (bool, np.bool_)):
            return "true" if x else "false"
        return str(x)

    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(cell(x) for x in r) + "\n")
