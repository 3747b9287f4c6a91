"""Uniform-grid curves and their TSV serialisation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class CurveOnGrid:
    """A function sampled on the uniform grid x0, x0 + dx, x0 + 2 dx, ..."""

    x0: float
    dx: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("values must be a non-empty 1-d array")
        if not np.all(np.isfinite(values)):
            raise ValueError("curve values must be finite")
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        object.__setattr__(self, "values", values)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.values.size)

    def __len__(self) -> int:
        return self.values.size

    def interp(self, xq) -> np.ndarray:
        """Linear interpolation, clamped at the ends."""
        return np.interp(xq, self.x, self.values)

    def mass(self) -> float:
        """Trapezoid integral over the grid."""
        return float(np.trapezoid(self.values, dx=self.dx))


def float_repr(value: float) -> str:
    """Decimal form with 17 significant digits: round-trips float64 exactly."""
    return format(value, ".17g")


def write_curve_tsv(path, columns: dict[str, np.ndarray]) -> None:
    """Write named columns as TSV, 17-significant-digit decimals."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValueError("all columns must have equal length")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(names) + "\n")
        for i in range(n):
            cells = []
            for c in cols:
                v = c[i]
                if isinstance(v, (np.bool_, bool)):
                    cells.append("1" if v else "0")
                elif np.issubdtype(type(v), np.integer):
                    cells.append(str(int(v)))
                else:
                    cells.append(float_repr(float(v)))
            fh.write("\t".join(cells) + "\n")


def read_curve_tsv(path) -> dict[str, np.ndarray]:
    """Read a TSV written by :func:`write_curve_tsv`."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    out = {}
    for j, name in enumerate(header):
        out[name] = np.array([float(r[j]) for r in rows])
    return out
