"""CSV data ingestion and the bundled Holzinger-Swineford example."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .exceptions import InvalidDataError

DATA_DIR = Path(__file__).parent / "data"


def read_csv(path) -> tuple[list, np.ndarray]:
    """Read a header-row CSV of numeric fields into (names, N x p array)."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidDataError(f"cannot read {path}: {exc.strerror}") from None
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InvalidDataError(f"{path}: need a header row and at least one observation")
    names = [c.strip() for c in rows[0]]
    p = len(names)
    X = np.empty((len(rows) - 1, p))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != p:
            raise InvalidDataError(f"{path}, line {i}: expected {p} fields, got {len(row)}")
        try:
            X[i - 2] = [float(c) for c in row]
        except ValueError:
            raise InvalidDataError(f"{path}, line {i}: non-numeric or missing field") from None
    if not np.all(np.isfinite(X)):
        raise InvalidDataError(f"{path}: data contain non-finite values")
    return names, X


def select_columns(names, X, variables) -> np.ndarray:
    """Columns of X in the order of ``variables``."""
    pos = {n: j for j, n in enumerate(names)}
    missing = [v for v in variables if v not in pos]
    if missing:
        raise InvalidDataError(f"data lack model variable(s): {', '.join(missing)}")
    return X[:, [pos[v] for v in variables]]


def holzinger_path() -> Path:
    return DATA_DIR / "holzinger_grant_white.csv"


def holzinger_data() -> tuple[list, np.ndarray]:
    """Grant-White school, variables x1..x9 (N = 145)."""
    return read_csv(holzinger_path())
