"""On-disk formats for feature files and per-cluster feature columns."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DetectorError
from .patterns import ColumnSet, FeatureColumn, FeatureMatrix


def format_value(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def feature_lines(matrix: FeatureMatrix) -> list[str]:
    values = matrix.values
    lines = []
    for label, row in zip(matrix.labels, values):
        cells = " ".join(f"{j}:{format_value(v)}" for j, v in enumerate(row, 1))
        lines.append(f"{'+1' if label > 0 else '-1'} {cells}")
    return lines


def export_features(matrix: FeatureMatrix, path: str | Path) -> None:
    """Write ``label 1:f1 2:f2 ...`` lines; every index is written, zeros included."""
    if len(matrix) == 0:
        raise DetectorError("refusing to export an empty feature matrix")
    Path(path).write_text("\n".join(feature_lines(matrix)) + "\n")


def import_features(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    labels, rows = [], []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        labels.append(int(parts[0]))
        row = {}
        for item in parts[1:]:
            idx, _, val = item.partition(":")
            row[int(idx)] = float(val)
        dim = max(row) if row else 0
        rows.append([row.get(j, 0.0) for j in range(1, dim + 1)])
    width = max((len(r) for r in rows), default=0)
    X = np.array([r + [0.0] * (width - len(r)) for r in rows], dtype=float).reshape(len(rows), width)
    return X, np.array(labels, dtype=int)


def save_column(column: FeatureColumn, path: str | Path) -> None:
    lines = [f"k={column.k} rows={len(column)}"]
    for label, c, L, tid in zip(column.labels, column.counts, column.lengths, column.trace_ids):
        lines.append(f"{int(label):+d} {int(c)} {int(L)} {tid}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_column(path: str | Path) -> FeatureColumn:
    lines = Path(path).read_text().splitlines()
    header = dict(item.split("=", 1) for item in lines[0].split())
    k, n = int(header["k"]), int(header["rows"])
    body = [ln.split(" ", 3) for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise DetectorError(f"{path}: header declares {n} rows, found {len(body)}")
    return FeatureColumn(
        k,
        np.array([int(r[1]) for r in body], dtype=np.int64),
        np.array([int(r[2]) for r in body], dtype=np.int64),
        np.array([int(r[0]) for r in body], dtype=np.int64),
        tuple(r[3] for r in body),
    )


def save_columns(columns: ColumnSet, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k in columns.ks:
        save_column(columns.train[k], directory / f"train_L{k}.txt")
        save_column(columns.test[k], directory / f"test_L{k}.txt")


def load_columns(directory: str | Path, ks: Sequence[int]) -> ColumnSet | None:
    """Load saved columns for exactly `ks`; None when any file is missing."""
    directory = Path(directory)
    train, test = {}, {}
    for k in ks:
        a, b = directory / f"train_L{k}.txt", directory / f"test_L{k}.txt"
        if not (a.is_file() and b.is_file()):
            return None
        train[k], test[k] = load_column(a), load_column(b)
    return ColumnSet(train, test)


def cluster_paths(path: str | Path) -> list[Path]:
    """Cluster dump files in a directory (``L<k>.txt``), or the path itself."""
    path = Path(path)
    if path.is_dir():
        files = [p for p in path.glob("L*.txt") if p.stem[1:].isdigit()]
        return sorted(files, key=lambda p: int(p.stem[1:]))
    return [path]
