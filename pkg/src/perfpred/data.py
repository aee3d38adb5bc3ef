"""Credit-scoring data: CSV loading, standardization and a synthetic stand-in."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .core import ConfigurationError


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with binary labels.

    ``feature_means`` / ``feature_stds`` are the standardization parameters
    that were applied (``None`` for raw data).  ``dropped_rows`` counts rows
    discarded by the loader.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple = ()
    feature_means: Optional[np.ndarray] = None
    feature_stds: Optional[np.ndarray] = None
    dropped_rows: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DataFormatError(f"features {x.shape} and labels {y.shape} do not align")
        if not np.all((y == 0) | (y == 1)):
            raise DataFormatError("labels must be 0 or 1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def default_lambda(self) -> float:
        """The ``1000 / n`` regularization rule, using the post-drop row count."""
        return 1e3 / self.n


def load_credit_csv(path, label_column: str = "SeriousDlqin2yrs", feature_columns=None,
                    drop_columns=(), row_cap: Optional[int] = None, shuffle_seed: int = 0) -> Dataset:
    """Parse a comma-separated file with a header row into a raw :class:`Dataset`.

    Rows with an empty cell (or ``NA``/``NaN``) are dropped and counted.  Any
    other unparseable cell raises :class:`DataFormatError` with its location.
    When ``row_cap`` is given the rows are shuffled with ``shuffle_seed`` and
    the first ``row_cap`` are kept.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataFormatError(f"{path}: no label column {label_column!r} in header {header}")
        skip = set(drop_columns) | {label_column}
        if feature_columns is None:
            feature_columns = [h for h in header if h and h not in skip]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise DataFormatError(f"{path}: feature columns {missing} not found")
        label_idx = header.index(label_column)
        feat_idx = [header.index(c) for c in feature_columns]

        rows, labels, dropped = [], [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            cells = [row[i].strip() for i in feat_idx] + [row[label_idx].strip()]
            if any(c == "" or c.lower() in ("na", "nan") for c in cells):
                dropped += 1
                continue
            values = []
            for col, cell in zip(list(feature_columns) + [label_column], cells):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: column {col!r}: non-numeric value {cell!r}") from None
            y = values.pop()
            if y not in (0.0, 1.0):
                raise DataFormatError(f"{path}:{lineno}: label {y!r} is not 0/1")
            rows.append(values)
            labels.append(y)

    x = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_columns))
    y = np.array(labels, dtype=np.float64)
    if row_cap is not None and row_cap < len(y):
        order = np.random.default_rng(shuffle_seed).permutation(len(y))[:row_cap]
        x, y = x[order], y[order]
    return Dataset(x, y, tuple(feature_columns), dropped_rows=dropped,
                   provenance={"source": str(path), "row_cap": row_cap, "shuffle_seed": shuffle_seed})


def preprocess(raw: Dataset) -> Dataset:
    """Standardize every column to zero mean and unit (population) std."""
    x = raw.features
    if x.shape[0] < 2:
        raise ConfigurationError("need at least two rows to standardize")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    names = raw.feature_names or tuple(f"x{j}" for j in range(x.shape[1]))
    for j, s in enumerate(stds):
        if s <= 1e-12 * max(1.0, abs(means[j])):
            raise ConfigurationError(f"column {names[j]!r} is constant and cannot be standardized")
    z = (x - means) / stds
    # second pass removes the O(eps) residual mean of the first
    z -= z.mean(axis=0)
    return Dataset(z, raw.labels, names, means, stds, raw.dropped_rows, dict(raw.provenance))


def synthetic_credit(n: int = 2000, d: int = 10, label_balance: float = 0.5, seed: int = 0) -> Dataset:
    """Standardized Gaussian features with labels from a fixed logistic model.

    The intercept of the ground-truth model is solved so the average default
    probability equals ``label_balance``.
    """
    if n < 10 or d < 1:
        raise ConfigurationError("synthetic_credit needs n >= 10 and d >= 1")
    if not 0.0 < label_balance < 1.0:
        raise ConfigurationError("label_balance must be in (0, 1)")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    w = rng.standard_normal(d) / math.sqrt(d)
    scores = x @ w
    b = brentq(lambda c: expit(scores + c).mean() - label_balance, -50.0, 50.0)
    y = (rng.random(n) < expit(scores + b)).astype(np.float64)
    raw = Dataset(x, y, tuple(f"x{j}" for j in range(d)),
                  provenance={"source": "synthetic", "n": n, "d": d,
                              "label_balance": label_balance, "seed": seed})
    return preprocess(raw)
