"""Labeled training sets and their CSV form (header ``x_1..x_q,y``)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class LabeledSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y)
        if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
            raise ValueError(f"points {X.shape} and labels {y.shape} do not match")
        if not np.all(np.isin(y, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        y = y.astype(np.int64)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    @property
    def features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx)
        return LabeledSet(self.X[idx], self.y[idx])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(self.features)] + ["y"])
        for row, label in zip(self.X, self.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "LabeledSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty data file")
        header, body = rows[0], rows[1:]
        if not header or header[-1].strip() != "y":
            raise ValueError(f"{path}: last column must be 'y'")
        try:
            X = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64)
            y = np.array([int(float(r[-1])) for r in body], dtype=np.int64)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed row ({exc})") from None
        return cls(X.reshape(len(body), len(header) - 1), y)
