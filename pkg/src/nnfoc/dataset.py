"""Training rows: (omega_ref, omega_meas, iq_pi) -> delta_iq_gt."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError

DATASET_COLUMNS = ("omega_ref", "omega_meas", "iq_pi", "delta_iq_gt")


class DatasetRecord(NamedTuple):
    omega_ref: float
    omega_meas: float
    iq_pi: float
    delta_iq_gt: float


@dataclass
class Dataset:
    X: np.ndarray  # (N, 3) inputs in column order omega_ref, omega_meas, iq_pi
    y: np.ndarray  # (N,) target correction in amps

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DomainError(f"inconsistent dataset shapes {self.X.shape} / {self.y.shape}")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])

    def records(self):
        for x, t in zip(self.X, self.y):
            yield DatasetRecord(float(x[0]), float(x[1]), float(x[2]), float(t))

    @classmethod
    def from_records(cls, records) -> "Dataset":
        rows = np.array([tuple(r) for r in records], dtype=np.float64).reshape(-1, 4)
        return cls(rows[:, :3], rows[:, 3])

    @classmethod
    def concat(cls, parts) -> "Dataset":
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(DATASET_COLUMNS) + "\n")
        np.savetxt(buf, np.column_stack([self.X, self.y]), fmt="%.17g", delimiter=",")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip()
            if tuple(header.split(",")) != DATASET_COLUMNS:
                raise ConfigError(f"unexpected dataset header {header!r}")
            rows = np.loadtxt(fh, delimiter=",", ndmin=2)
        if rows.size == 0:
            return cls(np.zeros((0, 3)), np.zeros(0))
        return cls(rows[:, :3], rows[:, 3])
