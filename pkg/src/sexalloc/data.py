"""Clutch count datasets.

A dataset is a list of offspring groups. In *secondary* mode each record is
(n, m): survivors and male survivors at maturity. In *primary* mode each record
is (N, M): eggs laid and male eggs, with no mortality layer.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

PRIMARY = "primary"
SECONDARY = "secondary"


class DatasetError(ValueError):
    """Invalid clutch data."""


def _as_counts(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DatasetError(f"{name} must be one-dimensional")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise DatasetError(f"{name} must contain integers")
        arr = as_int
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise DatasetError(f"{name} must be non-negative")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed clutch counts.

    ``sizes``/``males`` are (n, m) for secondary data and (N, M) for primary
    data. ``deaths`` optionally records per-clutch mortality counts, so that
    N = n + deaths for secondary records.
    """

    sizes: np.ndarray
    males: np.ndarray
    mode: str = SECONDARY
    deaths: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in (PRIMARY, SECONDARY):
            raise DatasetError(f"unknown mode {self.mode!r}")
        sizes = _as_counts(self.sizes, "sizes")
        males = _as_counts(self.males, "males")
        if sizes.shape != males.shape:
            raise DatasetError("sizes and males differ in length")
        bad = np.flatnonzero(males > sizes)
        if bad.size:
            raise DatasetError(f"male count exceeds group size at record {int(bad[0])}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "males", males)
        if self.deaths is not None:
            deaths = _as_counts(self.deaths, "deaths")
            if deaths.shape != sizes.shape:
                raise DatasetError("deaths column has the wrong length")
            object.__setattr__(self, "deaths", deaths)

    @classmethod
    def from_pairs(cls, pairs, mode: str = SECONDARY) -> "Dataset":
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), mode)
        sizes, males = zip(*pairs)
        return cls(np.array(sizes), np.array(males), mode)

    @property
    def C(self) -> int:
        return int(self.sizes.size)

    @property
    def is_primary(self) -> bool:
        return self.mode == PRIMARY

    def __len__(self) -> int:
        return self.C

    def pooled_sex_ratio(self) -> float:
        total = int(self.sizes.sum())
        return float(self.males.sum()) / total if total else float("nan")

    def size_histogram(self) -> dict[int, int]:
        values, counts = np.unique(self.sizes, return_counts=True)
        return {int(k): int(v) for k, v in zip(values, counts)}

    def unique_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct (size, males) records and their multiplicities."""
        if self.C == 0:
            empty = np.zeros(0, np.int64)
            return empty, empty, empty
        stacked = np.stack([self.sizes, self.males], axis=1)
        uniq, counts = np.unique(stacked, axis=0, return_counts=True)
        return uniq[:, 0], uniq[:, 1], counts.astype(np.int64)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.mode != self.mode:
            raise DatasetError("cannot concatenate datasets of different modes")
        deaths = None
        if self.deaths is not None and other.deaths is not None:
            deaths = np.concatenate([self.deaths, other.deaths])
        return Dataset(
            np.concatenate([self.sizes, other.sizes]),
            np.concatenate([self.males, other.males]),
            self.mode,
            deaths,
        )

    def digest(self) -> dict:
        ratio = self.pooled_sex_ratio()
        return {
            "C": self.C,
            "mode": self.mode,
            "size_histogram": {str(k): v for k, v in self.size_histogram().items()},
            "pooled_sex_ratio": ratio if math.isfinite(ratio) else None,
            "checksum": hashlib.sha256(
                self.mode.encode() + self.sizes.tobytes() + self.males.tobytes()
            ).hexdigest()[:16],
        }
