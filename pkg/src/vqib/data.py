"""Synthetic datasets and the dataset CSV format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import SplitMix64
from .textio import format_float


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    rows: np.ndarray
    provenance: dict = field(default_factory=dict)
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        if self.rows.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def _point_in_ball(rng: SplitMix64, dim: int, radius: float) -> np.ndarray:
    while True:
        p = np.array([rng.uniform_range(-1.0, 1.0) for _ in range(dim)])
        if p @ p <= 1.0:
            return radius * p


def gaussian_mixture(
    seed: int,
    components: int,
    dim: int,
    n: int,
    spread: float = 4.0,
    noise_sigma: float = 0.3,
) -> Dataset:
    """Balanced isotropic Gaussian mixture.

    Means are drawn uniformly from the ball of radius ``spread`` (rejection
    sampling).  Component ``c`` gets ``n // components`` rows, plus one if
    ``c < n % components``; rows are grouped by component in order.
    """
    if components < 1 or dim < 1 or n < components:
        raise ValueError(f"need components >= 1, dim >= 1, n >= components; got {components}, {dim}, {n}")
    if spread < 0 or noise_sigma < 0 or not (math.isfinite(spread) and math.isfinite(noise_sigma)):
        raise ValueError("spread and noise_sigma must be finite and nonnegative")

    rng = SplitMix64(seed)
    means = np.stack([_point_in_ball(rng, dim, spread) for _ in range(components)])
    base, extra = divmod(n, components)
    labels = np.concatenate([np.full(base + (c < extra), c, dtype=np.intp) for c in range(components)])
    noise = rng.normal_array((n, dim))
    rows = means[labels] + noise_sigma * noise
    provenance = dict(
        generator="gaussian_mixture", seed=seed, components=components, dim=dim,
        n=n, spread=spread, noise_sigma=noise_sigma,
    )
    ds = Dataset(rows, provenance, labels)
    ds.provenance["means"] = means
    return ds


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(f"f{j}" for j in range(dataset.dim)) + "\n")
        for row in dataset.rows:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def load_csv(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        dim = len(header)
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != dim:
                raise DatasetFormatError(f"{path}: line {lineno}: expected {dim} fields, got {len(row)}")
            try:
                rows.append([float(f) for f in row])
            except ValueError:
                raise DatasetFormatError(f"{path}: line {lineno}: non-numeric field") from None
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        raise DatasetFormatError(f"{path}: non-finite values")
    return Dataset(arr, {"generator": "csv", "path": str(path)})
