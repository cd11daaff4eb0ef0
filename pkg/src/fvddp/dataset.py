"""Time-stamped observation batches: ingestion, writing, synthesis.

Data arrive as batches collected at strictly increasing times.  Two file
formats are supported: CSV with a ``time,value`` header (rows sharing one
time form a batch) and JSON as an array of ``{"time": t, "values": [...]}``
objects.  Numeric-looking CSV values are coerced to int, then float.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Dataset:
    """Ordered batches (time, values) with strictly increasing times."""

    batches: tuple[tuple[float, tuple], ...]

    def __post_init__(self):
        if not self.batches:
            raise DatasetError("dataset needs at least one batch")
        times = [t for t, _ in self.batches]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DatasetError(f"batch times must be strictly increasing, got {times}")
        if all(len(vals) == 0 for _, vals in self.batches):
            raise DatasetError("dataset needs at least one nonempty batch")

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.batches)

    def all_values(self) -> list:
        return [y for _, vals in self.batches for y in vals]

    def __len__(self) -> int:
        return len(self.batches)


def _coerce(token: str):
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def ingest(path: str | Path, fmt: str = "auto") -> Dataset:
    """Read a dataset file, validating shape and time ordering."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    if fmt == "auto":
        fmt = "json" if path.suffix.lower() == ".json" else "csv"
    if fmt == "csv":
        return _ingest_csv(path)
    if fmt == "json":
        return _ingest_json(path)
    raise DatasetError(f"unknown format {fmt!r}")


def _ingest_csv(path: Path) -> Dataset:
    batches: list[tuple[float, list]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header[:2]] != ["time", "value"]:
            raise DatasetError(f"{path}: line 1: expected header 'time,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise DatasetError(f"{path}: line {lineno}: expected 'time,value'")
            try:
                time = float(row[0])
            except ValueError:
                raise DatasetError(
                    f"{path}: line {lineno}: cannot parse time {row[0]!r}"
                ) from None
            value = _coerce(row[1])
            if batches and time == batches[-1][0]:
                batches[-1][1].append(value)
            elif batches and time < batches[-1][0]:
                raise DatasetError(
                    f"{path}: line {lineno}: time {time} is not increasing"
                )
            else:
                batches.append((time, [value]))
    if not batches:
        raise DatasetError(f"{path}: no data rows")
    return Dataset(tuple((t, tuple(vals)) for t, vals in batches))


def _ingest_json(path: Path) -> Dataset:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, list):
        raise DatasetError(f"{path}: expected a top-level array of batches")
    batches = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "time" not in entry or "values" not in entry:
            raise DatasetError(
                f"{path}: batch {i}: expected an object with 'time' and 'values'"
            )
        batches.append((float(entry["time"]), tuple(entry["values"])))
    if not batches:
        raise DatasetError(f"{path}: no batches")
    return Dataset(tuple(batches))


def write_dataset(dataset: Dataset, path: str | Path, fmt: str = "auto") -> None:
    path = Path(path)
    if fmt == "auto":
        fmt = "json" if path.suffix.lower() == ".json" else "csv"
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "value"])
            for time, values in dataset.batches:
                for y in values:
                    writer.writerow([repr(float(time)), y])
    elif fmt == "json":
        doc = [
            {"time": float(t), "values": list(vals)} for t, vals in dataset.batches
        ]
        path.write_text(json.dumps(doc, indent=2) + "\n")
    else:
        raise DatasetError(f"unknown format {fmt!r}")


def synthetic(seed: int, horizon: int = 16, per_time: int = 15) -> Dataset:
    """Reproducible two-component count data with drifting rates.

    Each time t contributes `per_time` draws from an equal mixture of a
    Poisson and a 5-shifted Poisson whose means 1/mu_t and 1/nu_t shrink as
    mu, nu perform independent random walks with Exp(1) increments from
    mu_0 = nu_0 = 1/5.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if per_time < 1:
        raise ValueError(f"per_time must be >= 1, got {per_time}")
    rng = np.random.default_rng(seed)
    mu = 0.2
    nu = 0.2
    batches = []
    for t in range(horizon):
        values = []
        for _ in range(per_time):
            if rng.random() < 0.5:
                values.append(int(rng.poisson(1.0 / mu)))
            else:
                values.append(5 + int(rng.poisson(1.0 / nu)))
        batches.append((float(t), tuple(values)))
        mu += rng.exponential(1.0)
        nu += rng.exponential(1.0)
    return Dataset(tuple(batches))
