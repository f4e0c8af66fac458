"""Loading, transforming and splitting univariate time series.

A :class:`TimeSeries` is an ordered sequence of finite real observations,
optionally carrying ISO-8601 style labels (e.g. ``"2021-01"``).  All
operations are pure: they return new objects and never mutate inputs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = ["TimeSeries", "load_csv", "log_returns", "split"]


@dataclass(frozen=True)
class TimeSeries:
    """Univariate series of finite real observations.

    Parameters
    ----------
    values : array-like of float
        Observations in time order.  Must be non-empty and finite.
    timestamps : tuple of str, optional
        One label per observation, strictly increasing.  ISO-8601 style
        labels compare correctly as plain strings.
    """

    values: np.ndarray
    timestamps: tuple[str, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise InvalidInputError("series values must be one-dimensional")
        if vals.size < 1:
            raise InvalidInputError("no observations")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise InvalidInputError(f"non-finite value at index {bad}")
        object.__setattr__(self, "values", vals)
        if self.timestamps is not None:
            ts = tuple(str(t) for t in self.timestamps)
            if len(ts) != vals.size:
                raise InvalidInputError(
                    f"{len(ts)} timestamps for {vals.size} observations"
                )
            for a, b in zip(ts, ts[1:]):
                if not a < b:
                    raise InvalidInputError(
                        f"timestamps not strictly increasing at {b!r}"
                    )
            object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return int(self.values.size)

    def to_dict(self) -> dict:
        """JSON-ready mapping ``{"values": [...], "timestamps": [...]}``."""
        out: dict = {"values": [float(v) for v in self.values]}
        if self.timestamps is not None:
            out["timestamps"] = list(self.timestamps)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TimeSeries":
        if "values" not in d:
            raise InvalidInputError("series JSON lacks 'values'")
        ts = d.get("timestamps")
        return cls(np.asarray(d["values"], dtype=np.float64),
                   tuple(ts) if ts is not None else None)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TimeSeries":
        return cls.from_dict(json.loads(text))


def load_csv(path, column, timestamp_column=None) -> TimeSeries:
    """Read one column of a headed CSV file into a :class:`TimeSeries`.

    Parameters
    ----------
    path : str or Path
        Comma-separated file with a header row and '.' decimal separator.
    column : str or int
        Header name, or 0-based column index.
    timestamp_column : str or int, optional
        Column of strictly increasing labels.

    Raises
    ------
    InvalidInputError
        Missing file or column, empty data section, or a cell that does
        not parse as a real number (the message names the 1-based data
        row).
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InvalidInputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError("no observations") from None
        header = [h.strip() for h in header]

        def resolve(col) -> int:
            if isinstance(col, int):
                if not 0 <= col < len(header):
                    raise InvalidInputError(
                        f"column index {col} out of range (file has "
                        f"{len(header)} columns)"
                    )
                return col
            if col not in header:
                raise InvalidInputError(
                    f"column {col!r} not found; file has {header}"
                )
            return header.index(col)

        idx = resolve(column)
        ts_idx = resolve(timestamp_column) if timestamp_column is not None else None

        values: list[float] = []
        labels: list[str] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if idx >= len(row):
                raise InvalidInputError(f"row {row_no} has no column {column!r}")
            cell = row[idx].strip()
            try:
                v = float(cell)
            except ValueError:
                raise InvalidInputError(
                    f"non-numeric cell {cell!r} in column {column!r} at row "
                    f"{row_no}"
                ) from None
            if not math.isfinite(v):
                raise InvalidInputError(
                    f"non-finite value in column {column!r} at row {row_no}"
                )
            values.append(v)
            if ts_idx is not None:
                labels.append(row[ts_idx].strip())

    if not values:
        raise InvalidInputError("no observations")
    return TimeSeries(np.asarray(values),
                      tuple(labels) if ts_idx is not None else None)


def log_returns(series: TimeSeries) -> TimeSeries:
    """Log returns ``x_t = log(y_t / y_{t-1})``, one point shorter.

    Every input value must be strictly positive and the series must have
    at least two points.
    """
    y = series.values
    if y.size < 2:
        raise InvalidInputError("need at least 2 observations for log returns")
    nonpos = np.flatnonzero(y <= 0.0)
    if nonpos.size:
        raise InvalidInputError(
            f"non-positive value at index {int(nonpos[0])}; log returns "
            "need a strictly positive series"
        )
    x = np.diff(np.log(y))
    ts = series.timestamps[1:] if series.timestamps is not None else None
    return TimeSeries(x, ts)


def split(series: TimeSeries, test_len: int) -> tuple[TimeSeries, TimeSeries]:
    """Split into a training head and a test tail of ``test_len`` points.

    Concatenating the two parts reproduces the input exactly.
    """
    n = len(series)
    if not 0 < test_len < n:
        raise InvalidInputError(
            f"test_len must be in (0, {n}) for a series of length {n}; "
            f"got {test_len}"
        )
    cut = n - test_len
    ts = series.timestamps
    train = TimeSeries(series.values[:cut].copy(),
                       ts[:cut] if ts is not None else None)
    test = TimeSeries(series.values[cut:].copy(),
                      ts[cut:] if ts is not None else None)
    return train, test
