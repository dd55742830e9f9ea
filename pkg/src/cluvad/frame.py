"""Canonical multivariate time-series container and CSV ingestion.

A frame is an immutable N x F matrix of named features on a uniformly
spaced integer time axis. Timestamps stay in dataset-native units (row
index, days, ...) so no calendar logic lives here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BoundsError,
    DuplicateTimestampError,
    IngestError,
    SchemaError,
    SpacingError,
)


@dataclass(frozen=True)
class TimeSeriesFrame:
    """Uniformly sampled multivariate series.

    Attributes
    ----------
    timestamps : int64 array, shape (N,)
        Strictly increasing, constant spacing equal to ``step``.
    values : float64 array, shape (N, F)
        One column per feature; all entries finite.
    names : tuple of str
        F unique feature identifiers, column order.
    step : int
        Spacing between consecutive timestamps (> 0).
    """

    timestamps: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]
    step: int

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "names", tuple(self.names))
        validate_frame(self)
        ts.flags.writeable = False
        vals.flags.writeable = False

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise SchemaError(f"unknown feature {name!r}")
        return self.values[:, self.names.index(name)]

    def with_values(self, values: np.ndarray) -> "TimeSeriesFrame":
        """New frame with the same axis/names and replaced values."""
        return TimeSeriesFrame(self.timestamps.copy(), np.array(values, dtype=np.float64),
                               self.names, self.step)

    def select(self, names: list[str] | tuple[str, ...]) -> "TimeSeriesFrame":
        """New frame restricted to ``names`` (in the given order)."""
        idx = [self.names.index(n) if n in self.names else -1 for n in names]
        if -1 in idx:
            missing = [n for n in names if n not in self.names]
            raise SchemaError(f"unknown features {missing}")
        return TimeSeriesFrame(self.timestamps.copy(), self.values[:, idx].copy(),
                               tuple(names), self.step)


@dataclass(frozen=True)
class LabelSeries:
    """Boolean anomaly labels aligned to a frame (True = anomalous)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=bool)
        object.__setattr__(self, "values", vals)
        vals.flags.writeable = False

    def __len__(self) -> int:
        return int(self.values.shape[0])


def validate_frame(frame: TimeSeriesFrame) -> None:
    """Check every TimeSeriesFrame invariant; raise on violation.

    Shared by constructors and tests so any frame produced anywhere in
    the package goes through one validator.
    """
    ts, vals, names = frame.timestamps, frame.values, frame.names
    if vals.ndim != 2:
        raise SchemaError(f"values must be 2-D, got shape {vals.shape}")
    n, f = vals.shape
    if ts.shape != (n,):
        raise SchemaError(f"{ts.shape[0]} timestamps for {n} rows")
    if len(names) != f:
        raise SchemaError(f"{len(names)} names for {f} columns")
    if len(set(names)) != len(names):
        raise SchemaError("feature names must be unique")
    if not isinstance(frame.step, int) or frame.step <= 0:
        raise SchemaError(f"step must be a positive integer, got {frame.step!r}")
    if n > 1:
        diffs = np.diff(ts)
        if np.any(diffs <= 0):
            row = int(np.argmax(diffs <= 0)) + 1
            raise SpacingError(f"timestamps not strictly increasing at row {row + 1}")
        if np.any(diffs != frame.step):
            row = int(np.argmax(diffs != frame.step)) + 1
            raise SpacingError(
                f"non-uniform spacing at row {row + 1}: gap {int(diffs[row - 1])} != step {frame.step}"
            )
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise SchemaError(f"non-finite value at row {bad[0] + 1}, column {names[bad[1]]!r}")


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"malformed numeric cell at row {row}, column {col!r}: {text!r}") from None
    if not np.isfinite(value):
        raise IngestError(f"non-finite value at row {row}, column {col!r}: {text!r}")
    return value


def ingest_csv(
    path: str | Path,
    timestamp_column: str = "timestamp",
    feature_columns: list[str] | None = None,
    fmt: str = "csv",
) -> TimeSeriesFrame:
    """Load a frame from disk.

    ``fmt="csv"``: header row, one timestamp column (integer), remaining
    (or ``feature_columns``) columns are features. Rows are sorted by
    timestamp; duplicates and non-uniform spacing are errors.

    ``fmt="smd"``: headerless comma-separated feature rows; timestamps
    are synthesized as 0..N-1 and features named f0..f{F-1}.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"file not found: {path}")
    if fmt == "smd":
        return _ingest_smd(path)
    if fmt != "csv":
        raise IngestError(f"unknown format {fmt!r}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"empty file: {path}") from None
        header = [h.strip() for h in header]
        if timestamp_column not in header:
            raise IngestError(f"timestamp column {timestamp_column!r} not in header {header}")
        ts_idx = header.index(timestamp_column)
        if feature_columns is None:
            feature_columns = [h for h in header if h != timestamp_column]
        if not feature_columns:
            raise IngestError("no feature columns")
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise IngestError(f"feature columns not in header: {missing}")
        feat_idx = [header.index(c) for c in feature_columns]

        timestamps: list[int] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"row {lineno} has {len(row)} cells, header has {len(header)}")
            raw_ts = _parse_cell(row[ts_idx], lineno, timestamp_column)
            if raw_ts != int(raw_ts):
                raise IngestError(f"non-integer timestamp at row {lineno}: {row[ts_idx]!r}")
            timestamps.append(int(raw_ts))
            rows.append([_parse_cell(row[j], lineno, header[j]) for j in feat_idx])

    if not rows:
        raise IngestError(f"no data rows in {path}")
    ts = np.array(timestamps, dtype=np.int64)
    vals = np.array(rows, dtype=np.float64)
    order = np.argsort(ts, kind="stable")
    ts, vals = ts[order], vals[order]
    if ts.shape[0] > 1:
        diffs = np.diff(ts)
        if np.any(diffs == 0):
            row = int(np.argmax(diffs == 0)) + 1
            raise DuplicateTimestampError(f"duplicate timestamp {int(ts[row])} at sorted row {row + 1}")
        step = int(diffs[0])
        if np.any(diffs != step):
            row = int(np.argmax(diffs != step)) + 1
            raise SpacingError(
                f"non-uniform spacing at sorted row {row + 1}: gap {int(diffs[row - 1])} != {step}"
            )
    else:
        step = 1
    return TimeSeriesFrame(ts, vals, tuple(feature_columns), step)


def _ingest_smd(path: Path) -> TimeSeriesFrame:
    rows: list[list[float]] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise IngestError(f"row {lineno} has {len(cells)} cells, expected {width}")
            rows.append([_parse_cell(c, lineno, f"f{j}") for j, c in enumerate(cells)])
    if not rows:
        raise IngestError(f"no data rows in {path}")
    vals = np.array(rows, dtype=np.float64)
    names = tuple(f"f{j}" for j in range(vals.shape[1]))
    return TimeSeriesFrame(np.arange(vals.shape[0], dtype=np.int64), vals, names, 1)


def slice_frame(frame: TimeSeriesFrame, start: int, end: int) -> TimeSeriesFrame:
    """Rows [start, end) of ``frame`` as a new frame."""
    n = frame.n_timesteps
    if not (0 <= start < end <= n):
        raise BoundsError(f"slice [{start}, {end}) outside frame of length {n}")
    return TimeSeriesFrame(
        frame.timestamps[start:end].copy(),
        frame.values[start:end].copy(),
        frame.names,
        frame.step,
    )


def write_frame_csv(frame: TimeSeriesFrame, path: str | Path, timestamp_column: str = "timestamp") -> None:
    """Serialize a frame; round-trips bit-exactly through ``ingest_csv``.

    Floats are written with repr (shortest exact decimal form).
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([timestamp_column, *frame.names])
        for i in range(frame.n_timesteps):
            writer.writerow([int(frame.timestamps[i]), *(repr(float(v)) for v in frame.values[i])])


def write_labels_csv(labels: LabelSeries, path: str | Path, timestamps: np.ndarray | None = None) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "label"])
        for i, v in enumerate(labels.values):
            ts = int(timestamps[i]) if timestamps is not None else i
            writer.writerow([ts, int(v)])


def read_labels_csv(path: str | Path) -> LabelSeries:
    """Read labels from a timestamp,label CSV or a headerless 0/1-per-line file."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise IngestError(f"empty label file: {path}")
    values: list[bool] = []
    if lines[0].lower().replace(" ", "") == "timestamp,label":
        for lineno, ln in enumerate(lines[1:], start=2):
            cells = ln.split(",")
            if len(cells) != 2:
                raise IngestError(f"row {lineno}: expected timestamp,label")
            values.append(_parse_cell(cells[1], lineno, "label") != 0.0)
    else:
        for lineno, ln in enumerate(lines, start=1):
            values.append(_parse_cell(ln.split(",")[0], lineno, "label") != 0.0)
    return LabelSeries(np.array(values, dtype=bool))
