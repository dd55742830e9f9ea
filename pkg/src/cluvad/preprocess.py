"""Training-data sanitization and window tensor construction.

IQR cleaning repairs per-feature outliers before model fitting;
standardization puts features on comparable scales; windowing reshapes
an N x F frame into the D x T x F tensor the sequence models consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CleaningError, InsufficientDataError, ParameterError, SchemaError
from .frame import TimeSeriesFrame


@dataclass
class CleaningReport:
    """Per-feature record of IQR repairs.

    ``fences[name] = (lower, upper)``; ``replaced[name]`` lists the row
    indices whose value was outside the fences and got replaced.
    """

    multiplier: float
    fences: dict[str, tuple[float, float]] = field(default_factory=dict)
    replaced: dict[str, list[int]] = field(default_factory=dict)

    def total_replacements(self) -> int:
        return sum(len(v) for v in self.replaced.values())

    def to_json(self) -> str:
        payload = {
            "multiplier": self.multiplier,
            "fences": {k: [v[0], v[1]] for k, v in self.fences.items()},
            "replaced": self.replaced,
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _clean_column(x: np.ndarray, multiplier: float, name: str):
    if x.shape[0] < 4:
        raise CleaningError(f"feature {name!r} has {x.shape[0]} points, need >= 4")
    q1, q3 = np.quantile(x, [0.25, 0.75])  # linear-interpolation quantiles
    iqr = q3 - q1
    lower, upper = q1 - multiplier * iqr, q3 + multiplier * iqr
    inside = (x >= lower) & (x <= upper)
    if not inside.any():
        raise CleaningError(f"feature {name!r}: every value outside fences")
    out = np.flatnonzero(~inside)
    cleaned = x.copy()
    inside_idx = np.flatnonzero(inside)
    for i in out:
        # nearest in-fence neighbor on each side, judged on the original values
        pos = np.searchsorted(inside_idx, i)
        neighbors = []
        if pos > 0:
            neighbors.append(x[inside_idx[pos - 1]])
        if pos < inside_idx.size:
            neighbors.append(x[inside_idx[pos]])
        cleaned[i] = float(np.mean(neighbors))
    return cleaned, (float(lower), float(upper)), [int(i) for i in out]


def iqr_clean(frame: TimeSeriesFrame, multiplier: float = 1.5) -> tuple[TimeSeriesFrame, CleaningReport]:
    """Replace per-feature Tukey-fence outliers by the mean of their
    nearest in-fence neighbors (one per side; one-sided at boundaries).

    Fences are [Q1 - m*IQR, Q3 + m*IQR] with linearly interpolated
    quantiles. In-fence values are never altered.
    """
    if multiplier <= 0:
        raise ParameterError(f"multiplier must be > 0, got {multiplier}")
    report = CleaningReport(multiplier=multiplier)
    cleaned = frame.values.copy()
    for j, name in enumerate(frame.names):
        col, fences, replaced = _clean_column(frame.values[:, j], multiplier, name)
        cleaned[:, j] = col
        report.fences[name] = fences
        report.replaced[name] = replaced
    return frame.with_values(cleaned), report


@dataclass
class Standardizer:
    """Per-feature location/scale learned on (cleaned) training data.

    Degenerate features (zero variance) keep sigma = 1 and are flagged,
    so transforming them is the identity shift.
    """

    names: tuple[str, ...]
    mean: np.ndarray
    sigma: np.ndarray
    degenerate: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "names": list(self.names),
                "mean": [float(v) for v in self.mean],
                "sigma": [float(v) for v in self.sigma],
                "degenerate": [bool(v) for v in self.degenerate],
            },
            sort_keys=True,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "Standardizer":
        d = json.loads(text)
        return cls(
            names=tuple(d["names"]),
            mean=np.array(d["mean"], dtype=np.float64),
            sigma=np.array(d["sigma"], dtype=np.float64),
            degenerate=np.array(d["degenerate"], dtype=bool),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Standardizer":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def fit_standardizer(frame: TimeSeriesFrame) -> Standardizer:
    """Population mean/std per feature; zero-variance features flagged."""
    mean = frame.values.mean(axis=0)
    sigma = frame.values.std(axis=0)  # population std
    degenerate = sigma < 1e-12
    sigma = np.where(degenerate, 1.0, sigma)
    return Standardizer(frame.names, mean, sigma, degenerate)


def _check_names(std: Standardizer, frame: TimeSeriesFrame) -> None:
    if std.names != frame.names:
        raise SchemaError(f"standardizer fit on {std.names}, frame has {frame.names}")


def apply_standardizer(std: Standardizer, frame: TimeSeriesFrame) -> TimeSeriesFrame:
    _check_names(std, frame)
    return frame.with_values((frame.values - std.mean) / std.sigma)


def invert_standardizer(std: Standardizer, frame: TimeSeriesFrame) -> TimeSeriesFrame:
    _check_names(std, frame)
    return frame.with_values(frame.values * std.sigma + std.mean)


@dataclass
class WindowedTensor:
    """D overlapping windows of T timesteps over F features.

    ``data[d, j] == source[origin + d*stride + j]`` exactly; windowing
    copies rows, it never rescales.
    """

    data: np.ndarray
    window: int
    stride: int
    origin: int
    names: tuple[str, ...]

    @property
    def n_windows(self) -> int:
        return self.data.shape[0]

    def last_step_indices(self) -> np.ndarray:
        """Source row index of each window's final timestep."""
        d = np.arange(self.n_windows)
        return self.origin + d * self.stride + self.window - 1


def make_windows(frame: TimeSeriesFrame, window: int, stride: int = 1) -> WindowedTensor:
    """Rolling windows over the frame: D = floor((N - T) / stride) + 1."""
    n = frame.n_timesteps
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if n < window:
        raise InsufficientDataError(f"{n} rows < window {window}")
    d = (n - window) // stride + 1
    data = np.empty((d, window, frame.n_features), dtype=np.float64)
    for i in range(d):
        data[i] = frame.values[i * stride : i * stride + window]
    return WindowedTensor(data, window, stride, 0, frame.names)
