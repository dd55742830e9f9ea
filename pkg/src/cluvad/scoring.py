"""Per-timestep anomaly score assembly.

Each cluster model yields a (reconstruction error, KL) pair per scored
timestep; the anomaly score is the weighted combination
lambda1 * recon + lambda2 * kl, summed over clusters, optionally after a
robust median/MAD normalization so differently sized clusters
contribute on a common scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, NumericError, ParameterError


@dataclass
class ScoreSeries:
    """Anomaly score per scored timestep plus its full breakdown.

    ``first_index`` is the source-frame row of the first scored
    timestep (T - 1 at stride 1: earlier rows never finish a window).
    ``recon``/``kl`` hold the raw per-cluster components so the
    weighted-and-aggregated total can be reproduced from them.
    """

    timestamps: np.ndarray       # (S,) source timestamps of scored steps
    values: np.ndarray           # (S,) total score
    lambda1: float
    lambda2: float
    recon: np.ndarray            # (C, S) raw per-cluster reconstruction errors
    kl: np.ndarray               # (C, S) raw per-cluster KL terms
    normalized: bool
    norm_center: np.ndarray      # (C,) medians (zeros when not normalized)
    norm_scale: np.ndarray       # (C,) MADs   (ones when not normalized)
    first_index: int

    @property
    def n_clusters(self) -> int:
        return self.recon.shape[0]

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def cluster_components(self) -> np.ndarray:
        """(C, S) per-cluster contributions after weighting and normalization."""
        comp = self.lambda1 * self.recon + self.lambda2 * self.kl
        if self.normalized:
            comp = (comp - self.norm_center[:, None]) / self.norm_scale[:, None]
        return comp

    def save_csv(self, path: str | Path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["timestamp", "total"]
                + [f"cluster{c}" for c in range(self.n_clusters)]
            )
            comp = self.cluster_components()
            for i in range(len(self)):
                writer.writerow(
                    [int(self.timestamps[i]), repr(float(self.values[i]))]
                    + [repr(float(comp[c, i])) for c in range(self.n_clusters)]
                )


def moving_average(values: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average with edge truncation (width must be odd)."""
    if width < 1 or width % 2 == 0:
        raise ParameterError(f"smoothing width must be a positive odd integer, got {width}")
    if width == 1:
        return np.asarray(values, dtype=np.float64).copy()
    half = width // 2
    padded = np.pad(np.asarray(values, dtype=np.float64), half, mode="edge")
    kernel = np.full(width, 1.0 / width)
    return np.convolve(padded, kernel, mode="valid")


def assemble_scores(
    cluster_outputs: list[tuple[np.ndarray, np.ndarray]],
    lambda1: float = 1.0,
    lambda2: float = 1.0,
    normalize: bool = True,
    timestamps: np.ndarray | None = None,
    first_index: int = 0,
    smooth: int = 0,
) -> ScoreSeries:
    """Combine per-cluster (recon, kl) series into one score series.

    All clusters must cover the same timesteps. With ``normalize`` each
    cluster's weighted component is centered on its median and scaled by
    its MAD (degenerate spread falls back to scale 1) before clusters
    are summed. ``smooth`` (odd width, 0 = off) applies a centered
    moving average to each cluster's raw components; being linear it
    keeps the breakdown consistent with the totals.
    """
    if lambda1 < 0 or lambda2 < 0 or (lambda1 == 0 and lambda2 == 0):
        raise ParameterError("weights must be >= 0 and not both zero")
    if not cluster_outputs:
        raise ParameterError("no cluster outputs")
    lengths = {len(recon) for recon, _ in cluster_outputs} | {len(kl) for _, kl in cluster_outputs}
    if len(lengths) != 1:
        raise AlignmentError(f"cluster series lengths differ: {sorted(lengths)}")
    s = lengths.pop()

    recon = np.vstack([np.asarray(r, dtype=np.float64) for r, _ in cluster_outputs])
    kl = np.vstack([np.asarray(k, dtype=np.float64) for _, k in cluster_outputs])
    if smooth:
        recon = np.vstack([moving_average(row, smooth) for row in recon])
        kl = np.vstack([moving_average(row, smooth) for row in kl])
    if not (np.all(np.isfinite(recon)) and np.all(np.isfinite(kl))):
        raise NumericError("non-finite cluster component")

    comp = lambda1 * recon + lambda2 * kl
    c = comp.shape[0]
    if normalize:
        center = np.median(comp, axis=1)
        scale = np.median(np.abs(comp - center[:, None]), axis=1)
        scale = np.where(scale > 1e-12, scale, 1.0)
        comp = (comp - center[:, None]) / scale[:, None]
    else:
        center = np.zeros(c)
        scale = np.ones(c)

    total = comp.sum(axis=0)
    if timestamps is None:
        timestamps = np.arange(first_index, first_index + s, dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    if timestamps.shape != (s,):
        raise AlignmentError(f"{timestamps.shape[0]} timestamps for {s} scores")

    return ScoreSeries(
        timestamps=timestamps,
        values=total,
        lambda1=lambda1,
        lambda2=lambda2,
        recon=recon,
        kl=kl,
        normalized=normalize,
        norm_center=center,
        norm_scale=scale,
        first_index=first_index,
    )


def scores_from_totals(timestamps, totals, first_index: int = 0) -> ScoreSeries:
    """Wrap bare totals (e.g. reloaded from CSV) as a one-pseudo-cluster
    series; the breakdown invariant holds with recon = totals, kl = 0."""
    totals = np.asarray(totals, dtype=np.float64)
    return ScoreSeries(
        timestamps=np.asarray(timestamps, dtype=np.int64),
        values=totals,
        lambda1=1.0,
        lambda2=0.0,
        recon=totals[None, :].copy(),
        kl=np.zeros((1, totals.size)),
        normalized=False,
        norm_center=np.zeros(1),
        norm_scale=np.ones(1),
        first_index=first_index,
    )


def load_scores_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """(timestamps, totals) from a ScoreSeries CSV artifact."""
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["timestamp", "total"]:
            raise AlignmentError(f"unexpected score CSV header: {header[:2]}")
        ts, totals = [], []
        for row in reader:
            ts.append(int(row[0]))
            totals.append(float(row[1]))
    return np.array(ts, dtype=np.int64), np.array(totals, dtype=np.float64)
