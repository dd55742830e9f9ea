"""Extreme-value dynamic thresholding.

Exceedances over a high empirical quantile are modeled with a
Generalized Pareto Distribution (peaks-over-threshold); the fitted tail
extrapolates a risk-q threshold far beyond the observed quantiles. The
dynamic scheme refits on sliding windows (half-window advance) so the
threshold tracks local score level, excluding already-flagged anomalies
from each refit so detected events do not contaminate the tail model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import InsufficientDataError, InsufficientExcessError, NumericError, ParameterError
from .scoring import ScoreSeries

XI_ZERO_TOL = 1e-8


@dataclass
class GpdFit:
    """Fitted GPD tail over excesses above the initial threshold t."""

    xi: float
    sigma: float
    t: float
    n_excess: int
    n_total: int
    method: str          # "grimshaw" or "moments"
    degenerate: bool = False


def _gpd_log_likelihood(y: np.ndarray, xi: float, sigma: float) -> float:
    n = y.size
    if sigma <= 0:
        return -np.inf
    if abs(xi) < XI_ZERO_TOL:
        return -n * np.log(sigma) - y.sum() / sigma
    s = 1.0 + (xi / sigma) * y
    if np.any(s <= 0):
        return -np.inf
    return -n * np.log(sigma) - (1.0 + 1.0 / xi) * np.log(s).sum()


def _grimshaw_candidates(y: np.ndarray, n_grid: int = 200) -> list[tuple[float, float]]:
    """Roots of the Grimshaw score equation, as (xi, sigma) pairs.

    The profile equation u(theta) * v(theta) = 1 with
    s_i = 1 + theta * y_i, u = 1 + mean(log s), v = mean(1 / s) is
    scanned for sign changes on (-1/ymax, eps) and (eps, upper) and each
    bracket refined by Brent's method.
    """
    ymax, ymin, ymean = y.max(), y.min(), y.mean()

    def w(theta: float) -> float:
        s = 1.0 + theta * y
        if np.any(s <= 0):
            return np.nan
        logs = np.log(s)
        return (1.0 + logs.mean()) * np.mean(1.0 / s) - 1.0

    # below this scale u*v - 1 is double-precision noise around its root at 0
    eps = 1e-5 / max(ymean, 1e-12)
    hi = 2.0 * (ymean - ymin) / max(ymin**2, 1e-12)
    hi = max(hi, eps * 10)

    candidates: list[tuple[float, float]] = []
    # Bounded-tail roots crowd the -1/ymax boundary, so walk geometric
    # distances from each end of the valid interval rather than a linear grid.
    span = 1.0 / ymax - eps
    left = -1.0 / ymax + np.geomspace(span * 1e-12, span, n_grid)
    right = np.geomspace(eps, hi, n_grid)  # hi/eps spans many decades
    for grid in (left, right):
        vals = np.array([w(t) for t in grid])
        ok = np.isfinite(vals)
        for i in range(len(grid) - 1):
            if not (ok[i] and ok[i + 1]):
                continue
            if vals[i] == 0.0:
                roots = [grid[i]]
            elif vals[i] * vals[i + 1] < 0:
                try:
                    roots = [brentq(w, grid[i], grid[i + 1], xtol=1e-14)]
                except ValueError:
                    continue
            else:
                continue
            for theta in roots:
                if abs(theta) < eps:
                    continue
                xi = float(np.log(1.0 + theta * y).mean())
                sigma = xi / theta
                if np.isfinite(sigma) and sigma > 0:
                    candidates.append((xi, float(sigma)))
    return candidates


def _moments_fit(y: np.ndarray) -> tuple[float, float, bool]:
    """Method-of-moments GPD fit; degenerate spread gets a variance floor."""
    m = y.mean()
    v = y.var(ddof=1) if y.size > 1 else 0.0
    floor = 1e-12 * max(m * m, 1e-30)
    degenerate = v < floor
    v = max(v, floor)
    xi = float(np.clip(0.5 * (1.0 - m * m / v), -5.0, 5.0))
    sigma = max(m * (1.0 - xi), 1e-12 * max(m, 1.0))
    return xi, float(sigma), degenerate


def fit_gpd(excesses: np.ndarray, min_excesses: int = 10) -> tuple[float, float, str, bool]:
    """Maximum-likelihood (xi, sigma) for excess values above a threshold.

    Grimshaw's one-dimensional reduction supplies the ML candidates; the
    exponential tail (xi = 0, sigma = mean) always competes. If no root
    brackets, falls back to method-of-moments.

    Returns (xi, sigma, method, degenerate).
    """
    y = np.asarray(excesses, dtype=np.float64)
    if y.size < min_excesses:
        raise InsufficientExcessError(f"{y.size} excesses < minimum {min_excesses}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ParameterError("excesses must be positive and finite")
    if y.var(ddof=1) < 1e-12 * max(y.mean() ** 2, 1e-30):
        xi, sigma, degenerate = _moments_fit(y)
        return xi, sigma, "moments", degenerate

    candidates = _grimshaw_candidates(y)
    if not candidates:
        xi, sigma, degenerate = _moments_fit(y)
        return xi, sigma, "moments", degenerate

    candidates.append((0.0, float(y.mean())))
    best = max(candidates, key=lambda c: _gpd_log_likelihood(y, *c))
    return best[0], best[1], "grimshaw", False


def pot_quantile(fit: GpdFit, q: float) -> float:
    """Risk-q threshold extrapolated from the fitted tail.

    z_q = t + (sigma/xi) * ((q*n/N_t)^(-xi) - 1), with the xi -> 0 limit
    z_q = t - sigma * ln(q*n/N_t).
    """
    if not (0.0 < q < 1.0):
        raise ParameterError(f"risk q must be in (0, 1), got {q}")
    if fit.n_excess <= 0 or fit.n_total <= 0:
        raise ParameterError("fit must have positive sample and excess counts")
    r = q * fit.n_total / fit.n_excess
    if abs(fit.xi) < XI_ZERO_TOL:
        return float(fit.t - fit.sigma * np.log(r))
    return float(fit.t + (fit.sigma / fit.xi) * (r ** (-fit.xi) - 1.0))


@dataclass
class InitialThreshold:
    threshold: float
    fit: GpdFit | None
    fallback: bool      # True when too few excesses forced an empirical quantile


def initial_threshold(
    scores: np.ndarray,
    q: float = 1e-3,
    t_quantile: float = 0.98,
    min_excesses: int = 10,
) -> InitialThreshold:
    """POT threshold for one segment of scores.

    The initial level t is the empirical ``t_quantile``; the GPD is fit
    on strict exceedances of t. Segments too flat or too short for
    ``min_excesses`` exceedances fall back to the empirical (1 - q)
    quantile, flagged.
    """
    x = np.asarray(scores, dtype=np.float64)
    if x.size == 0:
        raise InsufficientDataError("empty segment")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite score in segment")
    t = float(np.quantile(x, t_quantile))
    exc = x[x > t] - t
    try:
        xi, sigma, method, degenerate = fit_gpd(exc, min_excesses=min_excesses)
    except InsufficientExcessError:
        return InitialThreshold(float(np.quantile(x, 1.0 - q)), None, True)
    fit = GpdFit(xi, sigma, t, int(exc.size), int(x.size), method, degenerate)
    return InitialThreshold(pot_quantile(fit, q), fit, False)


def _window_threshold(
    seg: np.ndarray, q: float, t_quantile: float, min_excesses: int
) -> float:
    """Refit threshold for one sliding window.

    Small windows yield few excesses, and a noisy negative shape
    estimate can place the support bound barely above the window max;
    every later record-high noise point would then alarm and be locked
    out of future fits. Flooring the extrapolation at the
    exponential-tail quantile keeps refits conservative.
    """
    res = initial_threshold(seg, q, t_quantile, min_excesses)
    if res.fit is None:
        return res.threshold
    fit = res.fit
    if fit.xi >= 0:
        return res.threshold
    t = fit.t
    exc_mean = seg[seg > t].mean() - t
    floor = t - exc_mean * np.log(q * fit.n_total / fit.n_excess)
    return max(res.threshold, float(floor))


@dataclass
class ThresholdSeries:
    """Per-timestep threshold and label aligned to a score series."""

    timestamps: np.ndarray
    scores: np.ndarray
    thresholds: np.ndarray
    labels: np.ndarray
    window: int
    q: float
    first_index: int

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def save_csv(self, path: str | Path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp", "score", "threshold", "label"])
            for i in range(len(self)):
                writer.writerow(
                    [
                        int(self.timestamps[i]),
                        repr(float(self.scores[i])),
                        repr(float(self.thresholds[i])),
                        int(self.labels[i]),
                    ]
                )


def load_thresholds_csv(path: str | Path) -> ThresholdSeries:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        ts, sc, th, lab = [], [], [], []
        for row in reader:
            ts.append(int(row[0]))
            sc.append(float(row[1]))
            th.append(float(row[2]))
            lab.append(bool(int(row[3])))
    return ThresholdSeries(
        np.array(ts, dtype=np.int64), np.array(sc), np.array(th),
        np.array(lab, dtype=bool), 0, 0.0, 0,
    )


def estimate_window(values: np.ndarray, default: int = 64) -> int:
    """Window size from the dominant autocorrelation period (2x lag).

    Looks for the autocorrelation peak past its first zero crossing;
    aperiodic series fall back to ``default``. The result is clamped to
    [8, len/4] so a middle sliding phase always exists.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    cap = max(8, n // 4)
    x = x - x.mean()
    denom = float((x * x).sum())
    if denom <= 0:
        return min(max(default, 8), cap)
    acf = np.correlate(x, x, "full")[n - 1 :] / denom
    max_lag = min(n // 4, 2000)
    window = default
    negative = np.flatnonzero(acf[: max_lag + 1] < 0)
    if negative.size:
        start = int(negative[0])
        if start < max_lag:
            lag = start + int(np.argmax(acf[start : max_lag + 1]))
            if acf[lag] > 0.1 and lag >= 2:
                window = 2 * lag
    return min(max(window, 8), cap)


def dynamic_threshold(
    scores: ScoreSeries,
    window: int | None = None,
    q: float = 1e-3,
    t_quantile: float = 0.98,
    min_excesses: int = 10,
) -> ThresholdSeries:
    """Three-segment sliding POT thresholding over a score series.

    Head [0, w) is labeled against the initial POT threshold. The middle
    is finalized in half-window batches, each against a threshold refit
    on the trailing w already-finalized scores with labeled anomalies
    excluded, so a fresh spike is judged before it can contaminate any
    tail fit. The final segment reuses the last fitted threshold rather
    than fitting a partial window.
    """
    values = np.asarray(scores.values, dtype=np.float64)
    n = values.size
    w = estimate_window(values) if window is None else int(window)
    if w < 2:
        raise ParameterError(f"window must be >= 2, got {w}")
    if n < 2 * w:
        raise InsufficientDataError(f"{n} scores < 2 * window ({2 * w})")
    half = w // 2

    thresholds = np.empty(n)
    labels = np.zeros(n, dtype=bool)

    thr = _window_threshold(values[:w], q, t_quantile, min_excesses)
    thresholds[:w] = thr
    labels[:w] = values[:w] > thr

    pos = w
    while pos < n - w:
        batch_end = min(pos + half, n - w)
        keep = ~labels[pos - w : pos]
        seg = values[pos - w : pos][keep]
        if seg.size >= 4:
            thr = _window_threshold(seg, q, t_quantile, min_excesses)
        thresholds[pos:batch_end] = thr
        labels[pos:batch_end] = values[pos:batch_end] > thr
        pos = batch_end

    thresholds[pos:] = thr
    labels[pos:] = values[pos:] > thr

    return ThresholdSeries(
        timestamps=np.asarray(scores.timestamps, dtype=np.int64).copy(),
        scores=values.copy(),
        thresholds=thresholds,
        labels=labels,
        window=w,
        q=q,
        first_index=scores.first_index,
    )
