"""Correlation-based feature clustering.

Features are embedded as rows of the Pearson correlation matrix
(correlation profiles) and grouped with seeded Lloyd k-means; cluster
count is chosen by the inertia elbow with a silhouette tie-break. The
clustering quality metric (silhouette) is evaluated under the
correlation distance sqrt(2 * (1 - r)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, ParameterError
from .frame import TimeSeriesFrame


@dataclass
class CorrelationMatrix:
    """F x F Pearson matrix with the feature names it was built from.

    Exact symmetry and a unit diagonal are forced at construction; rows
    of zero-variance features are zeroed off-diagonal and flagged.
    """

    r: np.ndarray
    names: tuple[str, ...]
    degenerate: np.ndarray

    @property
    def n_features(self) -> int:
        return self.r.shape[0]


def correlation_matrix(frame: TimeSeriesFrame) -> CorrelationMatrix:
    """Pairwise Pearson correlation of the frame's features.

    Built as a single centered Gram product so r[i, j] == r[j, i]
    bit-exactly. Constant features get r = 0 off-diagonal and a
    degeneracy flag; the diagonal is forced to 1.
    """
    if frame.n_timesteps < 2:
        raise InsufficientDataError("need at least 2 timesteps for correlation")
    x = frame.values - frame.values.mean(axis=0)
    gram = x.T @ x
    ss = np.diag(gram).copy()
    degenerate = ss < 1e-24
    denom = np.sqrt(np.where(degenerate, 1.0, ss))
    r = gram / (denom[:, None] * denom[None, :])
    r = np.triu(r) + np.triu(r, 1).T  # mirror: bit-exact symmetry
    r[degenerate, :] = 0.0
    r[:, degenerate] = 0.0
    np.fill_diagonal(r, 1.0)
    np.clip(r, -1.0, 1.0, out=r)
    return CorrelationMatrix(r, frame.names, degenerate)


def correlation_distance(r) -> np.ndarray | float:
    """sqrt(2 * (1 - r)): 0 for identical profiles, 2 for anticorrelated.

    Values outside [-1, 1] by more than 1e-12 raise; within tolerance
    they are clamped.
    """
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr > 1.0 + 1e-12) or np.any(arr < -1.0 - 1e-12):
        raise ParameterError("correlation outside [-1, 1]")
    arr = np.clip(arr, -1.0, 1.0)
    out = np.sqrt(2.0 * (1.0 - arr))
    return float(out) if np.isscalar(r) else out


@dataclass
class FeatureClustering:
    """Disjoint feature groups plus the quality numbers that chose them."""

    clusters: list[list[int]]
    names: tuple[str, ...]
    k: int
    inertia: float
    silhouette: float
    centroids: np.ndarray
    seed: int
    inertia_history: list[float] = field(default_factory=list)
    degenerate_singletons: list[int] = field(default_factory=list)

    def labels(self) -> np.ndarray:
        lab = np.full(len(self.names), -1, dtype=np.int64)
        for c, members in enumerate(self.clusters):
            lab[members] = c
        return lab

    def cluster_names(self) -> list[list[str]]:
        return [[self.names[i] for i in members] for members in self.clusters]

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "clusters": self.cluster_names(),
                "silhouette": self.silhouette,
                "inertia": self.inertia,
                "seed": self.seed,
            },
            sort_keys=True,
            indent=1,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def clustering_from_json(text: str, names: tuple[str, ...]) -> FeatureClustering:
    """Rebuild a (partition-only) clustering from its JSON artifact."""
    d = json.loads(text)
    clusters = [[names.index(n) for n in group] for group in d["clusters"]]
    return FeatureClustering(
        clusters=clusters,
        names=names,
        k=int(d["k"]),
        inertia=float(d["inertia"]),
        silhouette=float(d["silhouette"]),
        centroids=np.zeros((0, len(names))),
        seed=int(d["seed"]),
    )


def silhouette_from_distances(dist: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over all points for a precomputed distance matrix.

    Singleton-cluster points score 0; a single cluster scores 0.
    """
    n = dist.shape[0]
    ids = np.unique(labels)
    if ids.size < 2:
        return 0.0
    scores = np.zeros(n)
    for i in range(n):
        own = labels[i]
        same = (labels == own) & (np.arange(n) != i)
        if not same.any():
            scores[i] = 0.0
            continue
        a = dist[i, same].mean()
        b = min(dist[i, labels == c].mean() for c in ids if c != own)
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # duplicate points: any choice is equivalent
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[c] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[c]) ** 2).sum(axis=1))
    return centroids


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int):
    centroids = _kmeans_pp_init(points, k, rng)
    labels = np.full(points.shape[0], -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        # empty clusters: reseed from the point farthest from its centroid
        for c in range(k):
            if not (new_labels == c).any():
                far = int(d2[np.arange(points.shape[0]), new_labels].argmax())
                centroids[c] = points[far]
                d2[:, c] = ((points - centroids[c]) ** 2).sum(axis=1)
                new_labels = d2.argmin(axis=1)
        inertia_now = float(d2[np.arange(points.shape[0]), new_labels].sum())
        if history and inertia_now > history[-1] + 1e-9 * max(history[-1], 1.0):
            raise AssertionError(
                f"Lloyd inertia increased: {history[-1]} -> {inertia_now}"
            )
        history.append(inertia_now)
        if (new_labels == labels).all():
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
    inertia = history[-1] if history else 0.0
    return labels, centroids, inertia, history


def kmeans_cluster(
    corr: CorrelationMatrix,
    k: int,
    seed: int = 0,
    restarts: int = 16,
    max_iter: int = 300,
) -> FeatureClustering:
    """Seeded best-of-restarts Lloyd k-means on correlation profiles.

    Degenerate (zero-variance) features are split off into singleton
    clusters first; the requested k counts those singletons. Ties across
    restarts resolve to the earliest restart, so results are a pure
    function of (corr, k, seed, restarts).
    """
    f = corr.n_features
    if not (1 <= k <= f):
        raise ParameterError(f"k must be in [1, {f}], got {k}")
    degenerate = np.flatnonzero(corr.degenerate)
    active = np.flatnonzero(~corr.degenerate)
    k_active = k - degenerate.size
    if k_active < 1 or k_active > active.size:
        raise ParameterError(
            f"k={k} incompatible with {degenerate.size} degenerate and {active.size} active features"
        )
    points = corr.r[active]

    best = None
    for restart in range(restarts):
        rng = np.random.default_rng((seed, restart))
        labels, centroids, inertia, history = _lloyd(points, k_active, rng, max_iter)
        if best is None or inertia < best[2] - 1e-15:
            best = (labels, centroids, inertia, history)
    labels, centroids, inertia, history = best

    clusters = [[int(active[i]) for i in np.flatnonzero(labels == c)] for c in range(k_active)]
    clusters = [sorted(c) for c in clusters if c]
    clusters += [[int(i)] for i in degenerate]

    full_labels = np.full(f, -1, dtype=np.int64)
    for c, members in enumerate(clusters):
        full_labels[members] = c
    dist = correlation_distance(corr.r)
    sil = silhouette_from_distances(dist, full_labels)

    return FeatureClustering(
        clusters=clusters,
        names=corr.names,
        k=len(clusters),
        inertia=float(inertia),
        silhouette=sil,
        centroids=centroids,
        seed=seed,
        inertia_history=history,
        degenerate_singletons=[int(i) for i in degenerate],
    )


def select_k(
    corr: CorrelationMatrix,
    k_min: int = 2,
    k_max: int = 6,
    seed: int = 0,
    restarts: int = 16,
    silhouette_margin: float = 0.05,
) -> tuple[int, dict]:
    """Scan k in [k_min, k_max]; pick the inertia elbow, letting a
    neighbor win when its silhouette beats the elbow's by more than
    ``silhouette_margin``.

    The elbow is the interior k maximizing the second difference
    inertia(k-1) - 2*inertia(k) + inertia(k+1). Structureless inputs
    (inertia ~ 0 everywhere) return k_min with a degeneracy flag.
    """
    f = corr.n_features
    k_max = min(k_max, f)
    if not (1 <= k_min < k_max):
        raise ParameterError(f"need 1 <= k_min < k_max <= F, got [{k_min}, {k_max}], F={f}")
    if k_max < 3 or k_max - k_min < 2:
        raise ParameterError("need at least 3 candidate k values for the elbow's second difference")

    ks = list(range(k_min, k_max + 1))
    results = {k: kmeans_cluster(corr, k, seed=seed, restarts=restarts) for k in ks}
    inertias = {k: results[k].inertia for k in ks}
    silhouettes = {k: results[k].silhouette for k in ks}

    diagnostics = {
        "k_values": ks,
        "inertia": [inertias[k] for k in ks],
        "silhouette": [silhouettes[k] for k in ks],
        "degenerate": False,
    }
    if max(inertias.values()) < 1e-12:
        diagnostics["degenerate"] = True
        diagnostics["selected"] = k_min
        return k_min, diagnostics

    interior = ks[1:-1]
    second_diff = {k: inertias[k - 1] - 2.0 * inertias[k] + inertias[k + 1] for k in interior}
    elbow = max(interior, key=lambda k: (second_diff[k], -k))
    diagnostics["second_difference"] = [second_diff.get(k) for k in ks]
    diagnostics["elbow"] = elbow

    better = [
        n
        for n in (elbow - 1, elbow + 1)
        if n in silhouettes and silhouettes[n] - silhouettes[elbow] > silhouette_margin
    ]
    chosen = max(better, key=lambda k: silhouettes[k]) if better else elbow
    diagnostics["selected"] = chosen
    return chosen, diagnostics
