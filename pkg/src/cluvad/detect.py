"""Frame-level scoring through a set of per-cluster models."""

from __future__ import annotations

import numpy as np

from .clustering import FeatureClustering
from .errors import SchemaError
from .frame import TimeSeriesFrame
from .lstmvae import LstmVaeModel, score_windows
from .preprocess import make_windows
from .scoring import ScoreSeries, assemble_scores


def cluster_outputs(
    models: dict[int, LstmVaeModel],
    clustering: FeatureClustering,
    frame: TimeSeriesFrame,
    window: int,
    stride: int = 1,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-cluster (recon, kl) series over the frame's windows.

    Cluster c's model sees only its own feature columns; outputs are
    aligned to window-final timesteps, one entry per window.
    """
    outputs = []
    for c, members in enumerate(clustering.clusters):
        if c not in models:
            raise SchemaError(f"no model for cluster {c}")
        names = [clustering.names[i] for i in members]
        model = models[c]
        if model.names != tuple(names):
            raise SchemaError(f"cluster {c} features {names} != model features {model.names}")
        tensor = make_windows(frame.select(names), window, stride)
        outputs.append(score_windows(model, tensor.data))
    return outputs


def score_frame(
    models: dict[int, LstmVaeModel],
    clustering: FeatureClustering,
    frame: TimeSeriesFrame,
    window: int,
    stride: int = 1,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
    normalize: bool = True,
    smooth: int = 0,
) -> ScoreSeries:
    """Anomaly score series for a (standardized) frame."""
    outputs = cluster_outputs(models, clustering, frame, window, stride)
    first = window - 1
    timestamps = frame.timestamps[first::stride][: len(outputs[0][0])]
    return assemble_scores(
        outputs,
        lambda1=lambda1,
        lambda2=lambda2,
        normalize=normalize,
        timestamps=timestamps,
        first_index=first,
        smooth=smooth,
    )
