"""Multivariate time-series anomaly detection: correlation-clustered
LSTM variational autoencoders with extreme-value dynamic thresholds and
perturbation-based feature attribution."""

from .attribution import ImportanceRanking, perturb_importance
from .clustering import (
    CorrelationMatrix,
    FeatureClustering,
    correlation_distance,
    correlation_matrix,
    kmeans_cluster,
    select_k,
)
from .detect import score_frame
from .evaluation import EvalReport, evaluate
from .frame import LabelSeries, TimeSeriesFrame, ingest_csv, slice_frame, write_frame_csv
from .lstmvae import (
    LstmVaeModel,
    ReconstructionOutput,
    TrainConfig,
    forward,
    init_model,
    kl_gauss,
    loss,
    score_window,
    train,
)
from .pipeline import run_pipeline
from .preprocess import (
    CleaningReport,
    Standardizer,
    WindowedTensor,
    apply_standardizer,
    fit_standardizer,
    iqr_clean,
    make_windows,
)
from .scoring import ScoreSeries, assemble_scores
from .synth import AnomalySpec, GroupSpec, SynthSpec, generate
from .threshold import (
    GpdFit,
    ThresholdSeries,
    dynamic_threshold,
    fit_gpd,
    initial_threshold,
    pot_quantile,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalySpec",
    "CleaningReport",
    "CorrelationMatrix",
    "EvalReport",
    "FeatureClustering",
    "GpdFit",
    "GroupSpec",
    "ImportanceRanking",
    "LabelSeries",
    "LstmVaeModel",
    "ReconstructionOutput",
    "ScoreSeries",
    "Standardizer",
    "SynthSpec",
    "ThresholdSeries",
    "TimeSeriesFrame",
    "TrainConfig",
    "WindowedTensor",
    "apply_standardizer",
    "assemble_scores",
    "correlation_distance",
    "correlation_matrix",
    "dynamic_threshold",
    "evaluate",
    "fit_gpd",
    "fit_standardizer",
    "forward",
    "generate",
    "ingest_csv",
    "init_model",
    "iqr_clean",
    "kl_gauss",
    "kmeans_cluster",
    "loss",
    "make_windows",
    "perturb_importance",
    "pot_quantile",
    "run_pipeline",
    "score_frame",
    "score_window",
    "select_k",
    "slice_frame",
    "train",
    "write_frame_csv",
]
