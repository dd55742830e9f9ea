"""End-to-end run orchestration.

Stages communicate only through files in the run directory, so any
stage can be re-run from its persisted inputs (``--from``), and a run
is fully reproducible from its manifest (resolved config + seeds). The
manifest records a sha256 checksum per artifact; identical configs must
reproduce identical checksums.
"""

from __future__ import annotations

import copy
import hashlib
import json
import shutil
from pathlib import Path

import numpy as np

from .clustering import clustering_from_json, correlation_matrix, kmeans_cluster, select_k
from .detect import score_frame
from .errors import CluvadError, ParameterError, PipelineError
from .evaluation import evaluate
from .frame import (
    LabelSeries,
    ingest_csv,
    read_labels_csv,
    write_frame_csv,
    write_labels_csv,
)
from .lstmvae import LstmVaeModel, TrainConfig, init_model, train
from .preprocess import Standardizer, apply_standardizer, fit_standardizer, iqr_clean, make_windows
from .scoring import load_scores_csv, scores_from_totals
from .threshold import dynamic_threshold, load_thresholds_csv

STAGES = ["ingest", "clean", "cluster", "train", "score", "threshold", "evaluate", "attribution"]

DEFAULTS: dict = {
    "data": {
        "train": None,
        "test": None,          # defaults to the training data
        "labels": None,
        "format": "csv",
        "timestamp_column": "timestamp",
    },
    "clean": {"iqr_multiplier": 1.5},
    "standardize": True,
    "window": {"size": 14, "stride": 1, "train_stride": 1},
    "clustering": {"k": None, "k_min": 2, "k_max": 6, "seed": 7, "restarts": 16},
    "model": {"hidden": 64, "latent": 8, "beta": 1.0, "seed": 1},
    "training": {
        "epochs": 50,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "seed": 11,
        "clip_norm": 5.0,
        "val_fraction": 0.1,
        "patience": 5,
    },
    "score": {"lambda1": 1.0, "lambda2": 1.0, "normalize": True, "smooth": 0},
    "threshold": {"q": 1e-3, "t_quantile": 0.98, "window": None, "min_excesses": 10},
    "evaluation": {"enabled": None, "protocol": "point-adjust"},  # None: auto if labels given
    "attribution": {"enabled": False, "policy": "permute", "repeats": 5, "seed": 23, "sigma": 1.0},
}


def resolve_config(user: dict) -> dict:
    """Overlay user keys on the defaults; unknown keys are errors."""

    def merge(base: dict, over: dict, path: str) -> dict:
        out = copy.deepcopy(base)
        for key, value in over.items():
            if key not in base:
                raise ParameterError(f"unknown config key {path + key!r}")
            if isinstance(base[key], dict) and isinstance(value, dict):
                out[key] = merge(base[key], value, path + key + ".")
            else:
                out[key] = value
        return out

    cfg = merge(DEFAULTS, user, "")
    if not cfg["data"]["train"]:
        raise ParameterError("config data.train is required")
    return cfg


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, run_dir: Path, config: dict):
        self.path = run_dir / "manifest.json"
        self.data = {"config": config, "stages": {}, "error": None}

    @classmethod
    def load(cls, run_dir: Path) -> "Manifest":
        m = cls.__new__(cls)
        m.path = run_dir / "manifest.json"
        m.data = json.loads(m.path.read_text(encoding="utf-8"))
        return m

    def record(self, stage: str, artifacts: list[Path]) -> None:
        self.data["stages"][stage] = {
            "status": "complete",
            "artifacts": {p.name: _sha256(p) for p in artifacts},
        }
        self.write()

    def record_skipped(self, stage: str, reason: str) -> None:
        self.data["stages"][stage] = {"status": "skipped", "reason": reason}
        self.write()

    def record_error(self, stage: str, message: str) -> None:
        self.data["error"] = {"stage": stage, "message": message}
        self.write()

    def write(self) -> None:
        self.path.write_text(json.dumps(self.data, sort_keys=True, indent=1), encoding="utf-8")


def _ingest_configured(cfg: dict, path: str):
    return ingest_csv(
        path,
        timestamp_column=cfg["data"]["timestamp_column"],
        fmt=cfg["data"]["format"],
    )


def stage_ingest(cfg: dict, rd: Path) -> list[Path]:
    train_frame = _ingest_configured(cfg, cfg["data"]["train"])
    write_frame_csv(train_frame, rd / "train.csv")
    test_path = cfg["data"]["test"] or cfg["data"]["train"]
    test_frame = _ingest_configured(cfg, test_path)
    if test_frame.names != train_frame.names:
        raise ParameterError(f"test features {test_frame.names} != train features {train_frame.names}")
    write_frame_csv(test_frame, rd / "test.csv")
    written = [rd / "train.csv", rd / "test.csv"]
    if cfg["data"]["labels"]:
        labels = read_labels_csv(cfg["data"]["labels"])
        if len(labels) != test_frame.n_timesteps:
            raise ParameterError(
                f"{len(labels)} labels for {test_frame.n_timesteps} test rows"
            )
        write_labels_csv(labels, rd / "labels.csv", test_frame.timestamps)
        written.append(rd / "labels.csv")
    return written


def stage_clean(cfg: dict, rd: Path) -> list[Path]:
    frame = ingest_csv(rd / "train.csv")
    cleaned, report = iqr_clean(frame, cfg["clean"]["iqr_multiplier"])
    write_frame_csv(cleaned, rd / "cleaned.csv")
    report.save(rd / "cleaning_report.json")
    if cfg["standardize"]:
        std = fit_standardizer(cleaned)
    else:
        f = cleaned.n_features
        std = Standardizer(cleaned.names, np.zeros(f), np.ones(f), np.zeros(f, dtype=bool))
    std.save(rd / "standardizer.json")
    return [rd / "cleaned.csv", rd / "cleaning_report.json", rd / "standardizer.json"]


def stage_cluster(cfg: dict, rd: Path) -> list[Path]:
    cleaned = ingest_csv(rd / "cleaned.csv")
    corr = correlation_matrix(cleaned)
    c = cfg["clustering"]
    written = []
    if c["k"] is not None:
        k = int(c["k"])
    else:
        k, diagnostics = select_k(corr, c["k_min"], c["k_max"], seed=c["seed"], restarts=c["restarts"])
        (rd / "kselect.json").write_text(
            json.dumps(diagnostics, sort_keys=True, indent=1), encoding="utf-8"
        )
        written.append(rd / "kselect.json")
    clustering = kmeans_cluster(corr, k, seed=c["seed"], restarts=c["restarts"])
    clustering.save(rd / "clustering.json")
    return [rd / "clustering.json"] + written


def _load_clustering(rd: Path):
    cleaned = ingest_csv(rd / "cleaned.csv")
    return clustering_from_json((rd / "clustering.json").read_text(encoding="utf-8"), cleaned.names)


def _load_models(rd: Path, n_clusters: int) -> dict[int, LstmVaeModel]:
    return {c: LstmVaeModel.load(rd / f"model_cluster{c}.json") for c in range(n_clusters)}


def stage_train(cfg: dict, rd: Path) -> list[Path]:
    cleaned = ingest_csv(rd / "cleaned.csv")
    std = Standardizer.load(rd / "standardizer.json")
    clustering = _load_clustering(rd)
    frame = apply_standardizer(std, cleaned)
    m, tr, w = cfg["model"], cfg["training"], cfg["window"]
    written = []
    for c, members in enumerate(clustering.clusters):
        names = [clustering.names[i] for i in members]
        model = init_model(names, hidden=m["hidden"], latent=m["latent"],
                           seed=(m["seed"], c), beta=m["beta"])
        tensor = make_windows(frame.select(names), w["size"], w["train_stride"])
        trained, log = train(
            model,
            tensor,
            TrainConfig(
                epochs=tr["epochs"],
                batch_size=tr["batch_size"],
                learning_rate=tr["learning_rate"],
                seed=tr["seed"] + c,
                clip_norm=tr["clip_norm"],
                val_fraction=tr["val_fraction"],
                patience=tr["patience"],
            ),
        )
        trained.save(rd / f"model_cluster{c}.json")
        log.save(rd / f"train_log_cluster{c}.csv")
        written += [rd / f"model_cluster{c}.json", rd / f"train_log_cluster{c}.csv"]
    return written


def stage_score(cfg: dict, rd: Path) -> list[Path]:
    test = ingest_csv(rd / "test.csv")
    std = Standardizer.load(rd / "standardizer.json")
    clustering = _load_clustering(rd)
    models = _load_models(rd, clustering.k)
    frame = apply_standardizer(std, test)
    s, w = cfg["score"], cfg["window"]
    series = score_frame(
        models, clustering, frame, w["size"], stride=w["stride"],
        lambda1=s["lambda1"], lambda2=s["lambda2"], normalize=s["normalize"],
        smooth=s["smooth"],
    )
    series.save_csv(rd / "scores.csv")
    return [rd / "scores.csv"]


def stage_threshold(cfg: dict, rd: Path) -> list[Path]:
    timestamps, totals = load_scores_csv(rd / "scores.csv")
    series = scores_from_totals(timestamps, totals, first_index=cfg["window"]["size"] - 1)
    t = cfg["threshold"]
    result = dynamic_threshold(
        series, window=t["window"], q=t["q"],
        t_quantile=t["t_quantile"], min_excesses=t["min_excesses"],
    )
    result.save_csv(rd / "thresholds.csv")
    return [rd / "thresholds.csv"]


def stage_evaluate(cfg: dict, rd: Path) -> list[Path]:
    thresholds = load_thresholds_csv(rd / "thresholds.csv")
    truth = read_labels_csv(rd / "labels.csv")
    test = ingest_csv(rd / "test.csv")
    # scored region starts at window-1; earlier rows are predicted normal
    pred = np.zeros(test.n_timesteps, dtype=bool)
    index_of = {int(ts): i for i, ts in enumerate(test.timestamps)}
    for ts, flag in zip(thresholds.timestamps, thresholds.labels):
        pred[index_of[int(ts)]] = bool(flag)
    write_labels_csv(LabelSeries(pred), rd / "predictions.csv", test.timestamps)
    reports = {
        protocol: json.loads(evaluate(pred, truth.values, protocol).to_json())
        for protocol in ("pointwise", "point-adjust")
    }
    reports["primary_protocol"] = cfg["evaluation"]["protocol"]
    (rd / "eval.json").write_text(json.dumps(reports, sort_keys=True, indent=1), encoding="utf-8")
    return [rd / "predictions.csv", rd / "eval.json"]


def stage_attribution(cfg: dict, rd: Path) -> list[Path]:
    from .attribution import perturb_importance  # local import: heavy stage

    test = ingest_csv(rd / "test.csv")
    std = Standardizer.load(rd / "standardizer.json")
    clustering = _load_clustering(rd)
    models = _load_models(rd, clustering.k)
    thresholds = load_thresholds_csv(rd / "thresholds.csv")
    frame = apply_standardizer(std, test)
    a, s = cfg["attribution"], cfg["score"]
    ranking = perturb_importance(
        models, clustering, frame, thresholds,
        window=cfg["window"]["size"],
        policy=a["policy"], sigma=a["sigma"], repeats=a["repeats"], seed=a["seed"],
        lambda1=s["lambda1"], lambda2=s["lambda2"], normalize=s["normalize"],
    )
    ranking.save(rd / "importance.json")
    ranking.save_csv(rd / "importance.csv")
    return [rd / "importance.json", rd / "importance.csv"]


_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "clean": stage_clean,
    "cluster": stage_cluster,
    "train": stage_train,
    "score": stage_score,
    "threshold": stage_threshold,
    "evaluate": stage_evaluate,
    "attribution": stage_attribution,
}


def _stage_enabled(cfg: dict, rd: Path, stage: str) -> tuple[bool, str]:
    if stage == "evaluate":
        enabled = cfg["evaluation"]["enabled"]
        if enabled is None:
            enabled = (rd / "labels.csv").exists()
        return bool(enabled), "no labels supplied"
    if stage == "attribution":
        return bool(cfg["attribution"]["enabled"]), "attribution disabled"
    return True, ""


def run_pipeline(config: dict, run_dir: str | Path, from_stage: str | None = None) -> Path:
    """Execute the pipeline, persisting every intermediate artifact.

    ``from_stage`` resumes from a stage using the artifacts already in
    ``run_dir`` (earlier stages keep their manifest entries). A stage
    failure halts the run, leaving completed artifacts and an error
    record in the manifest.
    """
    rd = Path(run_dir)
    rd.mkdir(parents=True, exist_ok=True)
    if from_stage is None:
        cfg = resolve_config(config)
        manifest = Manifest(rd, cfg)
        start = 0
    else:
        if from_stage not in STAGES:
            raise ParameterError(f"unknown stage {from_stage!r}; stages: {STAGES}")
        manifest = Manifest.load(rd)
        if config:
            cfg = resolve_config(config)
            manifest.data["config"] = cfg
        else:
            cfg = manifest.data["config"]
        start = STAGES.index(from_stage)
    manifest.write()

    for stage in STAGES[start:]:
        enabled, reason = _stage_enabled(cfg, rd, stage)
        if not enabled:
            manifest.record_skipped(stage, reason)
            continue
        try:
            artifacts = _STAGE_FUNCS[stage](cfg, rd)
        except CluvadError as exc:
            manifest.record_error(stage, str(exc))
            raise PipelineError(stage, str(exc)) from exc
        manifest.record(stage, artifacts)
    return rd


def load_config_file(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config {path} is not valid JSON: {exc}") from exc


def clean_run_dir(run_dir: str | Path) -> None:
    rd = Path(run_dir)
    if rd.exists():
        shutil.rmtree(rd)
