import json

import numpy as np
import pytest

from cluvad.cli import main
from cluvad.errors import ParameterError, PipelineError, ReportError
from cluvad.frame import write_frame_csv, write_labels_csv
from cluvad.pipeline import STAGES, resolve_config, run_pipeline
from cluvad.report import emit_report
from cluvad.synth import AnomalySpec, GroupSpec, SynthSpec, generate

FAST_CONFIG = {
    "model": {"hidden": 8, "latent": 2},
    "training": {"epochs": 3, "batch_size": 128},
    "window": {"size": 10},
    "threshold": {"window": 250, "q": 1e-4},
}


def small_dataset(tmp_path, n=1200, anomalies=True, seed=21):
    spec = SynthSpec(
        n_timesteps=n,
        groups=[
            GroupSpec(["a0", "a1"], period=41, noise_sigma=0.1),
            GroupSpec(["b0", "b1"], period=89, phase=2.0, noise_sigma=0.1),
        ],
        anomalies=[
            AnomalySpec(600, 8, ["a0"], 8.0, "spike"),
            AnomalySpec(900, 8, ["b1"], 8.0, "spike"),
        ]
        if anomalies
        else [],
        seed=seed,
    )
    frame, labels, _ = generate(spec)
    write_frame_csv(frame, tmp_path / "data.csv")
    write_labels_csv(labels, tmp_path / "labels.csv", frame.timestamps)
    return tmp_path / "data.csv", tmp_path / "labels.csv"


def fast_config(data, labels=None, **extra):
    cfg = json.loads(json.dumps(FAST_CONFIG))  # deep copy
    cfg["data"] = {"train": str(data)}
    if labels is not None:
        cfg["data"]["labels"] = str(labels)
    for key, value in extra.items():
        cfg.setdefault(key, {}).update(value) if isinstance(value, dict) else cfg.update({key: value})
    return cfg


def checksums(run_dir):
    manifest = json.loads((run_dir / "manifest.json").read_text())
    return {
        stage: info.get("artifacts", {})
        for stage, info in manifest["stages"].items()
        if info["status"] == "complete"
    }


def test_pipeline_end_to_end_smoke(tmp_path):
    data, labels = small_dataset(tmp_path)
    rd = run_pipeline(fast_config(data, labels), tmp_path / "run")
    manifest = json.loads((rd / "manifest.json").read_text())
    assert manifest["error"] is None
    for stage in STAGES[:-1]:  # attribution disabled by default
        assert manifest["stages"][stage]["status"] == "complete"
    assert manifest["stages"]["attribution"]["status"] == "skipped"
    results = json.loads((rd / "eval.json").read_text())
    assert 0.0 <= results["point-adjust"]["f1"] <= 1.0
    assert results["point-adjust"]["recall"] >= results["pointwise"]["recall"]


def test_pipeline_rerun_identical_checksums(tmp_path):
    data, labels = small_dataset(tmp_path)
    cfg = fast_config(data, labels)
    rd1 = run_pipeline(cfg, tmp_path / "run1")
    rd2 = run_pipeline(cfg, tmp_path / "run2")
    assert checksums(rd1) == checksums(rd2)


def test_pipeline_forced_k1_trains_single_model(tmp_path):
    data, _ = small_dataset(tmp_path, anomalies=False)
    cfg = fast_config(data, clustering={"k": 1})
    rd = run_pipeline(cfg, tmp_path / "run")
    clustering = json.loads((rd / "clustering.json").read_text())
    assert clustering["k"] == 1
    assert len(clustering["clusters"]) == 1
    assert (rd / "model_cluster0.json").exists()
    assert not (rd / "model_cluster1.json").exists()


def test_pipeline_resume_from_threshold(tmp_path):
    data, labels = small_dataset(tmp_path)
    cfg = fast_config(data, labels)
    rd = run_pipeline(cfg, tmp_path / "run")
    before = checksums(rd)
    cfg2 = json.loads(json.dumps(cfg))
    cfg2["threshold"]["q"] = 1e-9
    run_pipeline(cfg2, tmp_path / "run", from_stage="threshold")
    after = checksums(rd)
    assert after["score"] == before["score"]  # earlier stages untouched
    assert after["threshold"] != before["threshold"]


def test_pipeline_stage_error_recorded(tmp_path):
    cfg = {"data": {"train": str(tmp_path / "missing.csv")}}
    with pytest.raises(PipelineError) as err:
        run_pipeline(cfg, tmp_path / "run")
    assert err.value.stage == "ingest"
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["error"]["stage"] == "ingest"


def test_resolve_config_unknown_key():
    with pytest.raises(ParameterError):
        resolve_config({"data": {"train": "x.csv"}, "typo": {}})
    with pytest.raises(ParameterError):
        resolve_config({})


def test_smd_format_through_pipeline(tmp_path):
    rng = np.random.default_rng(5)
    raw = tmp_path / "machine-1-1.txt"
    values = rng.normal(0, 1, (400, 4))
    values[:, 1] += np.sin(np.arange(400) / 9.0)
    raw.write_text(
        "\n".join(",".join(f"{v:.5f}" for v in row) for row in values), encoding="utf-8"
    )
    cfg = fast_config(raw, clustering={"k": 2}, threshold={"window": 100, "q": 1e-4})
    cfg["data"]["format"] = "smd"
    rd = run_pipeline(cfg, tmp_path / "run")
    manifest = json.loads((rd / "manifest.json").read_text())
    assert manifest["stages"]["threshold"]["status"] == "complete"


def test_cli_end_to_end(tmp_path, capsys):
    spec = SynthSpec(
        n_timesteps=900,
        groups=[
            GroupSpec(["a0", "a1"], period=41, noise_sigma=0.1),
            GroupSpec(["b0", "b1"], period=89, noise_sigma=0.1, phase=1.0),
        ],
        anomalies=[AnomalySpec(500, 8, ["a0"], 8.0, "spike")],
        seed=2,
    )
    spec_path = tmp_path / "spec.json"
    spec.save(spec_path)
    assert main(["synth", "--spec", str(spec_path), "--output-dir", str(tmp_path / "d")]) == 0
    assert main(
        ["ingest", "--input", str(tmp_path / "d" / "data.csv"), "--output", str(tmp_path / "norm.csv")]
    ) == 0
    assert main(
        ["clean", "--input", str(tmp_path / "norm.csv"), "--output", str(tmp_path / "clean.csv"),
         "--report", str(tmp_path / "rep.json")]
    ) == 0
    assert main(
        ["cluster", "--input", str(tmp_path / "clean.csv"), "--k", "2",
         "--output", str(tmp_path / "clusters.json")]
    ) == 0
    clusters = json.loads((tmp_path / "clusters.json").read_text())
    assert clusters["k"] == 2

    cfg = fast_config(tmp_path / "d" / "data.csv", tmp_path / "d" / "labels.csv")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    assert main(["pipeline", "--config", str(cfg_path), "--run-dir", str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out
    assert "point-adjust" in out

    assert main(
        ["eval", "--pred", str(tmp_path / "run" / "predictions.csv"),
         "--truth", str(tmp_path / "d" / "labels.csv")]
    ) == 0


def test_cli_threshold_override_persists(tmp_path):
    data, labels = small_dataset(tmp_path)
    cfg = fast_config(data, labels)
    rd = run_pipeline(cfg, tmp_path / "run")
    assert main(["threshold", "--run-dir", str(rd), "--risk-q", "1e-9"]) == 0
    manifest = json.loads((rd / "manifest.json").read_text())
    assert manifest["config"]["threshold"]["q"] == 1e-9


def test_cli_error_exit_code(tmp_path):
    assert main(["ingest", "--input", str(tmp_path / "nope.csv"), "--output", "x.csv"]) == 1


def test_cli_stage_reruns_and_explain(tmp_path):
    data, labels = small_dataset(tmp_path)
    rd = run_pipeline(fast_config(data, labels), tmp_path / "run")
    before = checksums(rd)
    assert main(["train", "--run-dir", str(rd)]) == 0
    assert main(["score", "--run-dir", str(rd)]) == 0
    assert checksums(rd)["score"] == before["score"]  # deterministic rerun

    assert main(["explain", "--run-dir", str(rd)]) == 0
    assert (rd / "importance.json").exists()

    # sub-period attribution around the first planted anomaly
    assert main(["explain", "--run-dir", str(rd), "--start", "400", "--end", "800"]) == 0
    period_files = list(rd.glob("importance_*_*.json"))
    assert len(period_files) == 1
    ranking = json.loads(period_files[0].read_text())
    assert ranking["period"] == [400, 800]

    assert main(["report", "--run-dir", str(rd)]) == 0
    assert (rd / "report" / "trend.csv").exists()


QUALITY_CONFIG = {
    "model": {"hidden": 12, "latent": 3},
    "training": {"epochs": 10, "batch_size": 64, "learning_rate": 3e-3},
    "window": {"size": 10},
    "threshold": {"window": 500, "q": 1e-6},
}


def test_report_trend_and_plots(tmp_path):
    data, labels = small_dataset(tmp_path, n=1500)
    cfg = json.loads(json.dumps(QUALITY_CONFIG))
    cfg["data"] = {"train": str(data), "labels": str(labels)}
    cfg["attribution"] = {"enabled": True, "repeats": 1}
    rd = run_pipeline(cfg, tmp_path / "run")
    # 1500 steps at 365 steps/year span 2019-2023; anomalies at timesteps
    # 600-607 and 900-907 fall in 2020 and 2021
    written = emit_report(rd, steps_per_year=365, year0=2019)
    trend = (rd / "report" / "trend.csv").read_text().strip().splitlines()
    assert trend[0] == "year,anomaly_count"
    counts = {int(r.split(",")[0]): int(r.split(",")[1]) for r in trend[1:]}
    assert {y for y, c in counts.items() if c > 0} == {2020, 2021}
    assert (rd / "report" / "score_threshold.svg").exists()
    assert (rd / "report" / "importance.svg").exists()
    assert len(written) == 3

    ranking = json.loads((rd / "importance.json").read_text())["ranking"]
    values = [e["importance"] for e in ranking]
    assert values == sorted(values, reverse=True)  # chart bars descend left to right


def test_report_zero_anomalies_trend_all_zero(tmp_path):
    data, labels = small_dataset(tmp_path, n=1500, anomalies=False, seed=9)
    cfg = json.loads(json.dumps(QUALITY_CONFIG))
    cfg["data"] = {"train": str(data), "labels": str(labels)}
    cfg["threshold"] = {"window": 500, "q": 1e-9}
    rd = run_pipeline(cfg, tmp_path / "run")
    emit_report(rd, steps_per_year=365, year0=2000)
    trend = (rd / "report" / "trend.csv").read_text().strip().splitlines()[1:]
    assert len(trend) >= 4
    assert all(int(row.split(",")[1]) == 0 for row in trend)


def test_report_missing_artifacts(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ReportError, match="threshold"):
        emit_report(tmp_path / "empty")
