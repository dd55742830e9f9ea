"""Command-line interface.

Subcommands mirror the pipeline stages plus standalone utilities:

    synth      generate a labeled synthetic dataset from a JSON spec
    ingest     normalize a CSV/SMD file into the canonical frame format
    clean      IQR-clean a frame and write the repair report
    cluster    correlation-cluster the features of a frame
    pipeline   run every stage end to end into a run directory
    train      (re)run a single stage inside an existing run directory
    score      ...
    threshold  ...
    explain    feature attribution, optionally on a timestamp sub-period
    eval       compare prediction and truth label files
    report     render SVG plots and the yearly trend table for a run

Exit status is 0 on success and 1 on any stage error; diagnostics name
the failing stage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline as pl
from .clustering import correlation_matrix, kmeans_cluster, select_k
from .errors import CluvadError, PipelineError
from .evaluation import evaluate
from .frame import ingest_csv, read_labels_csv, write_frame_csv, write_labels_csv
from .report import emit_report
from .synth import SynthSpec, generate


def _cmd_synth(args) -> int:
    spec = SynthSpec.load(args.spec)
    frame, labels, partition = generate(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_frame_csv(frame, out / "data.csv")
    write_labels_csv(labels, out / "labels.csv", frame.timestamps)
    (out / "truth.json").write_text(
        json.dumps({"partition": partition}, sort_keys=True, indent=1), encoding="utf-8"
    )
    print(f"wrote {out / 'data.csv'} ({frame.n_timesteps} rows, {frame.n_features} features)")
    return 0


def _cmd_ingest(args) -> int:
    frame = ingest_csv(args.input, timestamp_column=args.timestamp_column, fmt=args.format)
    write_frame_csv(frame, args.output)
    print(f"wrote {args.output} ({frame.n_timesteps} rows, {frame.n_features} features)")
    return 0


def _cmd_clean(args) -> int:
    from .preprocess import iqr_clean

    frame = ingest_csv(args.input)
    cleaned, report = iqr_clean(frame, args.iqr_multiplier)
    write_frame_csv(cleaned, args.output)
    if args.report:
        report.save(args.report)
    print(f"replaced {report.total_replacements()} values across {frame.n_features} features")
    return 0


def _cmd_cluster(args) -> int:
    frame = ingest_csv(args.input)
    corr = correlation_matrix(frame)
    if args.k is not None:
        k = args.k
    else:
        k, diagnostics = select_k(corr, args.k_min, args.k_max, seed=args.seed, restarts=args.restarts)
        if args.diagnostics:
            Path(args.diagnostics).write_text(
                json.dumps(diagnostics, sort_keys=True, indent=1), encoding="utf-8"
            )
    clustering = kmeans_cluster(corr, k, seed=args.seed, restarts=args.restarts)
    clustering.save(args.output)
    print(f"k={clustering.k} silhouette={clustering.silhouette:.4f} -> {args.output}")
    return 0


def _cmd_eval(args) -> int:
    pred = read_labels_csv(args.pred)
    truth = read_labels_csv(args.truth)
    protocols = ["pointwise", "point-adjust"] if args.protocol == "both" else [args.protocol]
    results = {}
    for protocol in protocols:
        report = evaluate(pred, truth, protocol)
        results[protocol] = json.loads(report.to_json())
        print(report.row())
    if args.output:
        Path(args.output).write_text(json.dumps(results, sort_keys=True, indent=1), encoding="utf-8")
    return 0


def _cmd_pipeline(args) -> int:
    config = pl.load_config_file(args.config) if args.config else {}
    rd = pl.run_pipeline(config, args.run_dir, from_stage=getattr(args, "from_stage", None))
    manifest = json.loads((rd / "manifest.json").read_text(encoding="utf-8"))
    for stage in pl.STAGES:
        info = manifest["stages"].get(stage)
        status = info["status"] if info else "not run"
        print(f"{stage:>12}: {status}")
    if (rd / "eval.json").exists():
        results = json.loads((rd / "eval.json").read_text(encoding="utf-8"))
        for protocol in ("pointwise", "point-adjust"):
            r = results[protocol]
            print(f"{protocol:>12}  P={r['precision']:.4f} R={r['recall']:.4f} F1={r['f1']:.4f}")
    return 0


def _stage_command(stage: str):
    def run(args) -> int:
        overrides: dict = {}
        if stage == "threshold":
            t: dict = {}
            if args.risk_q is not None:
                t["q"] = args.risk_q
            if args.init_quantile is not None:
                t["t_quantile"] = args.init_quantile
            if args.window is not None:
                t["window"] = args.window
            if t:
                overrides["threshold"] = t
        rd = Path(args.run_dir)
        manifest = pl.Manifest.load(rd)
        cfg = manifest.data["config"]
        if overrides:
            for section, values in overrides.items():
                cfg[section].update(values)
            manifest.write()
        if stage == "attribution":
            cfg["attribution"]["enabled"] = True
            manifest.write()
        try:
            artifacts = pl._STAGE_FUNCS[stage](cfg, rd)
        except CluvadError as exc:
            manifest.record_error(stage, str(exc))
            raise PipelineError(stage, str(exc)) from exc
        manifest.record(stage, artifacts)
        for p in artifacts:
            print(f"wrote {p}")
        return 0

    return run


def _cmd_explain(args) -> int:
    if args.start is None and args.end is None:
        return _stage_command("attribution")(args)

    from .attribution import perturb_importance
    from .frame import slice_frame
    from .preprocess import Standardizer, apply_standardizer
    from .threshold import load_thresholds_csv

    rd = Path(args.run_dir)
    manifest = pl.Manifest.load(rd)
    cfg = manifest.data["config"]
    test = ingest_csv(rd / "test.csv")
    ts = test.timestamps
    lo = 0 if args.start is None else int((ts >= args.start).argmax())
    hi = test.n_timesteps if args.end is None else int((ts <= args.end).sum())
    frame = slice_frame(test, lo, hi)
    std = Standardizer.load(rd / "standardizer.json")
    clustering = pl._load_clustering(rd)
    models = pl._load_models(rd, clustering.k)
    thresholds = load_thresholds_csv(rd / "thresholds.csv")
    a, s = cfg["attribution"], cfg["score"]
    ranking = perturb_importance(
        models, clustering, apply_standardizer(std, frame), thresholds,
        window=cfg["window"]["size"],
        policy=a["policy"], sigma=a["sigma"], repeats=a["repeats"], seed=a["seed"],
        lambda1=s["lambda1"], lambda2=s["lambda2"], normalize=s["normalize"],
    )
    suffix = f"_{ranking.period[0]}_{ranking.period[1]}"
    ranking.save(rd / f"importance{suffix}.json")
    ranking.save_csv(rd / f"importance{suffix}.csv")
    print(f"wrote {rd / ('importance' + suffix + '.json')}")
    return 0


def _cmd_report(args) -> int:
    written = emit_report(args.run_dir, steps_per_year=args.steps_per_year, year0=args.year0)
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cluvad", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic data from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="normalize an input file to the canonical CSV format")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=["csv", "smd"], default="csv")
    p.add_argument("--timestamp-column", default="timestamp")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("clean", help="IQR-clean a frame")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--iqr-multiplier", type=float, default=1.5)
    p.set_defaults(func=_cmd_clean)

    p = sub.add_parser("cluster", help="correlation-cluster the features of a frame")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--diagnostics", default=None)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("eval", help="precision/recall/F1 between label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--protocol", choices=["pointwise", "point-adjust", "both"], default="both")
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="run all stages end to end")
    p.add_argument("--config", default=None)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--from", dest="from_stage", default=None, metavar="STAGE",
                   help=f"resume from a stage ({', '.join(pl.STAGES)})")
    p.set_defaults(func=_cmd_pipeline)

    for stage, cmd in (("train", "train"), ("score", "score"), ("threshold", "threshold")):
        p = sub.add_parser(cmd, help=f"run the {stage} stage in an existing run directory")
        p.add_argument("--run-dir", required=True)
        if stage == "threshold":
            p.add_argument("--risk-q", type=float, default=None)
            p.add_argument("--init-quantile", type=float, default=None)
            p.add_argument("--window", type=int, default=None)
        p.set_defaults(func=_stage_command(stage))

    p = sub.add_parser("explain", help="feature attribution for a run (optionally a sub-period)")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--start", type=int, default=None, help="first timestamp of the period")
    p.add_argument("--end", type=int, default=None, help="last timestamp of the period")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("report", help="render plots and the yearly trend CSV")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--steps-per-year", type=int, default=365)
    p.add_argument("--year0", type=int, default=0)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except CluvadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
