"""Batch command-line entry points.

Commands (each takes --config, --out, and an optional --seeds override):

  simulate      run scenarios and dump trajectory, maneuver, detection,
                depth-map, and twin-channel files per seed
  fuse-eval     build the synthetic corner-case corpus and emit the
                identification accuracy-vs-IoU curves for both matchers
  train         build a labeled dataset from fresh runs and fit the
                lane-change classifier
  predict-eval  replay held-out seeds through a trained model and report
                classification metrics for raw and filtered predictions
  closed-loop   paired guided/baseline runs per seed with safety reports
                and the paired comparison

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, write_echo
from .evaluation import (
    classification_metrics,
    compare_paired_runs,
    identification_accuracy,
    safety_report,
    write_curve_csv,
    write_safety_report_json,
)
from .fusion import write_results_csv
from .geometry import iou
from .pipeline import (
    build_dataset,
    build_fuse_corpus,
    closed_loop_pair,
    ground_truth_bits,
    render_frames,
    simulate_run,
)
from .prediction import (
    aggressive_filter,
    conservative_filter,
    load_model,
    save_model,
    train,
    write_dataset_csv,
    write_traces_csv,
)
from .scene import write_maneuvers_csv, write_trajectory_csv
from .sensing import write_depth_map, write_detections_csv
from .twinlink import write_channel_csv


def _seed_dir(out: Path, seed: int) -> Path:
    path = out / f"seed_{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_model_for(cfg: RunConfig, required: bool):
    if not cfg.model_path:
        if required:
            raise ConfigError("model_path: required for this command")
        return None
    try:
        return load_model(cfg.model_path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"model_path: cannot load {cfg.model_path!r}: {exc}") from exc


def cmd_simulate(cfg: RunConfig, out: Path, model) -> int:
    mount = cfg.camera_mount()
    period = cfg["sensing"]["frame_period"]
    for seed in cfg.seeds:
        art = simulate_run(cfg.scenario(seed), cfg.channel(), model=model)
        sdir = _seed_dir(out, seed)
        write_trajectory_csv(art.log, sdir / "trajectory.csv")
        write_maneuvers_csv(art.log.plans, sdir / "maneuvers.csv")
        write_channel_csv(art.store, sdir / "twin_channel.csv")
        if art.log.times[-1] > 0:
            frames = render_frames(art.log, mount, cfg.noise(seed), period=period)
        else:
            frames = []
        write_detections_csv(frames, sdir / "detections.csv")
        depth_dir = sdir / "depth"
        depth_dir.mkdir(exist_ok=True)
        for k, frame in enumerate(frames):
            write_depth_map(frame.depth, depth_dir / f"frame_{k:05d}.dpt")
    return 0


def cmd_fuse_eval(cfg: RunConfig, out: Path, model) -> int:
    thresholds = cfg["fuse_eval"]["thresholds"]
    for seed in cfg.seeds:
        result = build_fuse_corpus(cfg.corpus(), cfg.camera_mount(),
                                   cfg.noise(seed), cfg.fusion_params(seed), seed)
        curves = identification_accuracy(result.scored, thresholds)
        sdir = _seed_dir(out, seed)
        write_curve_csv(curves, sdir / "curve.csv")
        rows = []
        for frame in result.scored:
            res = frame.result
            chosen_id = res.chosen.source_id if res.chosen else None
            overlap = iou(res.chosen.box, frame.truth_box) if res.chosen else 0.0
            rows.append((res.t, res.method, chosen_id, frame.truth_id, overlap,
                         res.candidate_count))
        write_results_csv(rows, sdir / "identifications.csv")
        fused_07 = curves["fused"].at(0.7)
        base_07 = curves["baseline"].at(0.7)
        summary = {
            "frames": result.frame_count,
            "overlap_pair_fraction": result.overlap_pair_frames / result.frame_count,
            "accuracy_fused_at_0.7": fused_07,
            "accuracy_baseline_at_0.7": base_07,
            "gap_at_0.7": fused_07 - base_07,
        }
        with open(sdir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    return 0


def cmd_train(cfg: RunConfig, out: Path, model) -> int:
    window = cfg.window(rate=cfg["training"]["window_rate"])
    dataset = build_dataset(cfg.scenario(0), window, cfg.seeds, cfg.channel(),
                            include_nonchangers=cfg["training"]["include_nonchangers"])
    model = train(dataset, cfg.train_config())
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    write_dataset_csv(dataset, out / "dataset.csv")
    summary = {
        "samples": len(dataset),
        "positives": int(sum(s.label for s in dataset)),
        "train_seeds": list(cfg.seeds),
        "hidden": cfg["training"]["hidden"],
        "epochs": cfg["training"]["epochs"],
    }
    with open(out / "training_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return 0


def cmd_predict_eval(cfg: RunConfig, out: Path, model) -> int:
    tau = cfg["window"]["tau"]
    tau_a = cfg["filters"]["tau_a"]
    tau_c = cfg["filters"]["tau_c"]
    thres = cfg["filters"]["thres"]
    combined = {"raw": ([], []), "aggressive": ([], []), "conservative": ([], [])}
    for seed in cfg.seeds:
        scenario = cfg.scenario(seed).with_policy("baseline")
        art = simulate_run(scenario, cfg.channel(), model=model)
        rows = []
        for vid in sorted(art.traces):
            trace = art.traces[vid]
            agg = aggressive_filter(trace, tau_a)
            cons = conservative_filter(trace, tau_c, thres)
            truth = ground_truth_bits(trace, art.log.plans, tau)
            for name, filtered in (("raw", trace), ("aggressive", agg),
                                   ("conservative", cons)):
                combined[name][0].extend(filtered.binary.tolist())
                combined[name][1].extend(truth.tolist())
            for i, t in enumerate(trace.times):
                rows.append((vid, t, trace.probabilities[i], int(trace.binary[i]),
                             int(agg.binary[i]), int(cons.binary[i])))
        write_traces_csv(rows, _seed_dir(out, seed) / "traces.csv")
    metrics = {}
    for name, (pred, truth) in combined.items():
        accuracy, tpr, fpr = classification_metrics(pred, truth)
        metrics[name] = {"accuracy": accuracy, "true_positive_rate": tpr,
                         "false_positive_rate": fpr,
                         "timesteps": len(pred)}
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=1, sort_keys=True)
    return 0


def cmd_closed_loop(cfg: RunConfig, out: Path, model) -> int:
    guided_reports, baseline_reports = [], []
    for seed in cfg.seeds:
        guided, baseline = closed_loop_pair(cfg.scenario(seed), model, seed,
                                            cfg.channel())
        sdir = _seed_dir(out, seed)
        write_safety_report_json(guided, sdir / "report_guided.json")
        write_safety_report_json(baseline, sdir / "report_baseline.json")
        guided_reports.append(guided)
        baseline_reports.append(baseline)
    comparison = compare_paired_runs(guided_reports, baseline_reports)
    with open(out / "comparison.json", "w") as fh:
        json.dump(comparison.to_dict(), fh, indent=1, sort_keys=True)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fuse-eval": cmd_fuse_eval,
    "train": cmd_train,
    "predict-eval": cmd_predict_eval,
    "closed-loop": cmd_closed_loop,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanesight",
        description="Highway simulation, target identification, and "
                    "lane-change prediction experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="path to the JSON run config")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seeds", default=None,
                         help="comma-separated override of the config seed list")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seeds is not None:
            try:
                cfg = replace(cfg, seeds=[int(s) for s in args.seeds.split(",") if s])
            except ValueError as exc:
                raise ConfigError(f"--seeds: {exc}") from exc
            if not cfg.seeds:
                raise ConfigError("--seeds: empty seed list")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        needs_model = args.command in ("predict-eval", "closed-loop")
        model = _load_model_for(cfg, required=needs_model)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_echo(cfg, out / "config.echo.json")
        return COMMANDS[args.command](cfg, out, model)
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
