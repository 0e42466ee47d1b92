"""Metrics: identification accuracy curves and safety/comfort measures.

TTC protocol: measured against a chosen target from the instant the target's
center first occupies the ego's lane, using bumper-to-bumper gap divided by
closing speed, only at samples where the gap is actually closing. Runs where
the relevance window is empty or never closing report an undefined average
(None), which paired comparisons exclude rather than coercing to infinity.

Acceleration and jerk are computed on a 0.1 s grid; jerk is the difference
quotient of acceleration between adjacent samples.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .fusion import IdentificationResult
from .geometry import Box2D, iou
from .scene import TrajectoryLog


class EmptyResults(Exception):
    pass


class PairMismatch(Exception):
    pass


class LengthMismatch(Exception):
    pass


class UnknownVehicle(Exception):
    pass


@dataclass(frozen=True)
class ScoredFrame:
    """An identification outcome plus the ground truth it is scored against."""

    result: IdentificationResult
    truth_box: Box2D
    truth_id: int


@dataclass(frozen=True)
class AccuracyCurve:
    thresholds: tuple[float, ...]
    accuracies: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")

    def at(self, threshold: float) -> float:
        for th, acc in zip(self.thresholds, self.accuracies):
            if abs(th - threshold) < 1e-9:
                return acc
        raise KeyError(f"threshold {threshold} not on the curve")


@dataclass(frozen=True)
class SafetyReport:
    avg_ttc: float | None
    mean_abs_accel: float
    max_jerk: float
    collision: bool
    trip_duration: float

    def to_dict(self) -> dict:
        return {"avg_ttc": self.avg_ttc, "mean_abs_accel": self.mean_abs_accel,
                "max_jerk": self.max_jerk, "collision": self.collision,
                "trip_duration": self.trip_duration}


def identification_accuracy(scored: list[ScoredFrame],
                            thresholds) -> dict[str, AccuracyCurve]:
    """Per-method accuracy over IoU thresholds; no-match counts as incorrect."""
    if not scored:
        raise EmptyResults("no identification results to score")
    thresholds = tuple(float(t) for t in thresholds)
    by_method: dict[str, list[float]] = {}
    for frame in scored:
        overlap = 0.0
        if frame.result.chosen is not None:
            overlap = iou(frame.result.chosen.box, frame.truth_box)
        by_method.setdefault(frame.result.method, []).append(overlap)
    curves = {}
    for method, overlaps in by_method.items():
        arr = np.asarray(overlaps)
        accs = tuple(float(np.mean(arr >= th)) for th in thresholds)
        curves[method] = AccuracyCurve(thresholds, accs)
    return curves


TTC_HORIZON = 30.0  # seconds; larger values mean no meaningful interaction
TTC_MIN_CLOSING = 0.1  # m/s; slower approach is treated as non-closing


def ttc_series(log: TrajectoryLog, ego_id: int, target_id: int,
               horizon: float = TTC_HORIZON) -> tuple[list[tuple[float, float]], float | None]:
    """Time-to-collision samples while closing, from the target's lane entry.

    Samples count only while the gap closes faster than TTC_MIN_CLOSING and
    the resulting TTC is below the horizon; a vanishing closing speed would
    otherwise contribute arbitrarily large, meaningless values.
    """
    for vid in (ego_id, target_id):
        if vid not in log.data:
            raise UnknownVehicle(f"vehicle {vid} not in log")
    ego_lane = log.column(ego_id, "lane").astype(int)
    tgt_lane = log.column(target_id, "lane").astype(int)
    in_lane = tgt_lane == ego_lane
    if not in_lane.any():
        return [], None
    start = int(np.argmax(in_lane))
    gap = (log.column(target_id, "s") - log.column(ego_id, "s")
           - 0.5 * (log.length_of(target_id) + log.length_of(ego_id)))
    closing = log.column(ego_id, "v") - log.column(target_id, "v")
    series = []
    for i in range(start, len(log.times)):
        if gap[i] > 0.0 and closing[i] > TTC_MIN_CLOSING:
            value = gap[i] / closing[i]
            if value <= horizon:
                series.append((float(log.times[i]), float(value)))
    if not series:
        return [], None
    return series, float(np.mean([v for _, v in series]))


def accel_jerk_metrics(log: TrajectoryLog, vehicle_id: int,
                       grid: float = 0.1) -> tuple[float, float]:
    """(mean |a|, max |da/dt|) for one vehicle on the resampled grid."""
    if vehicle_id not in log.data:
        raise UnknownVehicle(f"vehicle {vehicle_id} not in log")
    sampled = log.resample(grid) if abs(log.dt - grid) > 1e-12 else log
    a = sampled.column(vehicle_id, "a")
    mean_abs = float(np.mean(np.abs(a)))
    if len(a) < 2:
        return mean_abs, 0.0
    jerk = np.diff(a) / grid
    return mean_abs, float(np.max(np.abs(jerk)))


def classification_metrics(predicted, truth) -> tuple[float, float, float]:
    """(accuracy, true positive rate, false positive rate); undefined rates are NaN."""
    p = np.asarray(predicted, dtype=int)
    g = np.asarray(truth, dtype=int)
    if p.shape != g.shape:
        raise LengthMismatch(f"shapes {p.shape} vs {g.shape}")
    accuracy = float(np.mean(p == g))
    positives = int((g == 1).sum())
    negatives = int((g == 0).sum())
    tpr = float(((p == 1) & (g == 1)).sum() / positives) if positives else float("nan")
    fpr = float(((p == 1) & (g == 0)).sum() / negatives) if negatives else float("nan")
    return accuracy, tpr, fpr


def conflict_target_id(log: TrajectoryLog, ego_id: int) -> int | None:
    """First vehicle to enter the ego's lane ahead of the ego, if any."""
    ego_lane = log.column(ego_id, "lane").astype(int)
    ego_s = log.column(ego_id, "s")
    best = None  # (entry index, vehicle id)
    for vid in log.vehicle_ids:
        if vid == ego_id or log.kind_of(vid) == "truck":
            continue
        in_lane = log.column(vid, "lane").astype(int) == ego_lane
        if not in_lane.any() or in_lane[0]:
            continue
        entry = int(np.argmax(in_lane))
        if log.column(vid, "s")[entry] <= ego_s[entry]:
            continue
        if best is None or entry < best[0]:
            best = (entry, vid)
    return None if best is None else best[1]


def safety_report(log: TrajectoryLog, ego_id: int,
                  target_id: int | None = None) -> SafetyReport:
    if target_id is None:
        target_id = conflict_target_id(log, ego_id)
    avg_ttc = None
    if target_id is not None:
        _, avg_ttc = ttc_series(log, ego_id, target_id)
    mean_abs, max_jerk = accel_jerk_metrics(log, ego_id)
    return SafetyReport(avg_ttc=avg_ttc, mean_abs_accel=mean_abs, max_jerk=max_jerk,
                        collision=bool(log.collisions),
                        trip_duration=float(log.times[-1] - log.times[0]))


@dataclass(frozen=True)
class MetricComparison:
    diffs: tuple[float, ...]
    median: float | None
    improve_fraction: float | None
    pairs_compared: int


@dataclass(frozen=True)
class PairedComparison:
    ttc: MetricComparison
    accel: MetricComparison
    jerk: MetricComparison
    pair_count: int

    def to_dict(self) -> dict:
        def enc(m: MetricComparison) -> dict:
            return {"median_improvement": m.median,
                    "improve_fraction": m.improve_fraction,
                    "pairs_compared": m.pairs_compared}
        return {"pair_count": self.pair_count, "avg_ttc": enc(self.ttc),
                "mean_abs_accel": enc(self.accel), "max_jerk": enc(self.jerk)}


def _compare(values: list[tuple[float | None, float | None]],
             higher_is_better: bool) -> MetricComparison:
    diffs = []
    for guided, baseline in values:
        if guided is None or baseline is None:
            continue
        diffs.append(guided - baseline if higher_is_better else baseline - guided)
    if not diffs:
        return MetricComparison((), None, None, 0)
    arr = np.asarray(diffs)
    return MetricComparison(tuple(float(d) for d in diffs), float(np.median(arr)),
                            float(np.mean(arr > 0)), len(diffs))


def compare_paired_runs(guided: list[SafetyReport],
                        baseline: list[SafetyReport]) -> PairedComparison:
    """Paired per-metric differences oriented so positive means guided wins."""
    if len(guided) != len(baseline):
        raise PairMismatch(f"{len(guided)} guided vs {len(baseline)} baseline runs")
    ttc = _compare([(g.avg_ttc, b.avg_ttc) for g, b in zip(guided, baseline)],
                   higher_is_better=True)
    accel = _compare([(g.mean_abs_accel, b.mean_abs_accel)
                      for g, b in zip(guided, baseline)], higher_is_better=False)
    jerk = _compare([(g.max_jerk, b.max_jerk) for g, b in zip(guided, baseline)],
                    higher_is_better=False)
    return PairedComparison(ttc=ttc, accel=accel, jerk=jerk, pair_count=len(guided))


def write_curve_csv(curves: dict[str, AccuracyCurve], path):
    fused = curves.get("fused")
    baseline = curves.get("baseline")
    thresholds = (fused or baseline).thresholds
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "accuracy_fused", "accuracy_baseline"])
        for i, th in enumerate(thresholds):
            w.writerow([f"{th:.2f}",
                        "" if fused is None else f"{fused.accuracies[i]:.6f}",
                        "" if baseline is None else f"{baseline.accuracies[i]:.6f}"])


def write_safety_report_json(report: SafetyReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
