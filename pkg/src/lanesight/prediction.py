"""Lane-change prediction: labeling, a small MLP classifier, and filters.

Samples are labeled with a time-window rule anchored at the maneuver end
point t_end: times in [t_end - tau, t_end] are positive, and an equally
sized window shifted tau + tau_g seconds earlier is negative. The gap keeps
near-boundary frames with near-identical features out of opposite classes.

The classifier is a deliberately small input-hidden-output network trained
with seeded mini-batch gradient descent on standardized features; training
and inference are deterministic given the seed.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import seeding
from .scene import TrajectoryLog, VehicleState

SENTINEL_GAP = 200.0
FEATURE_SIZE = 13
MODEL_FORMAT = "lanesight-mlp-v1"


class UnknownVehicle(Exception):
    pass


class DegenerateDataset(Exception):
    """Training data contains a single class."""


class DimensionMismatch(Exception):
    pass


@dataclass(frozen=True)
class WindowParams:
    tau: float = 5.0
    tau_g: float = 3.0
    sample_rate: float = 1.0

    def __post_init__(self):
        if self.tau <= 0 or self.tau_g < 0 or self.sample_rate <= 0:
            raise ValueError("invalid window parameters")


@dataclass(frozen=True)
class LabeledSample:
    features: tuple[float, ...]
    label: int
    t: float
    vehicle_id: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if len(self.features) != FEATURE_SIZE:
            raise ValueError(f"expected {FEATURE_SIZE} features")


@dataclass
class PredictionTrace:
    vehicle_id: int
    times: np.ndarray
    probabilities: np.ndarray
    binary: np.ndarray


def features_from_states(states: list[VehicleState], subject_id: int,
                         lane_count: int) -> np.ndarray:
    """Subject speed plus (speed difference, bumper gap) for six neighbor slots.

    Slot order: lead/lag in the subject's own lane, the lane to its left,
    and the lane to its right. Absent neighbors carry (0, SENTINEL_GAP).
    """
    by_id = {s.id: s for s in states}
    if subject_id not in by_id:
        raise UnknownVehicle(f"vehicle {subject_id} not present")
    subject = by_id[subject_id]
    feats = [subject.v]
    for lane in (subject.lane, subject.lane + 1, subject.lane - 1):
        if lane < 0 or lane >= lane_count:
            feats += [0.0, SENTINEL_GAP, 0.0, SENTINEL_GAP]
            continue
        lead = lag = None
        for other in states:
            if other.id == subject_id or other.lane != lane:
                continue
            if other.s > subject.s and (lead is None or other.s < lead.s):
                lead = other
            if other.s <= subject.s and (lag is None or other.s > lag.s):
                lag = other
        for neighbor in (lead, lag):
            if neighbor is None:
                feats += [0.0, SENTINEL_GAP]
            else:
                gap = abs(neighbor.s - subject.s) - 0.5 * (neighbor.length + subject.length)
                feats += [neighbor.v - subject.v, gap]
    return np.asarray(feats)


def extract_features(log: TrajectoryLog, vehicle_id: int, t: float) -> np.ndarray:
    if vehicle_id not in log.data:
        raise UnknownVehicle(f"vehicle {vehicle_id} not in log")
    idx = log.index_of(t)
    return features_from_states(log.states_at(idx), vehicle_id, log.lanes.lane_count)


def _window_times(t_hi: float, tau: float, rate: float, t_min: float) -> list[float]:
    count = int(round(tau * rate))
    times = [t_hi - k / rate for k in range(count + 1)]
    return sorted(t for t in times if t >= t_min - 1e-9)


def label_windows(events, log: TrajectoryLog, w: WindowParams) -> list[LabeledSample]:
    """Build positive/negative samples around each lane-change end point."""
    t_min = float(log.times[0])
    t_max = float(log.times[-1])
    samples: list[LabeledSample] = []
    for event in events:
        t_end = event.t_end
        windows = ((1, t_end), (0, t_end - w.tau - w.tau_g))
        if all(hi < t_min for _, hi in windows):
            continue
        for label, hi in windows:
            for t in _window_times(min(hi, t_max), w.tau, w.sample_rate, t_min):
                grid_t = round(t / log.dt) * log.dt
                feats = extract_features(log, event.vehicle_id, grid_t)
                samples.append(LabeledSample(tuple(feats), label, grid_t,
                                             event.vehicle_id))
    return samples


def nonchanger_negatives(log: TrajectoryLog, events, w: WindowParams,
                         period: float = 5.0) -> list[LabeledSample]:
    """Extra negatives from car-kind vehicles that never change lanes.

    Off the paper's recipe: the shifted-window negatives alone never show
    e.g. slow queued traffic, so a classifier trained without these can
    only guess there. Sampling every ``period`` seconds keeps the classes
    roughly balanced.
    """
    changed = {e.vehicle_id for e in events}
    samples = []
    t_min, t_max = float(log.times[0]), float(log.times[-1])
    for vid in log.vehicle_ids:
        if vid in changed or log.kind_of(vid) != "car":
            continue
        t = t_min
        while t <= t_max + 1e-9:
            grid_t = round(t / log.dt) * log.dt
            feats = extract_features(log, vid, grid_t)
            samples.append(LabeledSample(tuple(feats), 0, grid_t, vid))
            t += period
    return samples


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 32
    learning_rate: float = 1e-2
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0


@dataclass
class MlpModel:
    """Input-hidden-output network: rectifier hidden layer, logistic output."""

    w1: np.ndarray  # (hidden, FEATURE_SIZE)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    feat_mean: np.ndarray
    feat_std: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feat_mean) / self.feat_std


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.maximum(x @ model.w1.T + model.b1, 0.0)
    prob = _sigmoid(hidden @ model.w2 + model.b2)
    return prob, hidden


def loss_and_gradients(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy and its gradients on standardized inputs.

    The loss is evaluated in logit form, log(1 + e^z) - y z, which is stable
    at saturation and differentiates exactly to the (p - y) error term.
    """
    n = len(y)
    hidden = np.maximum(x @ model.w1.T + model.b1, 0.0)
    z = hidden @ model.w2 + model.b2
    prob = _sigmoid(z)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    delta = (prob - y) / n
    grad_w2 = hidden.T @ delta
    grad_b2 = float(delta.sum())
    back = np.outer(delta, model.w2) * (hidden > 0)
    grad_w1 = back.T @ x
    grad_b1 = back.sum(axis=0)
    return loss, {"w1": grad_w1, "b1": grad_b1, "w2": grad_w2, "b2": grad_b2}


def train(dataset: list[LabeledSample], cfg: TrainConfig = TrainConfig()) -> MlpModel:
    """Seeded mini-batch gradient descent on the labeled samples."""
    if not dataset:
        raise DegenerateDataset("empty dataset")
    x = np.asarray([s.features for s in dataset], dtype=float)
    y = np.asarray([s.label for s in dataset], dtype=float)
    if len(set(y.tolist())) < 2:
        raise DegenerateDataset("training data has a single class")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0

    rng = seeding.rng_for(cfg.seed, seeding.TRAINING)
    scale = np.sqrt(2.0 / FEATURE_SIZE)
    model = MlpModel(
        w1=rng.normal(0.0, scale, size=(cfg.hidden, FEATURE_SIZE)),
        b1=np.zeros(cfg.hidden),
        w2=rng.normal(0.0, np.sqrt(1.0 / cfg.hidden), size=cfg.hidden),
        b2=0.0,
        feat_mean=mean,
        feat_std=std,
    )

    xs = model.standardize(x)
    n = len(y)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grads = loss_and_gradients(model, xs[batch], y[batch])
            model.w1 -= cfg.learning_rate * grads["w1"]
            model.b1 -= cfg.learning_rate * grads["b1"]
            model.w2 -= cfg.learning_rate * grads["w2"]
            model.b2 -= cfg.learning_rate * grads["b2"]
    return model


def infer(model: MlpModel, features) -> float:
    """Forward pass returning the lane-change probability."""
    x = np.asarray(features, dtype=float)
    if x.shape != (FEATURE_SIZE,):
        raise DimensionMismatch(f"expected {FEATURE_SIZE} features, got {x.shape}")
    prob, _ = _forward(model, model.standardize(x)[None, :])
    return float(prob[0])


def aggressive_filter(trace: PredictionTrace, tau_a: int) -> PredictionTrace:
    """Propagate each positive prediction over the following tau_a timesteps."""
    if tau_a < 0:
        raise ValueError("tau_a must be nonnegative")
    raw = trace.binary
    out = np.zeros_like(raw)
    n = len(raw)
    for t in range(n):
        if raw[t] == 1:
            out[t:min(t + tau_a + 1, n)] = 1
    return PredictionTrace(trace.vehicle_id, trace.times, trace.probabilities, out)


def conservative_filter(trace: PredictionTrace, tau_c: int,
                        thres: float = 0.5) -> PredictionTrace:
    """Positive only where the trailing (tau_c + 1)-wide mean exceeds thres."""
    if tau_c < 0:
        raise ValueError("tau_c must be nonnegative")
    if not 0.0 <= thres <= 1.0:
        raise ValueError("thres must be in [0, 1]")
    raw = trace.binary
    out = np.zeros_like(raw)
    for t in range(tau_c, len(raw)):
        window = raw[t - tau_c:t + 1]
        if window.mean() > thres:
            out[t] = 1
    return PredictionTrace(trace.vehicle_id, trace.times, trace.probabilities, out)


def save_model(model: MlpModel, path):
    doc = {
        "format": MODEL_FORMAT,
        "layer_sizes": [FEATURE_SIZE, model.hidden, 1],
        "feat_mean": model.feat_mean.tolist(),
        "feat_std": model.feat_std.tolist(),
        "w1": model.w1.tolist(),
        "b1": model.b1.tolist(),
        "w2": model.w2.tolist(),
        "b2": model.b2,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model file format: {doc.get('format')!r}")
    return MlpModel(
        w1=np.asarray(doc["w1"], dtype=float),
        b1=np.asarray(doc["b1"], dtype=float),
        w2=np.asarray(doc["w2"], dtype=float),
        b2=float(doc["b2"]),
        feat_mean=np.asarray(doc["feat_mean"], dtype=float),
        feat_std=np.asarray(doc["feat_std"], dtype=float),
    )


def write_dataset_csv(dataset: list[LabeledSample], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "t", "label"] + [f"f{i}" for i in range(1, 14)])
        for s in dataset:
            w.writerow([s.vehicle_id, f"{s.t:.2f}", s.label]
                       + [repr(v) for v in s.features])


def read_dataset_csv(path) -> list[LabeledSample]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            feats = tuple(float(row[f"f{i}"]) for i in range(1, 14))
            out.append(LabeledSample(feats, int(row["label"]), float(row["t"]),
                                     int(row["vehicle_id"])))
    return out


def write_traces_csv(rows, path):
    """rows: (vehicle_id, t, probability, raw, aggressive, conservative)"""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "t", "probability", "raw", "aggressive",
                    "conservative"])
        for vid, t, prob, raw, agg, cons in rows:
            w.writerow([vid, f"{t:.2f}", f"{prob:.6f}", raw, agg, cons])
