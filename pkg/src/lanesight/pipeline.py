"""End-to-end runners: closed-loop simulation, corpus building, datasets.

The closed-loop runner owns the cadence logic: vehicle states publish to the
twin store every channel period, the classifier infers per neighbor once per
second from twin snapshots, advisories publish back on the same channel, and
the ego's guidance view refreshes every guidance tick subject to latency.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import seeding
from .evaluation import SafetyReport, ScoredFrame, safety_report
from .fusion import FusionParams, identify
from .geometry import Camera, CameraExtrinsics, CameraIntrinsics, WorldPoint, iou
from .prediction import MlpModel, PredictionTrace, WindowParams, \
    features_from_states, infer, label_windows
from .scene import (
    LaneSpec,
    ManeuverPlan,
    Scenario,
    ScenarioConfig,
    TrajectoryLog,
    VehicleState,
    build_scenario,
    extract_lane_changes,
    step,
)
from .sensing import DetectorNoiseModel, SensorFrame, render_depth_map, \
    render_truth_boxes
from .twinlink import ChannelConfig, CloudAdvisory, NoData, TwinStore, gnss_distance, \
    publish, publish_advisory, query_advisory, query_target

INFER_PERIOD = 1.0  # seconds between per-vehicle predictions
CAR_WIDTH, CAR_HEIGHT = 1.8, 1.5


@dataclass(frozen=True)
class CameraMount:
    """Intrinsics plus the camera's pose offset from the ego body center."""

    intrinsics: CameraIntrinsics
    forward: float = 2.0
    up: float = 1.4
    left: float = 0.0

    def camera_for(self, ego: VehicleState) -> Camera:
        position = WorldPoint(ego.s + self.forward, ego.y + self.left, self.up)
        return Camera(CameraExtrinsics.looking_along_road(position), self.intrinsics)


def default_mount() -> CameraMount:
    intr = CameraIntrinsics(f=0.005, d_x=5e-6, d_y=5e-6, u0=480.0, v0=270.0,
                            width=960, height=540)
    return CameraMount(intrinsics=intr)


@dataclass
class RunArtifacts:
    log: TrajectoryLog
    store: TwinStore
    traces: dict[int, PredictionTrace]
    scenario: Scenario


def _grid_stride(period: float, dt: float) -> int:
    stride = int(round(period / dt))
    if stride < 1 or abs(stride * dt - period) > 1e-9:
        raise ValueError(f"period {period} must be a multiple of dt {dt}")
    return stride


def _twin_snapshot(store: TwinStore, t: float, channel: ChannelConfig,
                   lanes: LaneSpec) -> list[VehicleState]:
    states = []
    for vid in sorted(store.records):
        try:
            rec = query_target(store, vid, t, channel)
        except NoData:
            continue
        kind, length = store.meta[vid]
        states.append(VehicleState(
            id=vid, kind=kind, s=rec.position.x, y=rec.position.y, v=rec.speed,
            a=0.0, lane=lanes.lane_of(rec.position.y), length=length,
            width=CAR_WIDTH, height=CAR_HEIGHT, v_desired=rec.speed))
    return states


def simulate_run(cfg: ScenarioConfig, channel: ChannelConfig = ChannelConfig(),
                 model: MlpModel | None = None) -> RunArtifacts:
    """Run one scenario; with a model, predictions flow over the twin channel."""
    scn = build_scenario(cfg)
    store = TwinStore()
    n_steps = int(round(cfg.duration / cfg.dt_sim))
    publish_stride = _grid_stride(channel.publish_period, cfg.dt_sim)
    infer_stride = _grid_stride(INFER_PERIOD, cfg.dt_sim)
    guided = cfg.driver.policy == "guided"

    trace_rows: dict[int, list[tuple[float, float, int]]] = {
        v.id: [] for v in scn.vehicles if v.kind == "car"}
    guidance: dict[int, float] = {}

    for k in range(n_steps + 1):
        t = scn.t
        if k % publish_stride == 0:
            for veh in scn.vehicles:
                publish(store, veh, t)
            if model is not None and k % infer_stride == 0:
                snapshot = _twin_snapshot(store, t, channel, cfg.lanes)
                present = {s.id for s in snapshot}
                for vid in sorted(trace_rows):
                    if vid not in present:
                        continue
                    feats = features_from_states(snapshot, vid, cfg.lanes.lane_count)
                    prob = infer(model, feats)
                    rec = query_target(store, vid, t, channel)
                    publish_advisory(store, CloudAdvisory(vid, rec.position, prob, t))
                    trace_rows[vid].append((t, prob, int(prob >= 0.5)))
            if guided:
                guidance = {}
                for vid in sorted(trace_rows):
                    adv = query_advisory(store, vid, t, channel)
                    if adv is not None:
                        guidance[vid] = adv.lane_change_probability
        if k < n_steps:
            step(scn, guidance if guided else None)

    traces = {}
    for vid, rows in trace_rows.items():
        if rows:
            times, probs, bits = zip(*rows)
            traces[vid] = PredictionTrace(vid, np.asarray(times), np.asarray(probs),
                                          np.asarray(bits, dtype=int))
    return RunArtifacts(log=scn.build_log(), store=store, traces=traces, scenario=scn)


def render_frames(log: TrajectoryLog, mount: CameraMount, noise: DetectorNoiseModel,
                  period: float = 0.1) -> list[SensorFrame]:
    """Post-hoc sensor frames at the given cadence from a finished log."""
    sampled = log.resample(period)
    frames = []
    for i, t in enumerate(sampled.times):
        states = sampled.states_at(i)
        ego = next(s for s in states if s.id == sampled.ego_id)
        others = [s for s in states if s.id != sampled.ego_id]
        camera = mount.camera_for(ego)
        frame_noise = noise.for_frame(i)
        truth = render_truth_boxes(others, camera)
        depth = render_depth_map(others, camera, noise=frame_noise)
        from .sensing import emulate_detections
        dets = emulate_detections(truth, frame_noise, mount.intrinsics.width,
                                  mount.intrinsics.height)
        frames.append(SensorFrame(t=float(t), detections=dets, depth=depth,
                                  camera=camera))
    return frames


def build_dataset(cfg: ScenarioConfig, window: WindowParams, seeds,
                  channel: ChannelConfig = ChannelConfig(),
                  include_nonchangers: bool = True):
    """Labeled samples from fresh baseline runs over the given seeds.

    include_nonchangers augments the shifted-window negatives with samples
    from vehicles that never maneuver (queued or free-flowing traffic), so
    the classifier sees the full range of stay-put behavior.
    """
    from .prediction import nonchanger_negatives
    samples = []
    for seed in seeds:
        run_cfg = replace(cfg, seed=int(seed)).with_policy("baseline")
        art = simulate_run(run_cfg, channel)
        log = art.log.resample(0.1)
        events = extract_lane_changes(log)
        samples.extend(label_windows(events, log, window))
        if include_nonchangers:
            samples.extend(nonchanger_negatives(log, events, window))
    return samples


def ground_truth_bits(trace: PredictionTrace, events: list[ManeuverPlan],
                      tau: float) -> np.ndarray:
    """Per-timestep labels consistent with the positive labeling window."""
    bits = np.zeros(len(trace.times), dtype=int)
    for event in events:
        if event.vehicle_id != trace.vehicle_id:
            continue
        lo, hi = event.t_end - tau, event.t_end
        bits |= ((trace.times >= lo - 1e-9) & (trace.times <= hi + 1e-9)).astype(int)
    return bits


def closed_loop_pair(cfg: ScenarioConfig, model: MlpModel, seed: int,
                     channel: ChannelConfig = ChannelConfig())\
        -> tuple[SafetyReport, SafetyReport]:
    """Guided and baseline reports for one seed on identical scenarios."""
    reports = {}
    for policy in ("guided", "baseline"):
        run_cfg = replace(cfg, seed=seed).with_policy(policy)
        art = simulate_run(run_cfg, channel, model=model if policy == "guided" else None)
        reports[policy] = safety_report(art.log.resample(0.1), art.log.ego_id)
    return reports["guided"], reports["baseline"]


@dataclass(frozen=True)
class FuseCorpusConfig:
    """Layout of the synthetic identification corpus.

    A configurable fraction of frames contains an overlapping same-lane
    pair in one of two arrangements: a nearer in-line car staggered to the
    opposite side of the lane from the cloud-tracked target, or a pair
    riding nearly abreast with a sub-lane lateral separation. The
    cloud-reported position carries seeded GNSS error, so the anchor point
    and D_g are consistently wrong together, as they would be live.
    """

    frames: int = 500
    overlap_fraction: float = 0.55
    abreast_fraction: float = 0.9  # of overlap frames; the rest are in-line
    gnss_sigma: tuple[float, float, float] = (0.4, 0.55, 0.45)
    target_range: tuple[float, float] = (14.0, 26.0)
    occluder_gap: tuple[float, float] = (4.5, 10.0)  # in-line: distance behind target
    stagger_range: tuple[float, float] = (0.25, 0.85)
    abreast_separation: tuple[float, float] = (0.75, 1.05)
    abreast_gap: tuple[float, float] = (1.0, 2.5)
    clutter_max: int = 2


@dataclass
class CorpusResult:
    scored: list[ScoredFrame]
    frame_count: int
    overlap_pair_frames: int


def _corpus_vehicle(vid, s, y, v=17.0):
    lane = 1
    return VehicleState(id=vid, kind="car", s=s, y=y, v=v, a=0.0, lane=lane,
                        length=4.5, width=CAR_WIDTH, height=CAR_HEIGHT, v_desired=v)


def build_fuse_corpus(corpus: FuseCorpusConfig, mount: CameraMount,
                      noise: DetectorNoiseModel, fusion: FusionParams,
                      seed: int) -> CorpusResult:
    """Score fused and baseline identification on synthetic corner cases."""
    rng = seeding.rng_for(seed, seeding.CORPUS)
    lanes = LaneSpec()
    intr = mount.intrinsics
    scored: list[ScoredFrame] = []
    ego_y = lanes.center(1)
    overlap_pair_frames = 0
    frame_count = 0

    for index in range(corpus.frames):
        ego = _corpus_vehicle(-1, s=-mount.forward, y=ego_y)
        camera = mount.camera_for(ego)
        cam_center = camera.extrinsics.camera_center()

        target_s = rng.uniform(*corpus.target_range)
        side = float(rng.choice((-1.0, 1.0)))
        states = []
        if rng.random() < corpus.overlap_fraction:
            if rng.random() < corpus.abreast_fraction:
                target = _corpus_vehicle(1, s=target_s,
                                         y=ego_y + side * rng.uniform(0.05, 0.3))
                comp_y = target.y - side * rng.uniform(*corpus.abreast_separation)
                comp_s = target_s - rng.uniform(*corpus.abreast_gap)
                states = [target, _corpus_vehicle(2, s=comp_s, y=comp_y)]
            else:
                target = _corpus_vehicle(1, s=target_s,
                                         y=ego_y + side * rng.uniform(*corpus.stagger_range))
                occ_y = ego_y - side * rng.uniform(*corpus.stagger_range)
                occ_s = max(target_s - rng.uniform(*corpus.occluder_gap), 7.0)
                states = [target, _corpus_vehicle(2, s=occ_s, y=occ_y)]
        else:
            target = _corpus_vehicle(1, s=target_s,
                                     y=ego_y + side * rng.uniform(*corpus.stagger_range))
            states = [target]
        for c in range(int(rng.integers(0, corpus.clutter_max + 1))):
            lane = int(rng.choice((0, 2)))
            states.append(_corpus_vehicle(10 + c, s=rng.uniform(8.0, 45.0),
                                          y=lanes.center(lane) + rng.uniform(-0.5, 0.5)))

        truth = dict(render_truth_boxes(states, camera))
        if 1 not in truth:
            continue
        frame_count += 1
        if 2 in truth and iou(truth[1], truth[2]) > 0.0:
            overlap_pair_frames += 1
        frame_noise = noise.for_frame(index)
        depth = render_depth_map(states, camera, noise=frame_noise)
        from .sensing import emulate_detections
        dets = emulate_detections(list(truth.items()), frame_noise,
                                  intr.width, intr.height)
        frame = SensorFrame(t=float(index), detections=dets, depth=depth,
                            camera=camera)

        gnss_rng = seeding.rng_for(seed, seeding.GNSS, index)
        err = gnss_rng.normal(0.0, 1.0, 3) * np.asarray(corpus.gnss_sigma)
        from .twinlink import TwinRecord
        reported = WorldPoint(target.s + err[0], target.y + err[1],
                              0.5 * CAR_HEIGHT + err[2])
        twin = TwinRecord(1, reported, target.v, float(index))
        d_g = gnss_distance(cam_center, twin)

        frame_params = replace(fusion, seed=seeding.derived_seed(seed, seeding.SAMPLER,
                                                                 index))
        for method in ("fused", "baseline"):
            result = identify(frame, twin, d_g, frame_params, method=method)
            scored.append(ScoredFrame(result, truth[1], 1))
    return CorpusResult(scored=scored, frame_count=frame_count,
                        overlap_pair_frames=overlap_pair_frames)
