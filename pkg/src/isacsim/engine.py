"""Frame-level simulation loop, Monte Carlo orchestration and parameter sweeps.

Every frame opens with a sensing slot taken at the true target pose. The
fused estimate drives the sensing-assisted channel, which stays frozen for
the remaining communication slots while the true target keeps moving. The
LS baseline is also estimated once per frame; perfect CSI follows the true
channel every slot.

Randomness is keyed by ``(seed, frame, stream, index...)`` so results do not
depend on execution order or on how work is split across processes.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channel import (
    NetworkChannel,
    estimated_network_channel_ls,
    estimated_network_channel_sensing,
    true_network_channel,
)
from .comm import BeamformerSet, channel_correlation, slot_throughput, zf_weights
from .config import SimConfig
from .scene import (
    AccessPoint,
    Point2D,
    Scene,
    SurfaceReflectionProps,
    TargetState,
    UserEquipment,
    broadside_towards,
    scatterer_positions,
)
from .sensing import (
    EstimationError,
    FusedEstimate,
    MeasurementBatch,
    NoiseModel,
    TrackState,
    fuse_position,
    fuse_velocity,
    initial_track,
    predict_track,
    sense_ap,
)

log = logging.getLogger(__name__)

# RNG stream identifiers
STREAM_SCATTERERS = 1
STREAM_SENSING = 2
STREAM_LS = 3


def stream_rng(seed: int, frame: int, stream: int, *index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, frame, stream, *index]))


def build_scene(cfg: SimConfig) -> Scene:
    aps = tuple(
        AccessPoint(Point2D(*p), cfg.n_tx, cfg.n_rx, cfg.tx_power_w, broadside_towards(p, cfg.room_size_m))
        for p in cfg.ap_positions_m[: cfg.n_aps]
    )
    ues = tuple(
        UserEquipment(Point2D(*p), cfg.n_ue_ant, broadside_towards(p, cfg.room_size_m))
        for p in cfg.ue_positions_m
    )
    props = SurfaceReflectionProps(
        cfg.surface_phase_rad, cfg.specular_reflectance, cfg.diffuse_reflectance, cfg.reflection_efficiency
    )
    return Scene(
        room_size=cfg.room_size_m,
        aps=aps,
        ues=ues,
        carrier_freq=cfg.carrier_freq,
        target_length=cfg.target_length_m,
        target_width=cfg.target_width_m,
        reflection=props,
        beam_floor=cfg.beam_floor,
        path_loss=cfg.path_loss,
        path_gain_db=cfg.path_gain_db,
    )


def noise_model(cfg: SimConfig) -> NoiseModel:
    return NoiseModel(
        a_tau=cfg.a_tau,
        a_mu=cfg.a_mu,
        a_theta=cfg.a_theta,
        mf_gain=cfg.mf_gain,
        array_gain=math.sqrt(cfg.n_tx * cfg.n_rx),
        noise_power=cfg.noise_power_w,
    )


def initial_target(cfg: SimConfig) -> TargetState:
    return TargetState(
        Point2D(*cfg.target_start_m), cfg.target_heading, cfg.target_speed_mps,
        cfg.target_length_m, cfg.target_width_m,
    )


def advance_target(t: TargetState, dt: float) -> TargetState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    step = t.speed * dt
    return t.moved_to(Point2D(t.centroid.x + step * t.heading[0], t.centroid.y + step * t.heading[1]))


def target_at(cfg: SimConfig, frame: int, slot: int = 0) -> TargetState:
    # closed form from the start pose, so per-frame displacement is exact
    return advance_target(initial_target(cfg), frame * cfg.frame_s + slot * cfg.slot_s)


@dataclass
class FrameMetrics:
    seed: int
    frame: int
    true_centroid: Point2D
    fused: FusedEstimate
    pos_error: float
    fallback: bool
    throughput: dict[str, list[float]] = field(default_factory=dict)
    correlation: dict[str, list[float]] = field(default_factory=dict)
    regularized: dict[str, bool] = field(default_factory=dict)

    def mean_throughput(self, est: str) -> float:
        return float(np.mean(self.throughput[est]))

    def mean_correlation(self, est: str) -> float:
        return float(np.mean(self.correlation[est]))


def sense_frame(
    scene: Scene, track: TrackState, cfg: SimConfig, seed: int, frame: int, target: TargetState
) -> MeasurementBatch:
    pts = scatterer_positions(
        target, cfg.scatterers_k, stream_rng(seed, frame, STREAM_SCATTERERS), cfg.scatterer_layout
    )
    nm = noise_model(cfg)
    batches = []
    for m, ap in enumerate(scene.aps):
        batch, _ = sense_ap(
            m, ap, pts, target, cfg.carrier_freq, nm, track.predicted_angle_per_ap[m],
            stream_rng(seed, frame, STREAM_SENSING, m), noiseless=not cfg.sensing_noise,
        )
        batches.append(batch)
    return MeasurementBatch.concatenate(batches)


def fuse(batch: MeasurementBatch, cfg: SimConfig, target: TargetState) -> FusedEstimate:
    x, y = fuse_position(batch)
    v = fuse_velocity(batch, cfg.carrier_freq, target.heading_angle)
    return FusedEstimate(x, y, v)


def run_frame(
    scene: Scene, track: TrackState, cfg: SimConfig, seed: int, frame: int
) -> tuple[FrameMetrics, TrackState]:
    """Sensing slot, frame-frozen estimates, then throughput in every communication slot."""
    target = target_at(cfg, frame)
    heading = target.heading

    fallback = False
    try:
        fused = fuse(sense_frame(scene, track, cfg, seed, frame, target), cfg, target)
        next_track = predict_track(fused, heading, cfg.frame_s, scene.aps)
    except EstimationError as exc:
        log.warning("seed %d frame %d: sensing failed (%s); reusing prediction", seed, frame, exc)
        fallback = True
        fused = FusedEstimate(track.predicted_centroid.x, track.predicted_centroid.y, track.speed)
        next_track = predict_track(fused, heading, cfg.frame_s, scene.aps)
    pos_error = math.dist(fused.centroid, target.centroid)

    h0 = true_network_channel(scene, target)
    frozen: dict[str, BeamformerSet] = {}
    estimates: dict[str, NetworkChannel] = {}
    if "sensing" in cfg.estimators:
        estimates["sensing"] = estimated_network_channel_sensing(scene, fused.centroid, heading)
    if "ls" in cfg.estimators:
        estimates["ls"] = estimated_network_channel_ls(
            h0, cfg.ue_power_w, cfg.ls_pilot_len, cfg.noise_power_w,
            lambda u, m: stream_rng(seed, frame, STREAM_LS, u, m),
        )
    for name, h_est in estimates.items():
        frozen[name] = zf_weights(h_est)

    metrics = FrameMetrics(seed, frame, target.centroid, fused, pos_error, fallback)
    for name in cfg.estimators:
        metrics.throughput[name] = []
        metrics.correlation[name] = []
        metrics.regularized[name] = frozen[name].regularized if name in frozen else False

    for slot in range(1, cfg.slots_per_frame):
        h_true = true_network_channel(scene, target_at(cfg, frame, slot))
        for name in cfg.estimators:
            if name == "perfect":
                h_est, bf = h_true, zf_weights(h_true)
                metrics.regularized[name] |= bf.regularized
            else:
                h_est, bf = estimates[name], frozen[name]
            metrics.throughput[name].append(slot_throughput(h_true, bf, cfg.tx_power_w, cfg.noise_power_w).total)
            metrics.correlation[name].append(channel_correlation(h_true, h_est, cfg.correlation_mode))
    return metrics, next_track


def _target_inside(scene: Scene, t: TargetState) -> bool:
    return scene.contains(t.centroid)


def run_seed(cfg: SimConfig, seed: int) -> list[FrameMetrics]:
    """One tracking run: frames until the budget is spent or the target leaves the room."""
    scene = build_scene(cfg)
    track = initial_track(cfg.target_start_m, cfg.target_speed_mps, scene.aps)
    out = []
    for frame in range(cfg.frames):
        if not _target_inside(scene, target_at(cfg, frame)):
            log.info("seed %d: target left the room before frame %d", seed, frame)
            break
        metrics, track = run_frame(scene, track, cfg, seed, frame)
        out.append(metrics)
    return out


def worker_count() -> int:
    env = os.environ.get("ISACSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer ISACSIM_THREADS=%r", env)
    return os.cpu_count() or 1


def _run_seed_args(args):
    return args[1], run_seed(*args)


def run_simulation(cfg: SimConfig, workers: int | None = None) -> dict[int, list[FrameMetrics]]:
    """Run every seed of ``cfg``; the result is keyed and ordered by seed."""
    workers = worker_count() if workers is None else max(1, workers)
    seeds = sorted(set(cfg.seeds))
    if workers == 1 or len(seeds) == 1:
        results = [(s, run_seed(cfg, s)) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            results = list(pool.map(_run_seed_args, [(cfg, s) for s in seeds]))
    return dict(sorted(results))


def mean_ci(values: Sequence[float]) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% confidence interval."""
    a = np.asarray(values, dtype=float)
    mean = float(np.mean(a))
    if len(a) < 2:
        return mean, mean, mean
    half = 1.96 * float(np.std(a, ddof=1)) / math.sqrt(len(a))
    return mean, mean - half, mean + half


def seed_means(series: dict[int, list[FrameMetrics]], est: str, metric: str) -> list[float]:
    """Per-seed averages of a per-slot metric; slots are averaged within each frame first."""
    out = []
    for frames in series.values():
        if metric == "throughput":
            per_frame = [f.mean_throughput(est) for f in frames]
        else:
            per_frame = [f.mean_correlation(est) for f in frames]
        out.append(float(np.mean(per_frame)))
    return out


def summarize(series: dict[int, list[FrameMetrics]], cfg: SimConfig) -> dict:
    errors = [f.pos_error for frames in series.values() for f in frames]
    per_seed_err = [float(np.mean([f.pos_error for f in frames])) for frames in series.values()]
    m, lo, hi = mean_ci(per_seed_err)
    summary = {
        "mean_pos_error_m": float(np.mean(errors)),
        "pos_error_ci95_m": [lo, hi],
        "n_seeds": len(series),
        "n_frames": sum(len(v) for v in series.values()),
        "fallback_frames": sum(f.fallback for frames in series.values() for f in frames),
        "estimators": {},
    }
    for est in cfg.estimators:
        tm, tlo, thi = mean_ci(seed_means(series, est, "throughput"))
        cm, clo, chi = mean_ci(seed_means(series, est, "correlation"))
        summary["estimators"][est] = {
            "mean_throughput_bps_hz": tm,
            "throughput_ci95": [tlo, thi],
            "mean_correlation": cm,
            "correlation_ci95": [clo, chi],
        }
    return summary


SWEEP_PARAMS = {"aps": "n_aps", "power": "tx_power_dbm"}


def run_sweep(
    cfg: SimConfig, parameter: str, values: Iterable[float], workers: int | None = None
) -> list[dict]:
    """Per-value, per-estimator mean and 95% CI of throughput and correlation across seeds.

    ``parameter`` is ``"aps"`` (first ``k`` APs of the roster) or ``"power"``
    (AP transmit power in dBm). Values that make ZF infeasible are reported
    with ``skipped=True``.
    """
    if parameter not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for value in values:
        if parameter == "aps":
            point = cfg.replace(n_aps=int(value))
        else:
            point = cfg.replace(tx_power_dbm=float(value))
        feasible = point.n_users * point.n_ue_ant <= point.n_aps * point.n_tx
        if not feasible:
            log.warning("skipping %s=%s: ZF infeasible", parameter, value)
            for est in cfg.estimators:
                rows.append({"param": parameter, "value": value, "estimator": est, "skipped": True})
            continue
        series = run_simulation(point, workers)
        for est in cfg.estimators:
            tm, tlo, thi = mean_ci(seed_means(series, est, "throughput"))
            cm, clo, chi = mean_ci(seed_means(series, est, "correlation"))
            rows.append({
                "param": parameter,
                "value": value,
                "estimator": est,
                "skipped": False,
                "n_seeds": len(series),
                "throughput_mean": tm,
                "throughput_ci_low": tlo,
                "throughput_ci_high": thi,
                "correlation_mean": cm,
                "correlation_ci_low": clo,
                "correlation_ci_high": chi,
            })
    return rows
