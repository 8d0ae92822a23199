"""Monostatic sensing at the measurement level: synthesis, fusion and beam prediction.

Each AP observes every scatterer as a (delay, Doppler, angle) triple equal to
the geometric truth plus Gaussian noise whose variance shrinks with SNR and
beam alignment. Fusion averages the per-measurement positions in the global
frame and forms a weighted least-squares speed estimate per AP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .channel import array_angle
from .scene import SPEED_OF_LIGHT, TAU, AccessPoint, Point2D, TargetState, angle_of

# scatterers whose beam gain |rho|^2 falls below this are treated as unmeasurable
MIN_BEAM_GAIN = 1e-6


class EstimationError(RuntimeError):
    """Raised when fusion has no usable measurements."""


@dataclass(frozen=True)
class ScattererTruth:
    distance: float
    azimuth: float
    radial_speed: float
    rcs: complex
    doppler: float

    @property
    def delay(self) -> float:
        return 2.0 * self.distance / SPEED_OF_LIGHT


@dataclass(frozen=True)
class NoiseModel:
    a_tau: float
    a_mu: float
    a_theta: float
    mf_gain: float
    array_gain: float  # kappa = sqrt(N_t * N_r)
    noise_power: float

    def __post_init__(self):
        for name in ("a_tau", "a_mu", "a_theta", "mf_gain", "array_gain", "noise_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Measurement:
    ap_index: int
    scatterer_index: int
    delay_hat: float
    doppler_hat: float
    angle_hat: float
    var_delay: float
    var_doppler: float
    var_angle: float


@dataclass(frozen=True)
class MeasurementBatch:
    """Measurements of one sensing slot, stored column-wise.

    ``origin`` holds the position of the AP that produced each row, so the
    batch can be fused without the AP roster.
    """

    ap_index: np.ndarray
    scatterer_index: np.ndarray
    origin: np.ndarray  # (n, 2)
    delay: np.ndarray
    doppler: np.ndarray
    angle: np.ndarray
    var_delay: np.ndarray
    var_doppler: np.ndarray
    var_angle: np.ndarray

    def __len__(self) -> int:
        return len(self.delay)

    def __iter__(self) -> Iterator[Measurement]:
        for i in range(len(self)):
            yield Measurement(
                int(self.ap_index[i]),
                int(self.scatterer_index[i]),
                float(self.delay[i]),
                float(self.doppler[i]),
                float(self.angle[i]),
                float(self.var_delay[i]),
                float(self.var_doppler[i]),
                float(self.var_angle[i]),
            )

    @classmethod
    def concatenate(cls, batches: Sequence["MeasurementBatch"]) -> "MeasurementBatch":
        if not batches:
            return cls(*(np.empty(0) for _ in range(2)), np.empty((0, 2)), *(np.empty(0) for _ in range(6)))
        return cls(
            np.concatenate([b.ap_index for b in batches]),
            np.concatenate([b.scatterer_index for b in batches]),
            np.concatenate([b.origin for b in batches]),
            *(np.concatenate([getattr(b, f) for b in batches])
              for f in ("delay", "doppler", "angle", "var_delay", "var_doppler", "var_angle")),
        )


@dataclass(frozen=True)
class FusedEstimate:
    x_hat: float
    y_hat: float
    v_hat: float

    @property
    def centroid(self) -> Point2D:
        return Point2D(self.x_hat, self.y_hat)


@dataclass(frozen=True)
class TrackState:
    predicted_centroid: Point2D
    predicted_angle_per_ap: tuple[float, ...]
    speed: float = 0.0


def draw_rcs(rng: np.random.Generator, k: int) -> np.ndarray:
    """Zero-mean, unit-variance circular complex Gaussian RCS values."""
    return (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / math.sqrt(2.0)


def ground_truth_observables(
    ap: AccessPoint,
    scatterers: np.ndarray,
    t: TargetState,
    carrier_freq: float,
    rcs: Sequence[complex] | None = None,
) -> list[ScattererTruth]:
    """Geometric delay/Doppler/angle of every scatterer seen from ``ap``.

    Radial speed is the projection of the target velocity on the AP->scatterer
    direction, ``v * cos(theta - heading)``; for a heading along +x this is
    ``v * cos(theta)``.
    """
    if len(scatterers) == 0:
        raise ValueError("no scatterers")
    if rcs is None:
        rcs = np.ones(len(scatterers), dtype=complex)
    psi = t.heading_angle
    out = []
    for (sx, sy), eps in zip(scatterers, rcs):
        d = math.dist(ap.position, (sx, sy))
        if d == 0.0:
            raise ValueError("scatterer coincides with the AP")
        theta = angle_of(ap.position, (sx, sy))
        radial = t.speed * math.cos(theta - psi)
        out.append(ScattererTruth(d, theta, radial, complex(eps), 2.0 * radial * carrier_freq / SPEED_OF_LIGHT))
    return out


def reflection_gain(d: float, rcs: complex) -> complex:
    if d <= 0:
        raise ValueError("distance must be positive")
    return rcs / (2.0 * d) ** 2


def steering_inner_product(theta_true: float, phi_pred: float, n: int) -> complex:
    """a(theta)^H a(phi) for unit-norm ULA steering vectors, in closed form."""
    if n < 1:
        raise ValueError("array size must be >= 1")
    x = math.pi * (math.cos(theta_true) - math.cos(phi_pred))
    half = x / 2.0
    s = math.sin(half)
    if abs(s) < 1e-12:
        return complex(1.0, 0.0)
    mag = math.sin(n * half) / (n * s)
    ph = (n - 1) * half
    return mag * complex(math.cos(ph), math.sin(ph))


def measurement_variances(
    nm: NoiseModel, tx_power: float, beta: complex, rho: complex
) -> tuple[float, float, float]:
    snr = tx_power * nm.mf_gain * abs(nm.array_gain * beta) ** 2 * abs(rho) ** 2
    if snr <= 0:
        raise ValueError("unmeasurable scatterer: zero reflection or beam gain")
    base = nm.noise_power / snr
    return nm.a_tau**2 * base, nm.a_mu**2 * base, nm.a_theta**2 * base


def synthesize_measurements(
    ap_index: int,
    origin: Sequence[float],
    truth: Sequence[ScattererTruth],
    variances: Sequence[tuple[float, float, float] | None],
    rng: np.random.Generator,
    noiseless: bool = False,
) -> MeasurementBatch:
    """Truth plus independent zero-mean Gaussian noise of the declared variances.

    Entries of ``variances`` that are ``None`` mark unmeasurable scatterers;
    their noise is still drawn so the stream stays aligned, but they are left
    out of the batch.
    """
    k = len(truth)
    z = rng.standard_normal((k, 3))
    if noiseless:
        z[:] = 0.0
    rows = []
    for i, (tr, var) in enumerate(zip(truth, variances)):
        if var is None:
            continue
        vt, vm, va = var
        rows.append((
            i,
            tr.delay + math.sqrt(vt) * z[i, 0],
            tr.doppler + math.sqrt(vm) * z[i, 1],
            (tr.azimuth + math.sqrt(va) * z[i, 2]) % TAU,
            vt, vm, va,
        ))
    n = len(rows)
    cols = list(zip(*rows)) if rows else [()] * 7
    return MeasurementBatch(
        ap_index=np.full(n, ap_index, dtype=int),
        scatterer_index=np.asarray(cols[0], dtype=int),
        origin=np.tile(np.asarray(origin, dtype=float), (n, 1)),
        delay=np.asarray(cols[1], dtype=float),
        doppler=np.asarray(cols[2], dtype=float),
        angle=np.asarray(cols[3], dtype=float),
        var_delay=np.asarray(cols[4], dtype=float),
        var_doppler=np.asarray(cols[5], dtype=float),
        var_angle=np.asarray(cols[6], dtype=float),
    )


def sense_ap(
    ap_index: int,
    ap: AccessPoint,
    scatterers: np.ndarray,
    t: TargetState,
    carrier_freq: float,
    nm: NoiseModel,
    beam_angle: float,
    rng: np.random.Generator,
    noiseless: bool = False,
) -> tuple[MeasurementBatch, list[ScattererTruth]]:
    """One AP's sensing slot: draw RCS, compute variances and noisy measurements.

    ``beam_angle`` is the global angle the AP points its beam at.
    """
    rcs = draw_rcs(rng, len(scatterers))
    truth = ground_truth_observables(ap, scatterers, t, carrier_freq, rcs)
    phi = array_angle(beam_angle, ap.broadside)
    variances = []
    for tr in truth:
        beta = reflection_gain(tr.distance, tr.rcs)
        rho = steering_inner_product(array_angle(tr.azimuth, ap.broadside), phi, ap.n_tx)
        if abs(rho) ** 2 < MIN_BEAM_GAIN or beta == 0:
            variances.append(None)
        else:
            variances.append(measurement_variances(nm, ap.tx_power, beta, rho))
    return synthesize_measurements(ap_index, ap.position, truth, variances, rng, noiseless), truth


def fuse_position(batch: MeasurementBatch) -> tuple[float, float]:
    """Average of the measured scatterer positions, each translated to the global frame."""
    if len(batch) == 0:
        raise EstimationError("no measurements to fuse")
    r = SPEED_OF_LIGHT * batch.delay / 2.0
    x = batch.origin[:, 0] + r * np.cos(batch.angle)
    y = batch.origin[:, 1] + r * np.sin(batch.angle)
    return float(np.mean(x)), float(np.mean(y))


def fuse_velocity(batch: MeasurementBatch, carrier_freq: float, heading_angle: float = 0.0) -> float:
    """Per-AP weighted least-squares speed along the known heading, averaged over APs.

    APs whose projections all vanish are left out of the average.
    """
    cos = np.cos(batch.angle - heading_angle)
    w = 1.0 / batch.var_doppler
    per_ap = []
    for m in np.unique(batch.ap_index):
        sel = batch.ap_index == m
        den = float(np.sum(cos[sel] ** 2 * w[sel]))
        if den <= 0.0 or not math.isfinite(den):
            continue
        num = float(np.sum(batch.doppler[sel] * cos[sel] * w[sel]))
        per_ap.append(num / den)
    if not per_ap:
        raise EstimationError("speed unobservable from every AP")
    return SPEED_OF_LIGHT / (2.0 * carrier_freq) * float(np.mean(per_ap))


def predict_track(
    fused: FusedEstimate,
    heading: Sequence[float],
    frame_duration: float,
    aps: Sequence[AccessPoint],
) -> TrackState:
    px = fused.x_hat + fused.v_hat * frame_duration * heading[0]
    py = fused.y_hat + fused.v_hat * frame_duration * heading[1]
    centroid = Point2D(px, py)
    try:
        angles = tuple(angle_of(ap.position, centroid) for ap in aps)
    except ValueError as exc:
        raise EstimationError("predicted centroid coincides with an AP") from exc
    return TrackState(centroid, angles, fused.v_hat)


def initial_track(centroid: Sequence[float], speed: float, aps: Sequence[AccessPoint]) -> TrackState:
    """Track seeded with a perfectly acquired centroid."""
    c = Point2D(*centroid)
    return TrackState(c, tuple(angle_of(ap.position, c) for ap in aps), speed)
