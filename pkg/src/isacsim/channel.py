"""Ray-traced MIMO channels between APs and UEs around the extended target.

Each (UE, AP) block is a sum of rank-one path terms, LoS plus at most one
single-bounce reflection per target surface. Array angles are measured from
the ULA axis, which is perpendicular to the node's broadside direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .scene import (
    TAU,
    AccessPoint,
    Point2D,
    Scene,
    Surface,
    SurfaceReflectionProps,
    TargetState,
    UserEquipment,
    angle_of,
    los_exists,
    reflection_point,
    target_surfaces,
)

__all__ = [
    "SurfaceReflectionProps",
    "PathDescriptor",
    "NetworkChannel",
    "steering",
    "array_angle",
    "effective_aperture",
    "beam_footprint",
    "los_gain",
    "nlos_gain",
    "large_scale_amplitude",
    "trace_paths",
    "build_channel",
    "network_channel",
    "true_network_channel",
    "estimated_network_channel_sensing",
    "estimated_network_channel_ls",
]


def steering(theta: float, n: int) -> np.ndarray:
    """Unit-norm ULA response ``(1/sqrt(n)) * exp(-j*pi*i*cos(theta))``."""
    if n < 1:
        raise ValueError("array size must be >= 1")
    return np.exp(-1j * math.pi * math.cos(theta) * np.arange(n)) / math.sqrt(n)


def array_angle(global_angle: float, broadside: float) -> float:
    """Convert a global angle to the angle measured from the ULA axis."""
    return (global_angle - broadside + math.pi / 2.0) % TAU


def effective_aperture(theta_aoa: float, n_ue: int, wavelength: float) -> float:
    if n_ue < 1:
        raise ValueError("n_ue must be >= 1")
    return wavelength * (1.0 + (n_ue - 1) * abs(math.sin(theta_aoa)))


def beam_footprint(theta: float, n: int, floor: float = 0.05) -> float:
    """Half-power beamwidth of an ``n``-element ULA, floored away from endfire."""
    if n < 1:
        raise ValueError("array size must be >= 1")
    return 2.0 / (n * max(abs(math.sin(theta)), floor))


def los_gain(
    ap_pos: Sequence[float],
    ue_pos: Sequence[float],
    aod: float,
    aoa: float,
    wavelength: float,
    n_tx: int,
    n_ue: int,
    footprint: Callable[[float, int], float] = beam_footprint,
) -> complex:
    d = math.dist(ap_pos, ue_pos)
    if d <= 0.0:
        raise ValueError("LoS distance must be positive")
    aperture = effective_aperture(aoa, n_ue, wavelength)
    mag = math.sqrt(min(aperture / (footprint(aod, n_tx) * d), 1.0))
    return mag * complex(math.cos(TAU * d / wavelength), math.sin(TAU * d / wavelength))


def incidence_sin2(ap_pos: Sequence[float], refl: Sequence[float], s: Surface) -> float:
    """sin^2 of the angle between the incident ray and the reflecting surface."""
    ix, iy = refl[0] - ap_pos[0], refl[1] - ap_pos[1]
    dx, dy = s.direction
    cross = ix * dy - iy * dx
    return cross * cross / ((ix * ix + iy * iy) * (dx * dx + dy * dy))


def nlos_gain(
    ap_pos: Sequence[float],
    ue_pos: Sequence[float],
    refl_point: Sequence[float],
    surface: Surface,
    props: SurfaceReflectionProps,
    aod: float,
    aoa: float,
    wavelength: float,
    n_tx: int,
    n_ue: int,
    footprint: Callable[[float, int], float] = beam_footprint,
) -> complex:
    d1 = math.dist(ap_pos, refl_point)
    d2 = math.dist(refl_point, ue_pos)
    if d1 <= 0.0 or d2 <= 0.0:
        raise ValueError("reflection legs must have positive length")
    aperture = effective_aperture(aoa, n_ue, wavelength)
    specular = min(aperture / (footprint(aod, n_tx) * (d1 + d2)), 1.0) * props.specular
    diffuse = (
        incidence_sin2(ap_pos, refl_point, surface)
        * aperture
        / math.sqrt(4.0 * d2 * d2 + aperture * aperture)
        * props.diffuse
    )
    mag = math.sqrt(props.efficiency * (specular + diffuse))
    phase = -(props.phase_shift - TAU * (d1 + d2) / wavelength)
    return mag * complex(math.cos(phase), math.sin(phase))


def large_scale_amplitude(distance: float, wavelength: float, model: str, gain_db: float = 0.0) -> float:
    """Amplitude path loss over the unfolded path length, times a fixed system gain."""
    g = 10.0 ** (gain_db / 20.0)
    if model == "free_space":
        return g * wavelength / (4.0 * math.pi * distance)
    if model == "none":
        return g
    raise ValueError(f"unknown path-loss model {model!r}")


@dataclass(frozen=True)
class PathDescriptor:
    """One propagation path.

    ``aod``/``aoa`` are array-frame angles (the ones fed to :func:`steering`);
    ``aod_global``/``aoa_global`` are the geometric directions. ``gain`` is the
    small-scale coefficient and ``path_loss`` the large-scale amplitude factor.
    """

    kind: str  # "los" or "nlos"
    surface_id: Optional[int]
    exists: bool
    aod: float
    aoa: float
    aod_global: float
    aoa_global: float
    gain: complex
    distance: float
    path_loss: float = 1.0
    reflection_point: Optional[Point2D] = None

    @property
    def amplitude(self) -> complex:
        return self.gain * self.path_loss if self.exists else 0j


def trace_paths(
    ap: AccessPoint,
    ue: UserEquipment,
    target: TargetState,
    props: SurfaceReflectionProps,
    wavelength: float,
    beam_floor: float = 0.05,
    path_loss: str = "none",
    path_gain_db: float = 0.0,
) -> list[PathDescriptor]:
    """LoS descriptor (always present, possibly blocked) plus every valid reflection."""
    footprint = lambda th, n: beam_footprint(th, n, beam_floor)  # noqa: E731
    a_pos, u_pos = ap.position, ue.position

    aod_g = angle_of(a_pos, u_pos)
    aoa_g = angle_of(u_pos, a_pos)
    aod = array_angle(aod_g, ap.broadside)
    aoa = array_angle(aoa_g, ue.broadside)
    d = math.dist(a_pos, u_pos)
    solid = target.length > 0 and target.width > 0
    surfaces = target_surfaces(target) if solid else []
    exists = los_exists(ap, ue, target, surfaces) if solid else True
    paths = [
        PathDescriptor(
            kind="los",
            surface_id=None,
            exists=exists,
            aod=aod,
            aoa=aoa,
            aod_global=aod_g,
            aoa_global=aoa_g,
            gain=los_gain(a_pos, u_pos, aod, aoa, wavelength, ap.n_tx, ue.n_ant, footprint),
            distance=d,
            path_loss=large_scale_amplitude(d, wavelength, path_loss, path_gain_db),
        )
    ]
    for s in surfaces:
        p = reflection_point(a_pos, u_pos, s, target, surfaces)
        if p is None:
            continue
        aod_g = angle_of(a_pos, p)
        aoa_g = angle_of(u_pos, p)
        aod = array_angle(aod_g, ap.broadside)
        aoa = array_angle(aoa_g, ue.broadside)
        d = math.dist(a_pos, p) + math.dist(p, u_pos)
        paths.append(
            PathDescriptor(
                kind="nlos",
                surface_id=s.id,
                exists=True,
                aod=aod,
                aoa=aoa,
                aod_global=aod_g,
                aoa_global=aoa_g,
                gain=nlos_gain(a_pos, u_pos, p, s, props, aod, aoa, wavelength, ap.n_tx, ue.n_ant, footprint),
                distance=d,
                path_loss=large_scale_amplitude(d, wavelength, path_loss, path_gain_db),
                reflection_point=p,
            )
        )
    return paths


def build_channel(paths: Sequence[PathDescriptor], n_ue: int, n_tx: int) -> np.ndarray:
    """``N_u x N_t`` block: sum over existing paths of sqrt(N_t N_u) * gain * c a^H."""
    h = np.zeros((n_ue, n_tx), dtype=complex)
    scale = math.sqrt(n_tx * n_ue)
    for p in paths:
        if not p.exists:
            continue
        h += scale * p.amplitude * np.outer(steering(p.aoa, n_ue), steering(p.aod, n_tx).conj())
    return h


class NetworkChannel:
    """Stacked ``U*N_u x M*N_t`` channel; rows grouped by UE, columns by AP."""

    def __init__(self, n_users: int, n_aps: int, n_ue: int, n_tx: int, stacked: np.ndarray | None = None):
        self.n_users, self.n_aps, self.n_ue, self.n_tx = n_users, n_aps, n_ue, n_tx
        shape = (n_users * n_ue, n_aps * n_tx)
        if stacked is None:
            stacked = np.zeros(shape, dtype=complex)
        elif stacked.shape != shape:
            raise ValueError(f"stacked channel has shape {stacked.shape}, expected {shape}")
        self.stacked = stacked

    def _rows(self, u: int) -> slice:
        return slice(u * self.n_ue, (u + 1) * self.n_ue)

    def _cols(self, m: int) -> slice:
        return slice(m * self.n_tx, (m + 1) * self.n_tx)

    def block(self, u: int, m: int) -> np.ndarray:
        return self.stacked[self._rows(u), self._cols(m)]

    def set_block(self, u: int, m: int, h: np.ndarray) -> None:
        self.stacked[self._rows(u), self._cols(m)] = h

    def user(self, u: int) -> np.ndarray:
        return self.stacked[self._rows(u), :]

    def copy(self) -> "NetworkChannel":
        return NetworkChannel(self.n_users, self.n_aps, self.n_ue, self.n_tx, self.stacked.copy())

    @property
    def shape(self) -> tuple[int, int]:
        return self.stacked.shape


def network_channel(scene: Scene, target: TargetState) -> NetworkChannel:
    """Assemble every (UE, AP) block for one target pose."""
    ues, aps = scene.ues, scene.aps
    n_ue, n_tx = ues[0].n_ant, aps[0].n_tx
    out = NetworkChannel(len(ues), len(aps), n_ue, n_tx)
    for u, ue in enumerate(ues):
        for m, ap in enumerate(aps):
            paths = trace_paths(
                ap, ue, target, scene.reflection, scene.wavelength, scene.beam_floor,
                scene.path_loss, scene.path_gain_db,
            )
            out.set_block(u, m, build_channel(paths, n_ue, n_tx))
    return out


def true_network_channel(scene: Scene, true_target: TargetState) -> NetworkChannel:
    return network_channel(scene, true_target)


def estimated_network_channel_sensing(
    scene: Scene, centroid: Sequence[float], heading: Sequence[float]
) -> NetworkChannel:
    """Channel ray-traced around the sensed centroid with the known target dimensions."""
    est = TargetState(Point2D(*centroid), tuple(heading), 0.0, scene.target_length, scene.target_width)
    return network_channel(scene, est)


def ls_error_variance(pilot_power: float, pilot_len: float, noise_power: float) -> float:
    if pilot_len <= 0 or pilot_power <= 0:
        raise ValueError("pilot power and length must be positive")
    return noise_power / (pilot_power * pilot_len)


def estimated_network_channel_ls(
    true_channel: NetworkChannel,
    pilot_power: float,
    pilot_len: float,
    noise_power: float,
    rng_for_block: Callable[[int, int], np.random.Generator],
) -> NetworkChannel:
    """LS estimate ``h + E`` with i.i.d. CN(0, noise/(power*len)) error entries.

    ``rng_for_block(u, m)`` supplies an independent generator per block so a
    block's error does not depend on how many APs or UEs are simulated.
    """
    var = ls_error_variance(pilot_power, pilot_len, noise_power)
    out = true_channel.copy()
    shape = (true_channel.n_ue, true_channel.n_tx)
    std = math.sqrt(var / 2.0)
    for u in range(true_channel.n_users):
        for m in range(true_channel.n_aps):
            g = rng_for_block(u, m)
            e = std * (g.standard_normal(shape) + 1j * g.standard_normal(shape))
            out.set_block(u, m, true_channel.block(u, m) + e)
    return out
