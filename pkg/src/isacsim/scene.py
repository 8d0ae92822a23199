"""Planar scene geometry: target surfaces, scatterers, blockage and mirror paths.

All angles are global polar angles in [0, 2*pi). The target is a rectangle whose
four surfaces are returned counter-clockwise, so the outward normal of a
surface is the right-hand normal of its direction vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

TAU = 2.0 * math.pi
SPEED_OF_LIGHT = 3.0e8
_EPS = 1e-12


class Point2D(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Surface:
    p_start: Point2D
    p_end: Point2D
    id: int

    def __post_init__(self):
        if self.p_start == self.p_end:
            raise ValueError(f"surface {self.id} has coincident endpoints")

    @property
    def direction(self) -> tuple[float, float]:
        return self.p_end.x - self.p_start.x, self.p_end.y - self.p_start.y

    @property
    def length(self) -> float:
        return math.hypot(*self.direction)


@dataclass(frozen=True)
class TargetState:
    """Pose of the extended target.

    ``heading`` must be a unit vector; ``length`` runs along it. Zero
    dimensions are accepted so a point target can be expressed, but such a
    target has no surfaces.
    """

    centroid: Point2D
    heading: tuple[float, float]
    speed: float
    length: float
    width: float

    def __post_init__(self):
        object.__setattr__(self, "centroid", Point2D(*self.centroid))
        object.__setattr__(self, "heading", (float(self.heading[0]), float(self.heading[1])))
        if not (math.isfinite(self.centroid.x) and math.isfinite(self.centroid.y)):
            raise ValueError("target centroid must be finite")
        if abs(math.hypot(*self.heading) - 1.0) > 1e-9:
            raise ValueError(f"heading {self.heading} is not a unit vector")
        if self.speed < 0:
            raise ValueError("target speed must be non-negative")
        if self.length < 0 or self.width < 0:
            raise ValueError("target dimensions must be non-negative")

    @property
    def heading_angle(self) -> float:
        return math.atan2(self.heading[1], self.heading[0]) % TAU

    def moved_to(self, centroid: Point2D) -> "TargetState":
        return TargetState(Point2D(*centroid), self.heading, self.speed, self.length, self.width)


@dataclass(frozen=True)
class SurfaceReflectionProps:
    """Known reflection prior of a target surface (phase, reflectances, efficiency)."""

    phase_shift: float = math.pi
    specular: float = 0.7
    diffuse: float = 0.2
    efficiency: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.specular < 1.0 and 0.0 < self.diffuse < 1.0):
            raise ValueError("specular and diffuse reflectances must lie in (0, 1)")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("reflection efficiency must lie in [0, 1]")


@dataclass(frozen=True)
class AccessPoint:
    position: Point2D
    n_tx: int
    n_rx: int
    tx_power: float
    broadside: float = 0.0  # global angle the ULA broadside faces

    def __post_init__(self):
        object.__setattr__(self, "position", Point2D(*self.position))
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.tx_power <= 0:
            raise ValueError("tx_power must be positive")


@dataclass(frozen=True)
class UserEquipment:
    position: Point2D
    n_ant: int
    broadside: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", Point2D(*self.position))
        if self.n_ant < 1:
            raise ValueError("n_ant must be >= 1")


@dataclass(frozen=True)
class Scene:
    """Static world: room, AP and UE rosters, target dimensions and physical constants."""

    room_size: float
    aps: tuple[AccessPoint, ...]
    ues: tuple[UserEquipment, ...]
    carrier_freq: float
    target_length: float
    target_width: float
    reflection: SurfaceReflectionProps = field(default_factory=SurfaceReflectionProps)
    beam_floor: float = 0.05
    path_loss: str = "none"
    path_gain_db: float = 0.0

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    def contains(self, p: Point2D) -> bool:
        return 0.0 <= p.x <= self.room_size and 0.0 <= p.y <= self.room_size



def broadside_towards(position: Point2D, room_size: float) -> float:
    """Global angle from ``position`` to the room centre (0 when already there)."""
    cx = cy = room_size / 2.0
    if math.isclose(position[0], cx) and math.isclose(position[1], cy):
        return 0.0
    return angle_of(position, Point2D(cx, cy))


@dataclass(frozen=True)
class AngularRange:
    a_low: float
    a_high: float
    wraps: bool

    def contains(self, angle: float) -> bool:
        if self.wraps:
            return angle >= self.a_low or angle < self.a_high
        return self.a_low <= angle < self.a_high


def angle_of(observer: Sequence[float], target: Sequence[float]) -> float:
    dx = target[0] - observer[0]
    dy = target[1] - observer[1]
    if dx == 0.0 and dy == 0.0:
        raise ValueError("angle undefined for coincident points")
    a = math.atan2(dy, dx) % TAU
    # tiny negative atan2 results round up to exactly TAU
    return 0.0 if a >= TAU else a


def _cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def _side(s: Surface, p: Sequence[float]) -> float:
    dx, dy = s.direction
    return _cross(dx, dy, p[0] - s.p_start.x, p[1] - s.p_start.y)


def point_on_segment(p: Sequence[float], s: Surface, tol: float = _EPS) -> bool:
    dx, dy = s.direction
    rx, ry = p[0] - s.p_start.x, p[1] - s.p_start.y
    scale = max(s.length, 1.0)
    if abs(_cross(dx, dy, rx, ry)) > tol * scale * scale:
        return False
    t = (rx * dx + ry * dy) / (dx * dx + dy * dy)
    return -tol <= t <= 1.0 + tol


def target_surfaces(t: TargetState) -> list[Surface]:
    """Four surfaces of the target rectangle, counter-clockwise, front surface first."""
    ux, uy = t.heading
    nx, ny = -uy, ux
    hl, hw = t.length / 2.0, t.width / 2.0
    cx, cy = t.centroid
    corners = [
        Point2D(cx + hl * ux - hw * nx, cy + hl * uy - hw * ny),
        Point2D(cx + hl * ux + hw * nx, cy + hl * uy + hw * ny),
        Point2D(cx - hl * ux + hw * nx, cy - hl * uy + hw * ny),
        Point2D(cx - hl * ux - hw * nx, cy - hl * uy - hw * ny),
    ]
    return [Surface(corners[i], corners[(i + 1) % 4], i + 1) for i in range(4)]


def _grid_shape(k: int, aspect: float) -> tuple[int, int]:
    # factor pair (cols, rows) of k whose ratio best matches length/width
    best = (k, 1)
    best_err = math.inf
    for rows in range(1, k + 1):
        if k % rows:
            continue
        cols = k // rows
        err = abs(math.log(cols / rows) - math.log(aspect)) if aspect > 0 else cols
        if err < best_err:
            best, best_err = (cols, rows), err
    return best


def scatterer_positions(
    t: TargetState, k: int, rng: np.random.Generator | None = None, layout: str = "uniform"
) -> np.ndarray:
    """Return a ``(k, 2)`` array of scatterer positions inside the target rectangle.

    ``layout="uniform"`` draws i.i.d. points with ``rng``; ``layout="grid"``
    places cell centres of a regular grid whose mean is exactly the centroid.
    """
    if k < 1:
        raise ValueError("need at least one scatterer")
    if layout == "uniform":
        if rng is None:
            raise ValueError("uniform scatterer layout needs an rng")
        local = rng.uniform(-0.5, 0.5, size=(k, 2)) * np.array([t.length, t.width])
    elif layout == "grid":
        aspect = t.length / t.width if t.width > 0 else float(k)
        cols, rows = _grid_shape(k, aspect)
        gx = (np.arange(cols) + 0.5) / cols - 0.5
        gy = (np.arange(rows) + 0.5) / rows - 0.5
        xx, yy = np.meshgrid(gx * t.length, gy * t.width, indexing="ij")
        local = np.column_stack([xx.ravel(), yy.ravel()])
    else:
        raise ValueError(f"unknown scatterer layout {layout!r}")
    ux, uy = t.heading
    rot = np.array([[ux, -uy], [uy, ux]])
    return local @ rot.T + np.asarray(t.centroid, dtype=float)


def angular_range(s: Surface, observer: Sequence[float]) -> AngularRange:
    """Minor arc subtended by ``s`` as seen from ``observer``."""
    if point_on_segment(observer, s):
        raise ValueError("observer lies on the surface")
    a1 = angle_of(observer, s.p_start)
    a2 = angle_of(observer, s.p_end)
    span = (a2 - a1) % TAU
    if span <= math.pi:
        low, high = a1, a2
    else:
        low, high = a2, a1
    return AngularRange(low, high, low > high)


def _ray_hit_distance(origin: Sequence[float], angle: float, s: Surface) -> float:
    """Distance along the ray from ``origin`` at ``angle`` to the line through ``s``."""
    rx, ry = math.cos(angle), math.sin(angle)
    dx, dy = s.direction
    denom = _cross(rx, ry, dx, dy)
    if abs(denom) < _EPS:
        # ray parallel to the surface: nearest endpoint is the first contact
        return min(math.dist(origin, s.p_start), math.dist(origin, s.p_end))
    wx, wy = s.p_start.x - origin[0], s.p_start.y - origin[1]
    return _cross(wx, wy, dx, dy) / denom


def los_exists_angular(ap: AccessPoint, ue: UserEquipment, t: TargetState) -> bool:
    """Purely angular blockage test: LoS iff the UE angle is outside every surface range.

    Misclassifies a UE sitting between the AP and the target; kept for
    comparison with :func:`los_exists`.
    """
    theta = angle_of(ap.position, ue.position)
    return not any(angular_range(s, ap.position).contains(theta) for s in target_surfaces(t))


def los_exists(
    ap: AccessPoint, ue: UserEquipment, t: TargetState, surfaces: Sequence[Surface] | None = None
) -> bool:
    """Angular blockage test with a distance guard.

    A surface blocks only if the UE angle falls in its range and the surface
    is hit before the UE along the AP->UE ray.
    """
    if t.length == 0.0 or t.width == 0.0:
        return True
    theta = angle_of(ap.position, ue.position)
    dist = math.dist(ap.position, ue.position)
    for s in surfaces or target_surfaces(t):
        if point_on_segment(ap.position, s):
            return False
        if angular_range(s, ap.position).contains(theta):
            if _ray_hit_distance(ap.position, theta, s) < dist:
                return False
    return True


def mirror_point(p: Sequence[float], s: Surface) -> Point2D:
    dx, dy = s.direction
    rx, ry = p[0] - s.p_start.x, p[1] - s.p_start.y
    t = (rx * dx + ry * dy) / (dx * dx + dy * dy)
    fx, fy = s.p_start.x + t * dx, s.p_start.y + t * dy
    return Point2D(2.0 * fx - p[0], 2.0 * fy - p[1])


def segments_cross(p1: Sequence[float], p2: Sequence[float], q1: Sequence[float], q2: Sequence[float]) -> bool:
    """Proper intersection of two segments; touching endpoints does not count."""
    d1 = _cross(q2[0] - q1[0], q2[1] - q1[1], p1[0] - q1[0], p1[1] - q1[1])
    d2 = _cross(q2[0] - q1[0], q2[1] - q1[1], p2[0] - q1[0], p2[1] - q1[1])
    d3 = _cross(p2[0] - p1[0], p2[1] - p1[1], q1[0] - p1[0], q1[1] - p1[1])
    d4 = _cross(p2[0] - p1[0], p2[1] - p1[1], q2[0] - p1[0], q2[1] - p1[1])
    return d1 * d2 < 0 and d3 * d4 < 0


def reflection_point(
    ap: Sequence[float],
    ue: Sequence[float],
    s: Surface,
    t: TargetState,
    surfaces: Sequence[Surface] | None = None,
) -> Optional[Point2D]:
    """Specular reflection point of the path ``ap -> s -> ue``, or ``None``.

    Both ends must lie strictly on the outer side of ``s`` (the side away from
    the target centroid), the mirror-image intersection must fall on the
    segment, and neither leg may cross another target surface.
    """
    side_ap = _side(s, ap)
    side_ue = _side(s, ue)
    side_c = _side(s, t.centroid)
    if side_ap == 0.0 or side_ue == 0.0:
        return None
    if (side_ap > 0) != (side_ue > 0) or (side_c > 0) == (side_ap > 0):
        return None
    image = mirror_point(ue, s)
    dx, dy = s.direction
    ex, ey = image.x - ap[0], image.y - ap[1]
    denom = _cross(ex, ey, dx, dy)
    if denom == 0.0:
        return None
    wx, wy = s.p_start.x - ap[0], s.p_start.y - ap[1]
    u = _cross(wx, wy, ex, ey) / denom
    if u < 0.0 or u > 1.0:
        return None
    p = Point2D(s.p_start.x + u * dx, s.p_start.y + u * dy)
    for other in surfaces or target_surfaces(t):
        if other.id == s.id:
            continue
        if segments_cross(ap, p, other.p_start, other.p_end) or segments_cross(p, ue, other.p_start, other.p_end):
            return None
    return p
