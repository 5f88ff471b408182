"""2D maze with sphere walls, distance queries, repulsive guide force.

The course is a serpentine first part (tight corridor, many hairpins)
followed by a gentle sweep to the goal (wide corridor, sparse walls).
All distances are surface-to-surface and include the cursor radius, so a
collision is exactly a negative clearance.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._util import sha256_of
from .errors import ConfigurationError, SimulationRateError

PART1 = 1
PART2 = 2

# Arc length of upcoming centerline inspected for curvature, and the turn
# (a quarter circle) that rates as maximal difficulty.
CURVATURE_WINDOW = 80.0
CURVATURE_REF = math.pi / 2.0


@dataclass(frozen=True)
class GuideLaw:
    """Repulsive wall force: k*(1/d - 1/d_cut) on (d_min, d_cut], capped below
    d_min, zero beyond d_cut.  Continuous at the cutoff by construction."""

    d_cut: float = 40.0
    d_min: float = 2.0
    k: float = 360.0

    def magnitude(self, d: float) -> float:
        if d > self.d_cut:
            return 0.0
        d_eff = max(d, self.d_min)
        return self.k * (1.0 / d_eff - 1.0 / self.d_cut)


@dataclass
class SceneSpec:
    """Free layout parameters; every default is a declared choice."""

    width: float = 1024.0
    height: float = 768.0
    wall_radius: float = 12.0
    cursor_radius: float = 8.0
    corridor_part1: float = 60.0
    corridor_part2: float = 90.0
    wall_spacing_part1: float = 26.0
    wall_spacing_part2: float = 60.0
    n_legs: int = 7
    leg_x0: float = 70.0
    leg_dx: float = 100.0
    leg_y_top: float = 130.0
    leg_y_bottom: float = 530.0
    part2_points: tuple = ((685.0, 95.0), (780.0, 75.0), (865.0, 120.0),
                           (905.0, 225.0), (930.0, 355.0), (950.0, 490.0),
                           (960.0, 620.0))
    resample_step: float = 4.0
    goal_radius: float = 18.0
    wall_jitter: float = 1.0

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "wall_radius": self.wall_radius, "cursor_radius": self.cursor_radius,
            "corridor_part1": self.corridor_part1, "corridor_part2": self.corridor_part2,
            "wall_spacing_part1": self.wall_spacing_part1,
            "wall_spacing_part2": self.wall_spacing_part2,
            "n_legs": self.n_legs, "leg_x0": self.leg_x0, "leg_dx": self.leg_dx,
            "leg_y_top": self.leg_y_top, "leg_y_bottom": self.leg_y_bottom,
            "part2_points": [list(p) for p in self.part2_points],
            "resample_step": self.resample_step, "goal_radius": self.goal_radius,
            "wall_jitter": self.wall_jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "part2_points" in d:
            d["part2_points"] = tuple(tuple(p) for p in d["part2_points"])
        return cls(**d)


@dataclass
class CollisionEvent:
    time: float
    wall: int
    position: tuple


@dataclass
class Cursor:
    position: np.ndarray
    radius: float = 8.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))


class Scene:
    """Immutable maze geometry plus precomputed path tables."""

    def __init__(self, spec: SceneSpec, seed: int, walls: np.ndarray,
                 wall_parts: np.ndarray, centerline: np.ndarray, part_boundary: int):
        self.spec = spec
        self.seed = seed
        self.width = spec.width
        self.height = spec.height
        self.wall_radius = spec.wall_radius
        self.cursor_radius = spec.cursor_radius
        self.walls = walls
        self.wall_parts = wall_parts
        self.centerline = centerline
        self.part_boundary = part_boundary
        self.start = centerline[0].copy()
        self.goal = centerline[-1].copy()
        self.goal_radius = spec.goal_radius

        seg = np.diff(centerline, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.arc = np.r_[0.0, np.cumsum(seg_len)]
        heading = np.arctan2(seg[:, 1], seg[:, 0])
        turn = np.abs(np.angle(np.exp(1j * np.diff(heading))))
        prefix = np.r_[0.0, np.cumsum(turn)]  # prefix[m] = turn through interior point m
        # total |turn| within the next CURVATURE_WINDOW px of path
        n = len(centerline)
        ahead = np.searchsorted(self.arc, self.arc + CURVATURE_WINDOW, side="right") - 1
        ahead = np.clip(ahead, 0, n - 1)
        hi = np.clip(ahead - 1, 0, len(prefix) - 1)
        lo = np.clip(np.arange(n), 0, len(prefix) - 1)
        self.turn_norm = np.clip((prefix[hi] - prefix[lo]) / CURVATURE_REF, 0.0, 1.0)

    # ---------------------------------------------------------------- queries

    def nearest_centerline_index(self, p) -> int:
        d = self.centerline - np.asarray(p, dtype=float)
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def lookahead_point(self, p, distance: float) -> np.ndarray:
        i = self.nearest_centerline_index(p)
        target_arc = self.arc[i] + distance
        j = int(np.searchsorted(self.arc, target_arc))
        return self.centerline[min(j, len(self.centerline) - 1)]

    def contains(self, p) -> bool:
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height

    def clamp(self, p) -> np.ndarray:
        return np.clip(p, [0.0, 0.0], [self.width, self.height])

    # ------------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "walls": [[round(float(x), 6), round(float(y), 6)] for x, y in self.walls],
            "wall_parts": self.wall_parts.tolist(),
            "wall_radius": self.wall_radius,
            "cursor_radius": self.cursor_radius,
            "centerline": [[round(float(x), 6), round(float(y), 6)]
                           for x, y in self.centerline],
            "part_boundary": int(self.part_boundary),
            "start": [float(self.start[0]), float(self.start[1])],
            "goal": [float(self.goal[0]), float(self.goal[1])],
            "goal_radius": self.goal_radius,
            "width": self.width,
            "height": self.height,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def content_hash(self) -> str:
        return sha256_of(self.to_dict())


def _resample_polyline(points: np.ndarray, step: float) -> np.ndarray:
    seg = np.diff(points, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    arc = np.r_[0.0, np.cumsum(seg_len)]
    total = arc[-1]
    targets = np.arange(0.0, total, step)
    targets = np.r_[targets, total]
    out = np.empty((len(targets), 2))
    out[:, 0] = np.interp(targets, arc, points[:, 0])
    out[:, 1] = np.interp(targets, arc, points[:, 1])
    return out


def _catmull_rom(points: np.ndarray, per_segment: int = 24) -> np.ndarray:
    """Smooth interpolating curve through the control points."""
    pts = np.vstack([points[0], points, points[-1]])
    out = []
    for i in range(1, len(pts) - 2):
        p0, p1, p2, p3 = pts[i - 1], pts[i], pts[i + 1], pts[i + 2]
        t = np.linspace(0.0, 1.0, per_segment, endpoint=False)[:, None]
        out.append(0.5 * ((2 * p1) + (-p0 + p2) * t
                          + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t**2
                          + (-p0 + 3 * p1 - 3 * p2 + p3) * t**3))
    out.append(points[-1][None])
    return np.vstack(out)


def _serpentine(spec: SceneSpec) -> np.ndarray:
    """Vertical legs joined by semicircular hairpins, left to right."""
    pts = []
    r = spec.leg_dx / 2.0
    for leg in range(spec.n_legs):
        x = spec.leg_x0 + leg * spec.leg_dx
        going_up = leg % 2 == 0
        y0, y1 = ((spec.leg_y_bottom, spec.leg_y_top) if going_up
                  else (spec.leg_y_top, spec.leg_y_bottom))
        ys = np.linspace(y0, y1, 60)
        pts.extend((x, y) for y in ys)
        if leg == spec.n_legs - 1:
            break
        cx = x + r
        cy = spec.leg_y_top if going_up else spec.leg_y_bottom
        sign = -1.0 if going_up else 1.0
        for theta in np.linspace(math.pi, 0.0, 30)[1:-1]:
            pts.append((cx + r * math.cos(theta), cy + sign * r * math.sin(theta)))
    return np.asarray(pts)


def build_scene(spec: SceneSpec = None, seed: int = 0) -> Scene:
    """Deterministic scene construction from the layout parameters."""
    spec = spec or SceneSpec()
    for name, corridor in (("part1", spec.corridor_part1), ("part2", spec.corridor_part2)):
        free = corridor - 2.0 * spec.wall_radius
        if free < 2.0 * spec.cursor_radius:
            raise ConfigurationError(
                f"{name} corridor {corridor} px leaves {free:.0f} px between walls, "
                f"narrower than the cursor diameter {2 * spec.cursor_radius:.0f} px")

    part1_raw = _serpentine(spec)
    part1 = _resample_polyline(part1_raw, spec.resample_step)
    part2_ctrl = np.vstack([part1_raw[-1], np.asarray(spec.part2_points)])
    part2 = _resample_polyline(_catmull_rom(part2_ctrl), spec.resample_step)[1:]
    centerline = np.vstack([part1, part2])
    part_boundary = len(part1)

    rng = np.random.default_rng(seed)
    walls = []
    wall_parts = []
    for part, pts, corridor, spacing in (
        (PART1, part1, spec.corridor_part1, spec.wall_spacing_part1),
        (PART2, part2, spec.corridor_part2, spec.wall_spacing_part2),
    ):
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        arc = np.r_[0.0, np.cumsum(seg_len)]
        stations = np.arange(0.0, arc[-1], spacing)
        idx = np.clip(np.searchsorted(arc, stations), 0, len(seg) - 1)
        tangents = seg[idx] / seg_len[idx][:, None]
        normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
        base = np.column_stack([np.interp(stations, arc, pts[:, 0]),
                                np.interp(stations, arc, pts[:, 1])])
        for side in (+1.0, -1.0):
            jitter = rng.uniform(-spec.wall_jitter, spec.wall_jitter, size=(len(base), 2))
            walls.append(base + side * normals * (corridor / 2.0) + jitter)
            wall_parts.append(np.full(len(base), part, dtype=int))
    walls = np.vstack(walls)
    wall_parts = np.concatenate(wall_parts)

    inside = ((walls[:, 0] >= spec.wall_radius)
              & (walls[:, 0] <= spec.width - spec.wall_radius)
              & (walls[:, 1] >= spec.wall_radius)
              & (walls[:, 1] <= spec.height - spec.wall_radius))
    walls, wall_parts = walls[inside], wall_parts[inside]
    # never let a wall crowd the path: keep a one-pixel margin beyond the
    # wall-plus-cursor contact distance to every centerline point
    d2 = ((walls[:, None, :] - centerline[None, :, :]) ** 2).sum(axis=2)
    keep = np.sqrt(d2.min(axis=1)) >= spec.wall_radius + spec.cursor_radius + 1.0
    walls, wall_parts = walls[keep], wall_parts[keep]

    return Scene(spec, seed, walls, wall_parts, centerline, part_boundary)


def nearest_wall_distance(scene: Scene, p):
    """(clearance, wall index, nearest surface point); exact over all walls.

    Clearance is surface-to-surface including the cursor radius and is
    negative when the cursor disk overlaps a wall.
    """
    if len(scene.walls) == 0:
        raise ValueError("scene has no walls to query")
    p = np.asarray(p, dtype=float)
    d = scene.walls - p
    dist = np.hypot(d[:, 0], d[:, 1])
    i = int(np.argmin(dist))
    center_dist = dist[i]
    clearance = center_dist - scene.wall_radius - scene.cursor_radius
    if center_dist > 0:
        direction = (p - scene.walls[i]) / center_dist
    else:
        direction = np.array([1.0, 0.0])
    surface = scene.walls[i] + direction * scene.wall_radius
    return float(clearance), i, surface


def guide_force(law: GuideLaw, scene: Scene, p) -> np.ndarray:
    """Velocity contribution pushing the cursor away from the nearest wall."""
    clearance, i, _ = nearest_wall_distance(scene, p)
    mag = law.magnitude(clearance)
    if mag == 0.0:
        return np.zeros(2)
    p = np.asarray(p, dtype=float)
    offset = p - scene.walls[i]
    norm = np.hypot(offset[0], offset[1])
    direction = offset / norm if norm > 0 else np.array([1.0, 0.0])
    return mag * direction


class CollisionDetector:
    """One event per contact episode; re-arms once clearance exceeds 2 px."""

    REARM_CLEARANCE = 2.0

    def __init__(self, scene: Scene):
        self.scene = scene
        self._armed = True
        self._last = None

    def update(self, time: float, p):
        p = np.asarray(p, dtype=float)
        if self._last is not None:
            step = np.hypot(*(p - self._last))
            if step > self.scene.cursor_radius:
                raise SimulationRateError(
                    f"step of {step:.1f} px exceeds the cursor radius "
                    f"{self.scene.cursor_radius} px; sample the trajectory faster")
        self._last = p
        clearance, wall, _ = nearest_wall_distance(self.scene, p)
        if self._armed and clearance < 0.0:
            self._armed = False
            return CollisionEvent(time=time, wall=wall, position=(float(p[0]), float(p[1])))
        if not self._armed and clearance > self.REARM_CLEARANCE:
            self._armed = True
        return None


def detect_collisions(scene: Scene, trajectory, dt: float = 0.01, t0: float = 0.0) -> list:
    """Run the hysteresis detector over a (n, 2) position trajectory."""
    detector = CollisionDetector(scene)
    events = []
    for i, p in enumerate(np.asarray(trajectory, dtype=float)):
        ev = detector.update(t0 + i * dt, p)
        if ev is not None:
            events.append(ev)
    return events


def classify_part(scene: Scene, p) -> int:
    """Part of the nearest centerline point; exact ties go to part 2."""
    p = np.asarray(p, dtype=float)
    d = scene.centerline - p
    d2 = np.einsum("ij,ij->i", d, d)
    d1_min = d2[:scene.part_boundary].min()
    d2_min = d2[scene.part_boundary:].min()
    return PART2 if d2_min <= d1_min else PART1
