"""Procedural box worlds with an exact RGB-D capture oracle.

A world is a list of axis-aligned boxes. Closed rooms are six slabs (floor,
ceiling, four walls) around an interior volume; obstacles are boxes standing
on the floor next to the payload path.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import FAR_DEPTH, Camera, Path, Pose, RgbdImage, as_vec3, look_at
from .fisher import CandidateSet
from .risk import DistanceDistribution, check_eps, avar_many

LIGHT_DIR = np.array([0.35, 0.25, 1.0]) / np.linalg.norm([0.35, 0.25, 1.0])
AMBIENT = 0.3
DEFAULT_SIGMA_HAT = 1e-3


class InfeasibleRecipeError(RuntimeError):
    pass


class EmptyCloudError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    color: tuple = (0.7, 0.7, 0.7)
    kind: str = "obstacle"

    def __post_init__(self):
        lo, hi = as_vec3(self.lo), as_vec3(self.hi)
        if np.any(hi <= lo):
            raise ValueError(f"degenerate box {lo} {hi}")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from ``(..., 3)`` points to the box (0 inside)."""
        p = np.asarray(points, dtype=float)
        d = np.maximum(np.maximum(np.asarray(self.lo) - p, p - np.asarray(self.hi)), 0.0)
        return np.linalg.norm(d, axis=-1)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.all((p >= np.asarray(self.lo) - margin) & (p <= np.asarray(self.hi) + margin),
                      axis=-1)

    def faces(self):
        """Yield ``(axis, value, outward_sign)`` for the six faces."""
        for axis in range(3):
            yield axis, self.lo[axis], -1.0
            yield axis, self.hi[axis], 1.0

    def transformed(self, offset) -> "Box":
        o = as_vec3(offset)
        return Box(tuple(np.add(self.lo, o)), tuple(np.add(self.hi, o)), self.color, self.kind)


@dataclass
class SceneRecipe:
    """Parameters of a procedural world.

    The room interior spans ``[0, room]``; slabs of ``wall_thickness`` sit
    outside it. Obstacles are placed beside random points of the path with a
    gap drawn from ``gap_range`` and must keep ``clearance`` from every path
    segment.
    """

    room: tuple = (10.0, 10.0, 3.0)
    closed: bool = True
    wall_thickness: float = 0.1
    obstacle_count: int = 0
    obstacle_footprint: tuple = (0.3, 0.8)
    obstacle_height: tuple = (0.8, 1.8)
    gap_range: tuple = (0.1, 0.4)
    clearance: float = 0.05
    distractor_count: int = 0
    distractor_clearance: float = 1.0
    waypoints: list = field(default_factory=list)
    initial_eye: tuple = (0.3, 0.3, 1.5)
    initial_target: tuple = (3.0, 3.0, 0.8)
    gt_density: float = 1000.0
    sigma_hat: float = DEFAULT_SIGMA_HAT
    max_tries: int = 2000

    @property
    def path(self) -> Path:
        return Path(self.waypoints)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["room"] = list(self.room)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecipe":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("room", "obstacle_footprint", "obstacle_height", "gap_range",
                  "initial_eye", "initial_target"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def empty_room(dims=(10.0, 10.0, 3.0)) -> SceneRecipe:
    return SceneRecipe(room=tuple(dims), obstacle_count=0,
                       waypoints=[[dims[0] / 2, dims[1] / 2, 0.5]])


def standard_room() -> SceneRecipe:
    """The default 6 x 5 x 2.5 m room used for paired experiments."""
    xs = np.linspace(1.0, 5.0, 10)
    ys = 1.2 + 2.6 * (xs - 1.0) / 4.0 + 0.5 * np.sin((xs - 1.0) * np.pi / 2.0)
    waypoints = [[float(x), float(y), 0.6] for x, y in zip(xs, ys)]
    return SceneRecipe(room=(6.0, 5.0, 2.5), obstacle_count=6,
                       obstacle_footprint=(0.3, 0.7), obstacle_height=(0.9, 1.8),
                       gap_range=(0.08, 0.3), clearance=0.06, distractor_count=4,
                       waypoints=waypoints,
                       initial_eye=(0.4, 0.4, 1.6), initial_target=(3.0, 2.5, 0.6))


@dataclass(frozen=True)
class GroundTruthWorld:
    primitives: tuple
    interior: Box | None = None

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("a world needs at least one primitive")

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([p.lo for p in self.primitives], axis=0)
        hi = np.max([p.hi for p in self.primitives], axis=0)
        return lo, hi

    @property
    def obstacles(self) -> list:
        return [p for p in self.primitives if p.kind == "obstacle"]

    def is_free(self, points, margin: float = 0.05) -> np.ndarray:
        """Points outside every primitive and, for rooms, inside the interior."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        free = np.ones(len(p), dtype=bool)
        if self.interior is not None:
            lo = np.asarray(self.interior.lo) + margin
            hi = np.asarray(self.interior.hi) - margin
            free &= np.all((p >= lo) & (p <= hi), axis=1)
        for prim in self.primitives:
            free &= ~prim.contains(p, margin)
        return free

    def transformed(self, offset) -> "GroundTruthWorld":
        return GroundTruthWorld(tuple(p.transformed(offset) for p in self.primitives),
                                None if self.interior is None else self.interior.transformed(offset))

    def to_dict(self) -> dict:
        return {"primitives": [asdict(p) for p in self.primitives],
                "interior": None if self.interior is None else asdict(self.interior)}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthWorld":
        interior = d.get("interior")
        return cls(tuple(Box(**p) for p in d["primitives"]),
                   None if interior is None else Box(**interior))


def _room_slabs(room, thickness: float) -> list[Box]:
    X, Y, Z = room
    t = thickness
    wall = (0.82, 0.80, 0.74)
    return [
        Box((-t, -t, -t), (X + t, Y + t, 0.0), (0.55, 0.45, 0.35), "floor"),
        Box((-t, -t, Z), (X + t, Y + t, Z + t), (0.9, 0.9, 0.9), "ceiling"),
        Box((-t, -t, 0.0), (0.0, Y + t, Z), wall, "wall"),
        Box((X, -t, 0.0), (X + t, Y + t, Z), wall, "wall"),
        Box((0.0, -t, 0.0), (X, 0.0, Z), (0.75, 0.80, 0.85), "wall"),
        Box((0.0, Y, 0.0), (X, Y + t, Z), (0.85, 0.78, 0.70), "wall"),
    ]


def segment_box_distance(a, b, box: Box) -> float:
    """Exact minimum distance between segment ``ab`` and ``box``.

    The distance along the segment is convex, so golden-section search
    converges to the global minimum.
    """
    a, b = as_vec3(a), as_vec3(b)
    f = lambda t: float(box.distance(a + t * (b - a)))
    lo, hi = 0.0, 1.0
    g = (math.sqrt(5) - 1) / 2
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(80):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = f(x2)
    return min(f(0.0), f(1.0), f1, f2)


def path_clearance(waypoints, box: Box) -> float:
    w = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    if len(w) == 1:
        return float(box.distance(w[0]))
    return min(segment_box_distance(w[i], w[i + 1], box) for i in range(len(w) - 1))


def _boxes_overlap(a: Box, b: Box, margin: float) -> bool:
    return bool(np.all(np.asarray(a.lo) - margin < np.asarray(b.hi))
                and np.all(np.asarray(b.lo) - margin < np.asarray(a.hi)))


def build_world(recipe: SceneRecipe, seed: int = 0) -> GroundTruthWorld:
    rng = np.random.default_rng(seed)
    prims: list[Box] = []
    interior = None
    if recipe.closed:
        prims.extend(_room_slabs(recipe.room, recipe.wall_thickness))
        interior = Box((0.0, 0.0, 0.0), tuple(recipe.room), kind="interior")
    if recipe.obstacle_count == 0 and recipe.distractor_count == 0:
        if not prims:
            raise InfeasibleRecipeError("recipe produces an empty world")
        return GroundTruthWorld(tuple(prims), interior)
    w = np.asarray(recipe.waypoints, dtype=float).reshape(-1, 3)
    if len(w) == 0:
        raise InfeasibleRecipeError("obstacle placement needs path waypoints")
    X, Y, _ = recipe.room
    obstacles: list[Box] = []
    tries = 0
    while len(obstacles) < recipe.obstacle_count:
        tries += 1
        if tries > recipe.max_tries:
            raise InfeasibleRecipeError(
                f"placed {len(obstacles)} of {recipe.obstacle_count} obstacles in "
                f"{recipe.max_tries} tries")
        if len(w) > 1:
            i = rng.integers(len(w) - 1)
            t = rng.uniform()
            q = w[i] + t * (w[i + 1] - w[i])
            seg = w[i + 1] - w[i]
            normal = np.array([-seg[1], seg[0], 0.0])
        else:
            q = w[0]
            normal = np.zeros(3)
        if np.linalg.norm(normal) < 1e-9:
            ang = rng.uniform(0, 2 * np.pi)
            normal = np.array([np.cos(ang), np.sin(ang), 0.0])
        normal /= np.linalg.norm(normal)
        if rng.uniform() < 0.5:
            normal = -normal
        half = 0.5 * rng.uniform(*recipe.obstacle_footprint, size=2)
        height = rng.uniform(*recipe.obstacle_height)
        gap = rng.uniform(*recipe.gap_range)
        reach = abs(normal[0]) * half[0] + abs(normal[1]) * half[1]
        c = q + normal * (gap + reach)
        box = Box((c[0] - half[0], c[1] - half[1], 0.0), (c[0] + half[0], c[1] + half[1], height),
                  tuple(rng.uniform(0.15, 0.95, size=3)), "obstacle")
        if recipe.closed and (box.lo[0] < 0 or box.lo[1] < 0 or box.hi[0] > X or box.hi[1] > Y
                              or height > recipe.room[2]):
            continue
        if path_clearance(w, box) < recipe.clearance:
            continue
        if any(_boxes_overlap(box, o, 0.05) for o in obstacles):
            continue
        obstacles.append(box)
    placed = 0
    while placed < recipe.distractor_count:
        tries += 1
        if tries > recipe.max_tries:
            raise InfeasibleRecipeError(
                f"placed {placed} of {recipe.distractor_count} distractors")
        half = 0.5 * rng.uniform(*recipe.obstacle_footprint, size=2)
        height = rng.uniform(*recipe.obstacle_height)
        c = rng.uniform([half[0], half[1]], [X - half[0], Y - half[1]])
        box = Box((c[0] - half[0], c[1] - half[1], 0.0), (c[0] + half[0], c[1] + half[1], height),
                  tuple(rng.uniform(0.15, 0.95, size=3)), "obstacle")
        if path_clearance(w, box) < recipe.distractor_clearance:
            continue
        if any(_boxes_overlap(box, o, 0.05) for o in obstacles):
            continue
        obstacles.append(box)
        placed += 1
    return GroundTruthWorld(tuple(prims + obstacles), interior)


def cast_rays(world: GroundTruthWorld, origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit along ``origins + t * dirs`` (``t > 0``) for each ray.

    Returns ``(t, primitive_index, normal)``; misses give ``t = inf`` and index -1.
    ``dirs`` need not be unit length; ``t`` is in units of ``dirs``.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    d = np.where(np.abs(d) < 1e-15, 1e-15, d)
    inv = 1.0 / d
    lo = np.array([p.lo for p in world.primitives])
    hi = np.array([p.hi for p in world.primitives])
    t1 = (lo[None] - o[:, None]) * inv[:, None]
    t2 = (hi[None] - o[:, None]) * inv[:, None]
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    t_enter = tmin.max(axis=2)
    t_exit = tmax.min(axis=2)
    eps = 1e-9
    hit_enter = (t_enter <= t_exit) & (t_enter > eps)
    hit_exit = (t_enter <= t_exit) & (t_enter <= eps) & (t_exit > eps)
    t_hit = np.where(hit_enter, t_enter, np.where(hit_exit, t_exit, np.inf))
    prim = np.argmin(t_hit, axis=1)
    rows = np.arange(len(o))
    t = t_hit[rows, prim]
    entering = hit_enter[rows, prim]
    axis = np.where(entering, tmin[rows, prim].argmax(axis=1), tmax[rows, prim].argmin(axis=1))
    dir_axis = d[rows, axis]
    sign = np.where(entering, -np.sign(dir_axis), np.sign(dir_axis))
    normal = np.zeros_like(o)
    normal[rows, axis] = sign
    miss = ~np.isfinite(t)
    prim = np.where(miss, -1, prim)
    return t, prim, normal


def capture_rgbd(world: GroundTruthWorld, pose: Pose, camera: Camera,
                 far: float = FAR_DEPTH) -> RgbdImage:
    """Ray-cast RGB-D image; depth is camera-frame z, ``far`` where nothing is hit."""
    dirs_cam = camera.ray_directions().reshape(-1, 3)
    dirs = dirs_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape)
    # camera-frame z of the hit equals t because every direction has unit z
    t, prim, normal = cast_rays(world, origins, dirs)
    colors = np.array([p.color for p in world.primitives])
    shade = AMBIENT + (1 - AMBIENT) * np.clip(normal @ LIGHT_DIR, 0.0, None)
    rgb = np.where(prim[:, None] >= 0, colors[prim] * shade[:, None], 0.0)
    depth = np.where(prim >= 0, np.minimum(t, far), far)
    H, W = camera.height, camera.width
    return RgbdImage(np.clip(rgb, 0, 1).reshape(H, W, 3), depth.reshape(H, W), far)


@dataclass(frozen=True)
class GroundTruthPoint:
    position: np.ndarray
    sigma_hat: float

    def __post_init__(self):
        if not self.sigma_hat > 0:
            raise ValueError("sigma_hat must be positive")


@dataclass(frozen=True)
class GroundTruthCloud:
    """Array form of a list of ground-truth points."""

    positions: np.ndarray
    sigma_hat: np.ndarray

    def __len__(self):
        return len(self.positions)

    @property
    def points(self) -> list[GroundTruthPoint]:
        return [GroundTruthPoint(p, float(s)) for p, s in zip(self.positions, self.sigma_hat)]

    @classmethod
    def from_points(cls, points: Sequence[GroundTruthPoint]) -> "GroundTruthCloud":
        if not points:
            return cls(np.zeros((0, 3)), np.zeros(0))
        return cls(np.array([p.position for p in points], dtype=float),
                   np.array([p.sigma_hat for p in points], dtype=float))

    def to_xyz(self) -> str:
        return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in self.positions.tolist())


def ground_truth_point_cloud(world: GroundTruthWorld, samples_per_area: float,
                             sigma_hat: float = DEFAULT_SIGMA_HAT, seed: int = 0,
                             kinds: Sequence[str] | None = None) -> GroundTruthCloud:
    """Poisson-count uniform samples over every face of every primitive."""
    if not samples_per_area > 0:
        raise ValueError("samples_per_area must be positive")
    rng = np.random.default_rng(seed)
    chunks = []
    for prim in world.primitives:
        if kinds is not None and prim.kind not in kinds:
            continue
        lo, hi = np.asarray(prim.lo), np.asarray(prim.hi)
        for axis, value, _ in prim.faces():
            a, b = [k for k in range(3) if k != axis]
            area = (hi[a] - lo[a]) * (hi[b] - lo[b])
            n = rng.poisson(area * samples_per_area)
            pts = np.empty((n, 3))
            pts[:, axis] = value
            pts[:, a] = rng.uniform(lo[a], hi[a], n)
            pts[:, b] = rng.uniform(lo[b], hi[b], n)
            chunks.append(pts)
    pos = np.vstack(chunks) if chunks else np.zeros((0, 3))
    return GroundTruthCloud(pos, np.full(len(pos), float(sigma_hat)))


def _uniform_in_ball(rng, n: int, radius: float) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * (radius * rng.uniform(size=(n, 1)) ** (1 / 3))


def sample_candidate_poses(stage: int, path: Path, explored_center, count: int,
                           radius: float, seed: int = 0,
                           world: GroundTruthWorld | None = None,
                           max_batches: int = 1000) -> CandidateSet:
    """Random candidate camera poses.

    Stage 1 draws positions uniformly from the union of balls around the
    waypoints and aims each camera at its nearest waypoint. Stage 2 draws
    from the ball around ``explored_center`` and aims at it. With ``world``
    given, positions outside free space are rejected.
    """
    if count <= 0 or radius <= 0:
        raise ValueError("count and radius must be positive")
    if stage not in (1, 2):
        raise ValueError(f"unknown stage {stage}")
    rng = np.random.default_rng(seed)
    wps = path.waypoints
    center = as_vec3(explored_center) if stage == 2 else None
    positions: list[np.ndarray] = []
    for _ in range(max_batches):
        need = count - len(positions)
        if need <= 0:
            break
        m = max(2 * need, 16)
        if stage == 1:
            k = rng.integers(len(wps), size=m)
            cand = wps[k] + _uniform_in_ball(rng, m, radius)
            # accept with 1/(number of covering balls) for a uniform union
            cover = (np.linalg.norm(cand[:, None] - wps[None], axis=2) <= radius).sum(1)
            cand = cand[rng.uniform(size=m) * np.maximum(cover, 1) < 1.0]
        else:
            cand = center + _uniform_in_ball(rng, m, radius)
        if world is not None:
            cand = cand[world.is_free(cand)]
        positions.extend(cand[:need])
    if len(positions) < count:
        raise RuntimeError("could not place enough candidate cameras in free space")
    poses = []
    for pos in positions:
        if stage == 1:
            target = wps[np.argmin(np.linalg.norm(wps - pos, axis=1))]
        else:
            target = center
        poses.append(look_at(pos, target))
    return CandidateSet(poses, [stage] * count)


def closest_gt_distribution(cloud, p, eps: float) -> DistanceDistribution:
    """Distance law of the ground-truth point with the lowest AVaR from ``p``."""
    if not isinstance(cloud, GroundTruthCloud):
        cloud = GroundTruthCloud.from_points(list(cloud))
    if len(cloud) == 0:
        raise EmptyCloudError("ground-truth cloud is empty")
    check_eps(eps)
    dist = np.linalg.norm(cloud.positions - as_vec3(p), axis=1)
    i = int(np.argmin(avar_many(dist, cloud.sigma_hat, eps)))
    return DistanceDistribution(float(dist[i]), float(cloud.sigma_hat[i]))
