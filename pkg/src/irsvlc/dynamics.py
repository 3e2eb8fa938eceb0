"""User mobility (random waypoint) and static human blockage (Matern hard-core)."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .scene import RoomConfig


@dataclass(frozen=True)
class UserState:
    position: tuple[float, float, float]
    velocity: float
    waypoint: tuple[float, float, float]
    pause_remaining: float = 0.0
    min_rate: float = 1e6
    speed_range: tuple[float, float] = (0.0, 2.0)
    pause_time: float = 0.0

    def __post_init__(self):
        if not self.min_rate > 0:
            raise ValueError("minimum rate must be positive")
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid speed range {self.speed_range}")

    @property
    def arrived(self) -> bool:
        return self.position[0] == self.waypoint[0] and self.position[1] == self.waypoint[1]


def random_waypoint(room: RoomConfig, rng: np.random.Generator) -> tuple[float, float, float]:
    x = rng.uniform(0.0, room.width_x)
    y = rng.uniform(0.0, room.depth_y)
    return (float(x), float(y), room.receiver_height)


def new_user(position, room: RoomConfig, rng: np.random.Generator, min_rate: float = 1e6,
             speed_range=(0.0, 2.0), pause_time: float = 0.0) -> UserState:
    """User at ``position`` heading for a fresh uniform waypoint."""
    pos = (float(position[0]), float(position[1]), room.receiver_height)
    return UserState(
        position=pos,
        velocity=float(rng.uniform(*speed_range)),
        waypoint=random_waypoint(room, rng),
        min_rate=min_rate,
        speed_range=tuple(speed_range),
        pause_time=pause_time,
    )


def static_user(position, min_rate: float = 1e6) -> UserState:
    pos = tuple(float(v) for v in position)
    return UserState(pos, 0.0, pos, math.inf, min_rate, (0.0, 0.0), math.inf)


def rwp_step(user: UserState, dt: float, room: RoomConfig, rng: np.random.Generator) -> UserState:
    """Advance a random-waypoint user by ``dt`` seconds.

    On arrival the user pauses for ``pause_time`` and then draws a new
    uniform waypoint and a new uniform speed.  Any time left in ``dt`` after
    arriving is spent on the pause and then on the next leg.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, y, z = user.position
    wx, wy, _ = user.waypoint
    speed = user.velocity
    pause = user.pause_remaining
    arrived = user.arrived
    if arrived and math.isinf(pause):
        return user
    t = dt
    while t > 0:
        if arrived:
            if pause > 0:
                used = min(pause, t)
                pause -= used
                t -= used
                if pause > 0:
                    break
            wx, wy, _ = random_waypoint(room, rng)
            speed = float(rng.uniform(*user.speed_range))
            arrived = False
            continue
        if speed <= 0:
            break
        dx, dy = wx - x, wy - y
        dist = math.hypot(dx, dy)
        travel = speed * t
        if travel < dist:
            x += dx / dist * travel
            y += dy / dist * travel
            t = 0.0
        else:
            x, y = wx, wy
            t -= dist / speed
            arrived = True
            pause = user.pause_time
    # floating point drift must never leave the room
    x = min(max(x, 0.0), room.width_x)
    y = min(max(y, 0.0), room.depth_y)
    return replace(user, position=(x, y, z), velocity=speed, waypoint=(wx, wy, z), pause_remaining=pause)


def rwp_stationary_pdf(x, y, a: float):
    """Stationary random-waypoint density on the square [-a/2, a/2]^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = a / 2
    if np.any(np.abs(x) > h) or np.any(np.abs(y) > h):
        raise ValueError("point lies outside the square")
    f = 36.0 / a**6 * (x**2 - a**2 / 4) * (y**2 - a**2 / 4)
    return f[()] if f.ndim == 0 else f


def sample_rwp_stationary(room: RoomConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` ground positions (room coordinates) from the stationary density.

    The density factorises into independent parabolic marginals, each
    sampled by rejection against a uniform proposal.
    """
    def axis(length):
        out = np.empty(0)
        while out.size < n:
            u = rng.uniform(-0.5, 0.5, size=2 * n)
            keep = rng.uniform(size=2 * n) < 1 - 4 * u**2
            out = np.concatenate([out, u[keep]])
        return (out[:n] + 0.5) * length

    return np.column_stack([axis(room.width_x), axis(room.depth_y)])


@dataclass(frozen=True)
class BlockageCylinder:
    center_xy: tuple[float, float]
    diameter: float = 0.4
    height: float = 1.8

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError("blockage diameter must be positive")
        if not self.height > 0:
            raise ValueError("blockage height must be positive")

    @property
    def radius(self) -> float:
        return self.diameter / 2


def place_blockages_mhcp(
    room: RoomConfig,
    intensity: float,
    hard_core_radius: float,
    rng: np.random.Generator,
    diameter: float = 0.4,
    height: float = 1.8,
) -> list[BlockageCylinder]:
    """Matern type-II hard-core placement of cylinders over the room floor."""
    if intensity < 0:
        raise ValueError("intensity must be non-negative")
    if height >= room.height_z:
        raise ValueError("blockages must be shorter than the room")
    n = rng.poisson(intensity * room.width_x * room.depth_y)
    r = diameter / 2
    pts = np.column_stack([
        rng.uniform(r, room.width_x - r, size=n),
        rng.uniform(r, room.depth_y - r, size=n),
    ])
    marks = rng.uniform(size=n)
    keep = mhcp_thin(pts, marks, hard_core_radius)
    order = np.argsort(marks[keep], kind="stable")
    return [BlockageCylinder((float(x), float(y)), diameter, height) for x, y in pts[keep][order]]


def mhcp_thin(points: np.ndarray, marks: np.ndarray, radius: float) -> np.ndarray:
    """Boolean survivor mask: a point survives iff no neighbour within ``radius`` has a smaller mark."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    marks = np.asarray(marks, dtype=float)
    keep = np.ones(len(points), dtype=bool)
    if len(points) < 2 or radius <= 0:
        return keep
    pairs = cKDTree(points).query_pairs(np.nextafter(radius, 0), output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    # in each close pair the strictly larger mark loses
    keep[j[marks[i] < marks[j]]] = False
    keep[i[marks[j] < marks[i]]] = False
    return keep


def place_blockages(
    room: RoomConfig,
    count: int,
    hard_core_radius: float,
    rng: np.random.Generator,
    diameter: float = 0.4,
    height: float = 1.8,
) -> list[BlockageCylinder]:
    """Exactly ``count`` hard-core blockages.

    Draws a Matern II pattern dense enough to hold ``count`` survivors and
    keeps the ``count`` survivors with the smallest marks, redrawing on
    shortfall.  A mark-ordered subset of a hard-core pattern is hard-core.
    """
    if count == 0:
        return []
    area = room.width_x * room.depth_y
    intensity = 3.0 * count / area
    # survivors saturate near 1/(pi R^2) per unit area, so denser parents stop helping
    ceiling = max(intensity, 10.0 / (math.pi * hard_core_radius**2)) if hard_core_radius > 0 else intensity
    for _ in range(200):
        placed = place_blockages_mhcp(room, intensity, hard_core_radius, rng, diameter, height)
        if len(placed) >= count:
            return placed[:count]
        intensity = min(intensity * 1.5, ceiling)
    raise ValueError(f"cannot fit {count} blockages with hard-core radius {hard_core_radius}")


def shadow_length(h_b: float, d_l: float, h_l: float) -> float:
    """Length of the shadow cast behind a blockage of height ``h_b``.

    ``d_l`` is the horizontal distance from the light to the shadow tip and
    ``h_l`` the light height, both measured from the receiver plane.
    """
    if h_b >= h_l:
        raise ValueError("blockage must be lower than the light")
    if h_b < 0 or d_l <= 0:
        raise ValueError("need h_b >= 0 and d_l > 0")
    return h_b * d_l / h_l


def los_blocked_mask(ap, user_pos, blockages: Sequence[BlockageCylinder]) -> np.ndarray:
    """Vectorised shadow-rectangle test for ``(K, 3)`` users."""
    user_pos = np.atleast_2d(np.asarray(user_pos, dtype=float))
    out = np.zeros(len(user_pos), dtype=bool)
    ap = np.asarray(ap, dtype=float)
    for b in blockages:
        for k, u in enumerate(user_pos):
            if not out[k]:
                out[k] = _in_shadow(ap, u, b)
    return out


def _in_shadow(ap, u, b: BlockageCylinder) -> bool:
    h_l = ap[2] - u[2]
    h_b = b.height - u[2]
    if h_b <= 0:
        return False
    c = np.asarray(b.center_xy)
    r = b.radius
    p = u[:2] - ap[:2]
    if np.hypot(*(u[:2] - c)) <= r:
        return True
    rel = c - ap[:2]
    d_c = math.hypot(*rel)
    if h_b >= h_l:
        tip = math.inf
    else:
        d_far = d_c + r
        tip = d_far + shadow_length(h_b, d_far * h_l / (h_l - h_b), h_l)
    if d_c == 0:
        return math.hypot(*p) <= tip
    along_dir = rel / d_c
    along = float(p @ along_dir)
    perp = abs(float(p[0] * along_dir[1] - p[1] * along_dir[0]))
    return d_c + r <= along <= tip and perp <= r


def is_los_blocked(ap, user_pos, blockages: Sequence[BlockageCylinder]) -> bool:
    """True if the user is in the rectangular shadow of, or inside, any blockage."""
    return bool(los_blocked_mask(ap, np.asarray(user_pos, dtype=float)[None, :], blockages)[0])


def segments_blocked(p0, p1, blockages: Sequence[BlockageCylinder]) -> np.ndarray:
    """Broadcast segment/solid-cylinder intersection. ``p0`` and ``p1`` are (..., 3)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    p0, p1 = np.broadcast_arrays(p0, p1)
    hit = np.zeros(p0.shape[:-1], dtype=bool)
    d = p1 - p0
    a = d[..., 0] ** 2 + d[..., 1] ** 2
    for b in blockages:
        c = np.asarray(b.center_xy)
        f = p0[..., :2] - c
        bq = 2 * (f[..., 0] * d[..., 0] + f[..., 1] * d[..., 1])
        cq = f[..., 0] ** 2 + f[..., 1] ** 2 - b.radius**2
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = bq**2 - 4 * a * cq
            sq = np.sqrt(np.clip(disc, 0, None))
            t0 = np.where(a > 0, (-bq - sq) / (2 * a), 0.0)
            t1 = np.where(a > 0, (-bq + sq) / (2 * a), 1.0)
        radial_ok = np.where(a > 0, disc >= 0, cq <= 0)
        lo = np.maximum(t0, 0.0)
        hi = np.minimum(t1, 1.0)
        overlap = radial_ok & (lo <= hi)
        z_lo = p0[..., 2] + lo * d[..., 2]
        z_hi = p0[..., 2] + hi * d[..., 2]
        zmin = np.minimum(z_lo, z_hi)
        zmax = np.maximum(z_lo, z_hi)
        hit |= overlap & (zmin <= b.height) & (zmax >= 0.0)
    return hit


def is_segment_blocked(p0, p1, blockages: Sequence[BlockageCylinder]) -> bool:
    """True iff the 3D segment ``p0``-``p1`` intersects any cylinder volume."""
    return bool(segments_blocked(p0, p1, blockages))
