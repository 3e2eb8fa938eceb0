"""Static room geometry: access point, LED, receiver and the IRS mirror array."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration value violates its invariants."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def lambertian_order(phi_half: float) -> float:
    """Lambertian emission order for an LED half-power semi-angle (radians)."""
    if not 0.0 < phi_half < math.pi / 2:
        raise ValueError(f"half-power semi-angle must lie in (0, pi/2), got {phi_half!r}")
    return -math.log(2.0) / math.log(math.cos(phi_half))


@dataclass(frozen=True)
class RoomConfig:
    width_x: float = 5.0
    depth_y: float = 5.0
    height_z: float = 3.0
    ap_position: tuple[float, float, float] | None = None  # None -> ceiling centre
    receiver_height: float = 0.85

    def __post_init__(self):
        for name in ("width_x", "depth_y", "height_z"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "room dimensions must be positive")
        if self.ap_position is None:
            object.__setattr__(
                self, "ap_position", (self.width_x / 2, self.depth_y / 2, self.height_z)
            )
        ap = tuple(float(v) for v in self.ap_position)
        if len(ap) != 3:
            raise ConfigError("ap_position", "expected three coordinates")
        object.__setattr__(self, "ap_position", ap)
        if not (0 <= ap[0] <= self.width_x and 0 <= ap[1] <= self.depth_y and 0 <= ap[2] <= self.height_z):
            raise ConfigError("ap_position", f"{ap} lies outside the room")
        if not 0 <= self.receiver_height < self.height_z:
            raise ConfigError("receiver_height", "must satisfy 0 <= h < room height")
        if not self.receiver_height < ap[2]:
            raise ConfigError("receiver_height", "receiver plane must lie below the access point")


@dataclass(frozen=True)
class LedConfig:
    half_power_semiangle: float = math.radians(60.0)
    transmit_power: float = 2.0

    def __post_init__(self):
        if not 0 < self.half_power_semiangle < math.pi / 2:
            raise ConfigError("half_power_semiangle", "must lie in (0, pi/2)")
        if not self.transmit_power > 0:
            raise ConfigError("transmit_power", "must be positive")

    @property
    def lambertian_order(self) -> float:
        return lambertian_order(self.half_power_semiangle)


@dataclass(frozen=True)
class ReceiverConfig:
    detector_area: float = 20e-6
    fov_semiangle: float = math.radians(70.0)
    responsivity: float = 0.4
    bandwidth: float = 20e6
    refractive_index: float = 1.5
    filter_gain: float = 1.0
    # Optional multiplicative optical gain applied to every channel gain.
    gain_factor: float = 1.0

    def __post_init__(self):
        if not self.detector_area > 0:
            raise ConfigError("detector_area", "must be positive")
        if not 0 < self.fov_semiangle <= math.pi / 2:
            raise ConfigError("fov_semiangle", "must lie in (0, pi/2]")
        if not self.responsivity > 0:
            raise ConfigError("responsivity", "must be positive")
        if not self.bandwidth > 0:
            raise ConfigError("bandwidth", "must be positive")
        if not self.gain_factor > 0:
            raise ConfigError("gain_factor", "must be positive")


_WALLS = ("y_max", "y_min", "x_min", "x_max")


@dataclass(frozen=True)
class MirrorArrayConfig:
    """Rectangular grid of steerable mirrors mounted on one wall.

    ``rows`` run vertically (mirror height ``mirror_height`` along z) and
    ``cols`` horizontally along the wall (``mirror_width``).  Centers are laid
    out row-major starting from the top-left row when looking at the wall
    from inside the room.  ``wall_offset`` is the stand-off of the mirror
    centers from the wall plane.
    """

    rows: int = 3
    cols: int = 3
    mirror_height: float = 0.25
    mirror_width: float = 0.10
    gap: float = 0.02
    reflectivity: float = 0.95
    wall: str = "y_max"
    wall_offset: float = 0.05
    center_height: float | None = None  # None -> vertically centred on the wall

    def __post_init__(self):
        if int(self.rows) != self.rows or self.rows < 1:
            raise ConfigError("rows", "mirror array needs at least one row")
        if int(self.cols) != self.cols or self.cols < 1:
            raise ConfigError("cols", "mirror array needs at least one column")
        if not self.mirror_height > 0:
            raise ConfigError("mirror_height", "must be positive")
        if not self.mirror_width > 0:
            raise ConfigError("mirror_width", "must be positive")
        if self.gap < 0:
            raise ConfigError("gap", "must be non-negative")
        if not 0 <= self.reflectivity <= 1:
            raise ConfigError("reflectivity", "must lie in [0, 1]")
        if self.wall not in _WALLS:
            raise ConfigError("wall", f"must be one of {_WALLS}")
        if self.wall_offset <= 0:
            raise ConfigError("wall_offset", "mirror centres must sit strictly inside the room")

    @property
    def count(self) -> int:
        return self.rows * self.cols

    @property
    def element_area(self) -> float:
        return self.mirror_height * self.mirror_width

    @property
    def extent(self) -> tuple[float, float]:
        """(horizontal, vertical) size of the array bounding box in meters."""
        return (
            self.cols * self.mirror_width + (self.cols - 1) * self.gap,
            self.rows * self.mirror_height + (self.rows - 1) * self.gap,
        )


@dataclass
class MirrorState:
    """Per-mirror yaw/roll angles (radians) and fixed centers (M x 3)."""

    yaw: np.ndarray
    roll: np.ndarray
    centers: np.ndarray

    @property
    def count(self) -> int:
        return len(self.centers)

    def copy(self) -> "MirrorState":
        return MirrorState(self.yaw.copy(), self.roll.copy(), self.centers)

    def set_angles(self, yaw, roll) -> None:
        yaw = np.asarray(yaw, dtype=float)
        roll = np.asarray(roll, dtype=float)
        lim = math.pi / 2
        if np.any(np.abs(yaw) > lim) or np.any(np.abs(roll) > lim):
            raise ValueError("mirror angles must lie in [-pi/2, pi/2]")
        self.yaw = yaw.copy()
        self.roll = roll.copy()


@dataclass(frozen=True)
class Scene:
    room: RoomConfig
    led: LedConfig
    receiver: ReceiverConfig
    mirrors: MirrorArrayConfig
    # derived from the configs, so excluded from equality
    centers: np.ndarray = field(repr=False, compare=False)

    @property
    def ap(self) -> np.ndarray:
        return np.array(self.room.ap_position)

    @property
    def lambertian_order(self) -> float:
        return self.led.lambertian_order

    def initial_mirror_state(self) -> MirrorState:
        m = self.mirrors.count
        return MirrorState(np.zeros(m), np.zeros(m), self.centers)


def mirror_centers(room: RoomConfig, array: MirrorArrayConfig) -> np.ndarray:
    """Lay out mirror centers row-major on the configured wall."""
    span_h, span_v = array.extent
    along_wall = room.width_x if array.wall in ("y_min", "y_max") else room.depth_y
    if span_h > along_wall:
        raise ConfigError("cols", f"array width {span_h:.3f} m exceeds wall length {along_wall:.3f} m")
    if span_v > room.height_z:
        raise ConfigError("rows", f"array height {span_v:.3f} m exceeds wall height {room.height_z:.3f} m")
    zc = room.height_z / 2 if array.center_height is None else array.center_height
    if zc - span_v / 2 < 0 or zc + span_v / 2 > room.height_z:
        raise ConfigError("center_height", "array does not fit vertically on the wall")

    pitch_h = array.mirror_width + array.gap
    pitch_v = array.mirror_height + array.gap
    u = (np.arange(array.cols) - (array.cols - 1) / 2) * pitch_h
    z = zc - (np.arange(array.rows) - (array.rows - 1) / 2) * pitch_v  # row 0 on top
    uu = np.tile(u, array.rows)
    zz = np.repeat(z, array.cols)
    off = array.wall_offset
    if array.wall == "y_max":
        # looking at the wall from inside, left is +x
        xs, ys = room.width_x / 2 - uu, np.full_like(uu, room.depth_y - off)
    elif array.wall == "y_min":
        xs, ys = room.width_x / 2 + uu, np.full_like(uu, off)
    elif array.wall == "x_min":
        xs, ys = np.full_like(uu, off), room.depth_y / 2 - uu
    else:
        xs, ys = np.full_like(uu, room.width_x - off), room.depth_y / 2 + uu
    centers = np.column_stack([xs, ys, zz])
    centers.setflags(write=False)
    return centers


def build_scene(
    room: RoomConfig | None = None,
    led: LedConfig | None = None,
    receiver: ReceiverConfig | None = None,
    mirrors: MirrorArrayConfig | None = None,
) -> Scene:
    room = room or RoomConfig()
    led = led or LedConfig()
    receiver = receiver or ReceiverConfig()
    mirrors = mirrors or MirrorArrayConfig()
    return Scene(room, led, receiver, mirrors, mirror_centers(room, mirrors))


def _from_mapping(cls, data: Mapping[str, Any] | None, section: str):
    if data is None:
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
    kwargs = dict(data)
    # angles are written in degrees in config files
    for key in ("half_power_semiangle", "fov_semiangle"):
        if key in kwargs:
            kwargs[key] = math.radians(kwargs[key])
    if "ap_position" in kwargs and kwargs["ap_position"] is not None:
        kwargs["ap_position"] = tuple(kwargs["ap_position"])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(section, str(exc)) from None


SCENE_SECTIONS = {
    "room": RoomConfig,
    "led": LedConfig,
    "receiver": ReceiverConfig,
    "mirrors": MirrorArrayConfig,
}


def scene_from_dict(data: Mapping[str, Any]) -> Scene:
    """Build a scene from nested ``room``/``led``/``receiver``/``mirrors`` sections.

    Angles (``half_power_semiangle``, ``fov_semiangle``) are given in degrees.
    """
    unknown = set(data) - set(SCENE_SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    parts = {name: _from_mapping(cls, data.get(name), name) for name, cls in SCENE_SECTIONS.items()}
    return build_scene(**parts)


def with_mirrors(scene: Scene, **changes) -> Scene:
    """Copy of ``scene`` with a modified mirror array."""
    return build_scene(scene.room, scene.led, scene.receiver, replace(scene.mirrors, **changes))
