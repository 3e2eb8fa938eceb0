"""Optical channel model: Lambertian LoS gain, mirror-reflected gain, SINR, rate and BER.

All functions broadcast over numpy arrays.  User positions are ``(..., 3)``
arrays; mirror quantities are indexed along the last axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .scene import LedConfig, MirrorArrayConfig, MirrorState, ReceiverConfig, Scene

E_OVER_2PI = math.e / (2 * math.pi)


@dataclass(frozen=True)
class NoiseModel:
    total_noise_variance: float
    residual_interference: float = 0.0

    def __post_init__(self):
        if not self.total_noise_variance > 0:
            raise ValueError("total noise variance must be positive")
        if np.any(np.asarray(self.residual_interference) < 0):
            raise ValueError("residual interference must be non-negative")


@dataclass
class ChannelReport:
    """Per-user channel state; ``irs_gains`` is (K, M)."""

    los_gain: np.ndarray
    irs_gains: np.ndarray
    los_blocked: np.ndarray
    sinr: np.ndarray
    rate: np.ndarray

    @property
    def total_gain(self) -> np.ndarray:
        """Effective gain seen by each user after blockage."""
        return np.where(self.los_blocked, 0.0, self.los_gain) + self.irs_gains.sum(axis=-1)


def los_gain(ap, led: LedConfig, rx: ReceiverConfig, user_pos) -> np.ndarray | float:
    """Direct-path gain from a downward-facing AP to upward-facing receivers."""
    ap = np.asarray(ap, dtype=float)
    d = np.asarray(user_pos, dtype=float) - ap
    dist = np.linalg.norm(d, axis=-1)
    if np.any(dist == 0):
        raise ValueError("receiver coincides with the access point")
    dz = -d[..., 2]
    if np.any(dz < 0):
        raise ValueError("receiver must lie below the access point plane")
    n = led.lambertian_order
    cos_t = dz / dist  # irradiance angle == incidence angle for parallel planes
    h = (n + 1) * rx.detector_area * cos_t**n * cos_t / (2 * math.pi * dist**2)
    h = np.where(cos_t >= math.cos(rx.fov_semiangle), h * rx.gain_factor, 0.0)
    return h[()] if h.ndim == 0 else h


def _incidence_cosine(centers, yaw, roll, points) -> np.ndarray:
    """Broadcasted rotated-normal cosine. ``points`` (..., 3) against M mirrors -> (..., M)."""
    centers = np.asarray(centers, dtype=float)
    diff = centers - np.asarray(points, dtype=float)[..., None, :]
    dist = np.linalg.norm(diff, axis=-1)
    if np.any(dist == 0):
        raise ValueError("point coincides with a mirror center")
    cr = np.cos(roll)
    return (
        diff[..., 0] * np.sin(yaw) * cr + diff[..., 1] * np.cos(yaw) * cr + diff[..., 2] * np.sin(roll)
    ) / dist


def orientation_cosine(mirror: MirrorState, point) -> np.ndarray:
    """Cosine between each mirror's steered normal and the mirror-to-point direction.

    Negative values mean the point lies behind the reflecting face.
    Returns shape ``(M,)`` for a single point and ``(K, M)`` for ``(K, 3)`` points.
    """
    return _incidence_cosine(mirror.centers, mirror.yaw, mirror.roll, point)


def irs_gain(
    ap,
    mirror: MirrorState,
    array: MirrorArrayConfig,
    led: LedConfig,
    rx: ReceiverConfig,
    user_pos,
) -> np.ndarray:
    """Specular mirror-path gain for each (user, mirror) pair.

    Zero whenever the reflected incidence angle exceeds the receiver FOV or
    any of the four cosines is negative.
    """
    ap = np.asarray(ap, dtype=float)
    centers = mirror.centers
    user_pos = np.asarray(user_pos, dtype=float)
    n = led.lambertian_order

    to_ap = ap - centers
    d_ml = np.linalg.norm(to_ap, axis=-1)
    if np.any(d_ml == 0):
        raise ValueError("mirror coincides with the access point")
    cos_emit = to_ap[:, 2] / d_ml  # AP faces straight down
    cos_in_ap = orientation_cosine(mirror, ap)

    d_km = np.linalg.norm(centers - user_pos[..., None, :], axis=-1)
    cos_rx = (centers[:, 2] - user_pos[..., None, 2]) / d_km
    cos_out = orientation_cosine(mirror, user_pos)

    ok = (
        (cos_emit >= 0)
        & (cos_in_ap >= 0)
        & (cos_rx >= 0)
        & (cos_out >= 0)
        & (cos_out >= math.cos(rx.fov_semiangle))
    )
    num = (
        (n + 1)
        * array.reflectivity
        * rx.detector_area
        * array.element_area
        * np.clip(cos_emit, 0, None) ** n
        * cos_in_ap
        * cos_rx
        * cos_out
    )
    h = num / (2 * math.pi**2 * d_ml**2 * d_km**2) * rx.gain_factor
    return np.where(ok, h, 0.0)


def sinr(los, los_blocked, irs_gains, rx: ReceiverConfig, power: float, noise: NoiseModel,
         power_exponent: int = 2) -> np.ndarray | float:
    """Electrical SINR per user.

    ``los_blocked`` true removes the direct path.  ``irs_gains`` is summed
    over its last axis.  ``power_exponent`` selects how optical power enters
    the numerator: 1 keeps ``R0^2 P (H)^2``; 2 gives ``(R0 P H)^2``.
    """
    los = np.asarray(los, dtype=float)
    irs_total = np.asarray(irs_gains, dtype=float).sum(axis=-1)
    if np.any(los < 0) or np.any(irs_total < 0):
        raise ValueError("channel gains must be non-negative")
    visible = np.logical_not(np.asarray(los_blocked, dtype=bool))
    amp = np.where(visible, los, 0.0) + irs_total
    den = noise.residual_interference + noise.total_noise_variance
    g = rx.responsivity**2 * power**power_exponent * amp**2 / den
    return g[()] if np.ndim(g) == 0 else g


def user_rate(gamma, bandwidth: float, k: int):
    """Achievable rate (bits/s) with the bandwidth split evenly over ``k`` users."""
    if k < 1:
        raise ValueError("number of users must be at least 1")
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("SINR must be non-negative")
    r = bandwidth / k * np.log1p(E_OVER_2PI * gamma) / math.log(2)
    return r[()] if r.ndim == 0 else r


def ber_ook(gamma):
    """On-off keying bit error probability, Q(sqrt(gamma))."""
    gamma = np.asarray(gamma, dtype=float)
    b = 0.5 * erfc(np.sqrt(np.clip(gamma, 0, None)) / math.sqrt(2))
    return b[()] if b.ndim == 0 else b


def calibrate_noise_variance(scene: Scene, snr_db: float, power: float | None = None,
                             power_exponent: int = 2) -> float:
    """Noise variance giving ``snr_db`` for an unblocked user directly below the AP."""
    power = scene.led.transmit_power if power is None else power
    ap = scene.ap
    below = np.array([ap[0], ap[1], scene.room.receiver_height])
    h = los_gain(ap, scene.led, scene.receiver, below)
    signal = scene.receiver.responsivity**2 * power**power_exponent * h**2
    return float(signal / 10 ** (snr_db / 10))


def evaluate_channel(
    scene: Scene,
    mirror: MirrorState,
    user_pos,
    los_blocked,
    noise: NoiseModel,
    power: float | None = None,
    irs_blocked=None,
    power_exponent: int = 2,
) -> ChannelReport:
    """Full channel report for ``(K, 3)`` user positions.

    ``irs_blocked`` is an optional (K, M) mask of obstructed mirror->user paths.
    """
    user_pos = np.atleast_2d(np.asarray(user_pos, dtype=float))
    power = scene.led.transmit_power if power is None else power
    h_los = los_gain(scene.ap, scene.led, scene.receiver, user_pos)
    h_irs = irs_gain(scene.ap, mirror, scene.mirrors, scene.led, scene.receiver, user_pos)
    if irs_blocked is not None:
        h_irs = np.where(irs_blocked, 0.0, h_irs)
    blocked = np.asarray(los_blocked, dtype=bool)
    g = sinr(h_los, blocked, h_irs, scene.receiver, power, noise, power_exponent)
    rates = user_rate(g, scene.receiver.bandwidth, len(user_pos))
    return ChannelReport(h_los, h_irs, blocked, np.atleast_1d(g), np.atleast_1d(rates))
