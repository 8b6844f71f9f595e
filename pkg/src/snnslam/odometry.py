"""Radar-gyroscope dead reckoning.

The heading velocity comes from the median of Doppler velocities projected
back onto the heading axis; yaw is integrated from the gyroscope at 1 kHz and
position is advanced at each radar frame along the mean heading direction of
the gyro ticks since the previous frame (position integrated at the gyro rate
with the frame's heading velocity held).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GYRO_PERIOD = 0.001
RADAR_PERIOD = 0.04


class TimestampError(ValueError):
    """A sensor stream went backwards in time."""


def _wrap(a: float) -> float:
    w = (a + math.pi) % (2 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    if isinstance(a, (float, int)):
        return _wrap(float(a))
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.psi)):
            raise ValueError(f"non-finite pose {self}")
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi])


@dataclass(frozen=True)
class GyroSample:
    t: float
    yaw_rate: float


def heading_velocity(detections, theta_v: float = math.radians(60.0)):
    """Median heading velocity of one radar frame, or ``None`` if no detection passes the gate.

    ``detections`` is an (n, 3) array of x_d, y_d, v_d (or a RadarFrame).
    """
    det = np.asarray(getattr(detections, "detections", detections), dtype=float).reshape(-1, 3)
    x, y, v = det[:, 0], det[:, 1], det[:, 2]
    keep = ~((x == 0) & (y == 0))
    x, y, v = x[keep], y[keep], v[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.abs(np.arctan(np.divide(x, y)))
    theta = np.where(y == 0, np.pi / 2, theta)
    valid = theta < theta_v
    if not valid.any():
        return None
    return float(np.median(v[valid] / np.cos(theta[valid])))


class RadarGyroOdometry:
    """Incremental integrator; feed gyro samples and radar frames in time order.

    Positions only move at radar frames. Frames with no valid detection hold
    the previous heading velocity.
    """

    def __init__(self, start: Pose2D = Pose2D(), t0: float = 0.0, gyro_period: float = GYRO_PERIOD,
                 theta_v: float = math.radians(60.0)):
        self.x, self.y, self.psi = start.x, start.y, start.psi
        self.gyro_period = gyro_period
        self.theta_v = theta_v
        self.v_h = 0.0
        self.t_gyro = t0
        self.t_radar = t0
        self.distance = 0.0
        self._cos_sum = 0.0
        self._sin_sum = 0.0
        self._n_ticks = 0

    @property
    def pose(self) -> Pose2D:
        return Pose2D(self.x, self.y, self.psi)

    def feed_gyro(self, t: float, yaw_rate: float):
        if t < self.t_gyro:
            raise TimestampError(f"gyro timestamp {t} before {self.t_gyro}")
        self.t_gyro = t
        self.psi = _wrap(self.psi + yaw_rate * self.gyro_period)
        self._cos_sum += math.cos(self.psi)
        self._sin_sum += math.sin(self.psi)
        self._n_ticks += 1

    def feed_gyro_many(self, t, yaw_rate):
        t = np.asarray(t, dtype=float)
        if not t.size:
            return
        if t[0] < self.t_gyro or np.any(np.diff(t) < 0):
            raise TimestampError("gyro timestamps regress")
        for ti, r in zip(t.tolist(), np.asarray(yaw_rate, dtype=float).tolist()):
            self.feed_gyro(ti, r)

    def feed_radar(self, t: float, detections=None, v_h: float | None = None) -> float:
        """Advance position to radar time ``t``; returns the heading velocity used."""
        if t < self.t_radar:
            raise TimestampError(f"radar timestamp {t} before {self.t_radar}")
        if v_h is None and detections is not None:
            v_h = heading_velocity(detections, self.theta_v)
        if v_h is not None:
            self.v_h = v_h
        dt = t - self.t_radar
        if self._n_ticks:
            c, s = self._cos_sum / self._n_ticks, self._sin_sum / self._n_ticks
        else:
            c, s = math.cos(self.psi), math.sin(self.psi)
        self.x += self.v_h * c * dt
        self.y += self.v_h * s * dt
        self._cos_sum = self._sin_sum = 0.0
        self._n_ticks = 0
        self.distance += abs(self.v_h) * dt
        self.t_radar = t
        return self.v_h


def integrate_pose(start: Pose2D, gyro_t, gyro_rate, radar_t, v_h, t0: float = 0.0,
                   gyro_period: float = GYRO_PERIOD) -> np.ndarray:
    """Batch dead reckoning; returns an (n_radar, 4) array of t, x, y, psi.

    Gyro samples stamped at or before a radar frame are applied before that
    frame's position update.
    """
    gyro_t = np.asarray(gyro_t, dtype=float)
    gyro_rate = np.asarray(gyro_rate, dtype=float)
    radar_t = np.asarray(radar_t, dtype=float)
    if np.any(np.diff(gyro_t) < 0) or np.any(np.diff(radar_t) < 0):
        raise TimestampError("timestamps regress")
    odo = RadarGyroOdometry(start, t0, gyro_period)
    out = np.zeros((len(radar_t), 4))
    j = 0
    for i, tr in enumerate(radar_t):
        while j < len(gyro_t) and gyro_t[j] <= tr + 1e-12:
            odo.feed_gyro(gyro_t[j], gyro_rate[j])
            j += 1
        odo.feed_radar(tr, v_h=v_h[i])
        out[i] = (tr, odo.x, odo.y, odo.psi)
    return out
