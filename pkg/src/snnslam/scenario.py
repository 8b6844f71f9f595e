"""Synthetic warehouse flights: ground truth, gyro, ray-cast radar and place-coded DVS.

The drone flies a closed or open spline at constant speed, heading along the
velocity. Radar detections are wall hits along a fan of rays; DVS events come
from per-place pixel signatures so that revisiting a place (same cell, same
heading sector) reproduces its spike statistics.

Radar coordinates: y_d forward, x_d positive to the right, Doppler positive
for closing targets. Body coordinates used elsewhere are x forward, y left.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .encoders import DVS_NATIVE_RES, DVS_TARGET_RES, RadarFrame

GT_PERIOD = 0.1
RADAR_PERIOD = 0.04
GYRO_PERIOD = 0.001
DVS_SLOT = 0.005  # event synthesis granularity


class ScenarioError(ValueError):
    """Invalid scenario, e.g. a flight path passing too close to a wall."""


def _rect(x0, y0, x1, y1):
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]


def figure_eight(a: float = 5.0, b: float = 2.5, n: int = 16):
    u = np.arange(n) * 2 * np.pi / n
    return [(float(a * math.sin(v)), float(b * math.sin(2 * v))) for v in u]


def default_walls():
    # a cluttered, deliberately asymmetric hall so that radar views of
    # different places (including mirrored ones) differ
    pillars = [(0.8, 3.2), (-1.4, -3.4), (-3.0, 3.3), (3.6, -3.3), (5.9, 2.0), (-6.0, -1.5)]
    return [
        _rect(-6.5, -4.0, 6.5, 4.0),
        _rect(2.4, -0.5, 4.0, 0.5),
        _rect(-4.3, -0.2, -2.7, 0.8),
        _rect(-5.5, 3.6, -4.0, 3.9),
        _rect(1.5, -3.9, 3.0, -3.6),
        _rect(5.6, -3.6, 6.2, -2.6),
    ] + [_rect(x - 0.2, y - 0.2, x + 0.2, y + 0.2) for x, y in pillars]


@dataclass
class Scenario:
    walls: list = field(default_factory=default_walls)
    waypoints: list = field(default_factory=figure_eight)
    closed: bool = True
    speed: float = 1.0
    duration: float = 120.0
    lighting: list = field(default_factory=list)  # (t_start, t_end, multiplier)
    gyro_bias: float = 0.01
    gyro_sigma: float = 0.002
    doppler_sigma: float = 0.05
    range_sigma: float = 0.02
    dropout: float = 0.1
    outliers_per_frame: int = 0
    n_rays: int = 181
    fov_deg: float = 180.0
    max_range: float = 10.0
    dvs_rate: float = 55.0  # Hz per signature pixel at full blend
    dvs_noise_rate: float = 0.05  # Hz per pixel, background
    dvs_pixels: int = 140  # signature size per polarity (target pixels)
    cell_size: float = 1.0
    heading_sectors: int = 8
    aliases: list = field(default_factory=list)  # [[ix, iy, sector], [ix, iy, sector]] pairs
    min_clearance: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.speed <= 0 or self.duration <= 0:
            raise ScenarioError("speed and duration must be positive")
        if len(self.waypoints) < 2:
            raise ScenarioError("need at least two waypoints")
        if not 0.0 <= self.dropout < 1.0:
            raise ScenarioError("dropout must lie in [0, 1)")
        for seg in self.lighting:
            if len(seg) != 3 or seg[1] < seg[0] or seg[2] < 0:
                raise ScenarioError(f"bad lighting interval {seg}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["walls"] = [[list(map(float, p)) for p in w] for w in self.walls]
        d["waypoints"] = [list(map(float, p)) for p in self.waypoints]
        d["lighting"] = [list(map(float, s)) for s in self.lighting]
        d["aliases"] = [[list(map(int, c)) for c in pair] for pair in self.aliases]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
        return cls(**d)

    def lighting_at(self, t):
        t = np.asarray(t, dtype=float)
        m = np.ones_like(t)
        for t0, t1, mult in self.lighting:
            m = np.where((t >= t0) & (t < t1), mult, m)
        return m


class FlightPath:
    """Constant-speed traversal of a cubic spline through the waypoints."""

    def __init__(self, waypoints, closed: bool, speed: float, n_dense: int = 20000):
        pts = np.asarray(waypoints, dtype=float)
        if closed:
            pts = np.vstack([pts, pts[:1]])
            self.spline = CubicSpline(np.arange(len(pts)), pts, bc_type="periodic")
        else:
            self.spline = CubicSpline(np.arange(len(pts)), pts, bc_type="natural")
        self.closed = closed
        self.speed = speed
        u = np.linspace(0, len(pts) - 1, n_dense)
        d = np.linalg.norm(self.spline(u, 1), axis=1)
        s = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(u))])
        self._u, self._s = u, s
        self.length = float(s[-1])

    def _param(self, t):
        s = self.speed * np.asarray(t, dtype=float)
        if self.closed:
            s = np.mod(s, self.length)
        elif np.any(s > self.length + 1e-9):
            raise ScenarioError("flight outlasts the open path")
        return np.interp(s, self._s, self._u)

    def state(self, t):
        """Position (n, 2), yaw (n,), yaw rate (n,) at times ``t``."""
        u = self._param(t)
        p = self.spline(u)
        d1 = self.spline(u, 1)
        d2 = self.spline(u, 2)
        psi = np.arctan2(d1[..., 1], d1[..., 0])
        speed_u = np.linalg.norm(d1, axis=-1)
        curvature = (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]) / speed_u ** 3
        return p, psi, self.speed * curvature


def _segments(walls):
    segs = []
    for poly in walls:
        poly = np.asarray(poly, dtype=float)
        segs.extend(np.hstack([poly[:-1], poly[1:]]))
    return np.array(segs).reshape(-1, 4)


def _point_segment_distance(p, segs):
    a, b = segs[:, :2], segs[:, 2:]
    ab = b - a
    t = np.clip(((p[:, None, :] - a) * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-12), 0, 1)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p[:, None, :] - closest, axis=-1).min(axis=1)


def raycast(origin, angles, segs, max_range):
    """Range to the nearest wall along each world-frame ray angle (inf if none)."""
    d = np.column_stack([np.cos(angles), np.sin(angles)])
    a, b = segs[:, :2], segs[:, 2:]
    e = b - a
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    w = a[None, :, :] - np.asarray(origin)[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / denom
        u = (w[..., 0] * d[:, None, 1] - w[..., 1] * d[:, None, 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (r > 1e-9) & (u >= 0) & (u <= 1) & (r <= max_range)
    r = np.where(hit, r, np.inf)
    return r.min(axis=1)


@dataclass
class Recording:
    manifest: dict
    dvs: np.ndarray  # (n, 4): t, x, y, polarity
    radar: list  # RadarFrame
    gyro: np.ndarray  # (n, 2): t, yaw_rate
    gt: np.ndarray  # (n, 4): t, x, y, psi

    @property
    def duration(self) -> float:
        return float(self.manifest["duration"])


def _signature(key, n_pix, k, salt):
    h = hashlib.sha256(f"{salt}:{key}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
    return rng.choice(n_pix, size=k, replace=False)


class PlaceSignatures:
    """Deterministic pixel sets per (cell x, cell y, heading sector) and polarity."""

    def __init__(self, sc: Scenario, n_pix: int):
        self.sc = sc
        self.n_pix = n_pix
        self.alias = {tuple(b): tuple(a) for a, b in sc.aliases}
        self._cache = {}

    def pixels(self, key, polarity):
        key = self.alias.get(key, key)
        ck = (key, polarity)
        if ck not in self._cache:
            self._cache[ck] = _signature(f"{key}:{polarity}", self.n_pix, self.sc.dvs_pixels, self.sc.seed)
        return self._cache[ck]

    def rates(self, x, y, psi, polarity) -> np.ndarray:
        """Per target pixel event rate (Hz), trilinearly blended over neighbouring places."""
        sc = self.sc
        fx, fy = x / sc.cell_size - 0.5, y / sc.cell_size - 0.5
        sector = sc.heading_sectors * (psi % (2 * math.pi)) / (2 * math.pi) - 0.5
        ix, iy, ih = math.floor(fx), math.floor(fy), math.floor(sector)
        wx, wy, wh = fx - ix, fy - iy, sector - ih
        out = np.zeros(self.n_pix)
        for dx, px in ((0, 1 - wx), (1, wx)):
            for dy, py in ((0, 1 - wy), (1, wy)):
                for dh, ph in ((0, 1 - wh), (1, wh)):
                    wgt = px * py * ph
                    if wgt <= 0:
                        continue
                    key = (ix + dx, iy + dy, (ih + dh) % sc.heading_sectors)
                    out[self.pixels(key, polarity)] += wgt
        return sc.dvs_rate * out + sc.dvs_noise_rate


def generate_recording(sc: Scenario) -> Recording:
    """Simulate all four streams; each sensor draws from its own seeded stream."""
    path = FlightPath(sc.waypoints, sc.closed, sc.speed)
    segs = _segments(sc.walls)
    check_t = np.arange(0.0, min(sc.duration, path.length / sc.speed if path.closed else sc.duration) + 0.05, 0.05)
    clearance = _point_segment_distance(path.state(check_t)[0], segs)
    if clearance.min() < sc.min_clearance:
        raise ScenarioError(f"path comes within {clearance.min():.3f} m of a wall")
    rng_gyro, rng_radar, rng_dvs = [np.random.default_rng(s) for s in np.random.SeedSequence(sc.seed).spawn(3)]

    n_gt = int(math.floor(sc.duration / GT_PERIOD + 1e-9)) + 1
    t_gt = np.arange(n_gt) * GT_PERIOD
    p, psi, _ = path.state(t_gt)
    gt = np.column_stack([t_gt, p, np.mod(psi + math.pi, 2 * math.pi) - math.pi])

    n_gyro = int(math.floor(sc.duration / GYRO_PERIOD + 1e-9))
    t_gyro = np.arange(1, n_gyro + 1) * GYRO_PERIOD
    _, _, rate = path.state(t_gyro)
    rate = rate + sc.gyro_bias + (rng_gyro.normal(0.0, sc.gyro_sigma, n_gyro) if sc.gyro_sigma > 0 else 0.0)
    gyro = np.column_stack([t_gyro, rate])

    frames = []
    n_radar = int(math.floor(sc.duration / RADAR_PERIOD + 1e-9)) + 1
    half = math.radians(sc.fov_deg) / 2
    rel = np.linspace(-half, half, sc.n_rays)
    for k in range(n_radar):
        t = k * RADAR_PERIOD
        pos, yaw, _ = path.state(np.array([t]))
        r = raycast(pos[0], yaw[0] + rel, segs, sc.max_range)
        hit = np.isfinite(r)
        if sc.dropout > 0:
            hit &= rng_radar.random(sc.n_rays) >= sc.dropout
        a, rr = rel[hit], r[hit]
        if sc.range_sigma > 0:
            rr = rr + rng_radar.normal(0.0, sc.range_sigma, rr.size)
        v = sc.speed * np.cos(a)
        if sc.doppler_sigma > 0:
            v = v + rng_radar.normal(0.0, sc.doppler_sigma, v.size)
        det = np.column_stack([-rr * np.sin(a), rr * np.cos(a), v])
        if sc.outliers_per_frame:
            m = sc.outliers_per_frame
            oa = rng_radar.uniform(-half, half, m)
            orr = rng_radar.uniform(0.5, sc.max_range, m)
            ov = rng_radar.uniform(-3 * sc.speed - 1, 3 * sc.speed + 5, m)
            det = np.vstack([det, np.column_stack([-orr * np.sin(oa), orr * np.cos(oa), ov])])
        frames.append(RadarFrame(t, det, k))

    dvs = _generate_dvs(sc, path, rng_dvs)
    manifest = {
        "format": "snnslam-recording/1",
        "duration": sc.duration,
        "dvs_resolution": list(DVS_NATIVE_RES),
        "dvs_target_resolution": list(DVS_TARGET_RES),
        "radar_period": RADAR_PERIOD,
        "gyro_period": GYRO_PERIOD,
        "gt_period": GT_PERIOD,
        "seed": sc.seed,
        "scenario": sc.to_dict(),
    }
    return Recording(manifest, dvs, frames, gyro, gt)


def _generate_dvs(sc: Scenario, path: FlightPath, rng) -> np.ndarray:
    tw, th = DVS_TARGET_RES
    nw, nh = DVS_NATIVE_RES
    sx, sy = nw // tw, nh // th
    sig = PlaceSignatures(sc, tw * th)
    n_slots = int(math.floor(sc.duration / DVS_SLOT + 1e-9))
    t_mid = (np.arange(n_slots) + 0.5) * DVS_SLOT
    light = sc.lighting_at(t_mid)
    pos, yaw, _ = path.state(t_mid)
    chunks = []
    for k in range(n_slots):
        if light[k] <= 0:
            continue
        for pol in (1, -1):
            lam = sig.rates(pos[k, 0], pos[k, 1], yaw[k], pol) * (light[k] * DVS_SLOT)
            counts = rng.poisson(lam)
            pix = np.repeat(np.arange(lam.size), counts)
            if not pix.size:
                continue
            n = pix.size
            t = k * DVS_SLOT + rng.random(n) * DVS_SLOT
            col, row = pix % tw, pix // tw
            x = col * sx + rng.integers(0, sx, n)
            y = row * sy + rng.integers(0, sy, n)
            chunks.append(np.column_stack([t, x, y, np.full(n, pol)]))
    if not chunks:
        return np.zeros((0, 4))
    ev = np.vstack(chunks)
    order = np.argsort(ev[:, 0], kind="stable")
    return ev[order]
