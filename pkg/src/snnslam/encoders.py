"""DVS event binning and radar spike images.

DVS events are OR-pooled onto a 65x86 grid in 5 ms bins, one stream per
polarity. Radar detections are quantised onto a 15x30 binary image that is
re-presented for several consecutive bins to match the DVS time base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spiking import SpikeVector

DVS_TARGET_RES = (65, 86)  # (columns, rows)
DVS_NATIVE_RES = (260, 344)
DVS_BIN = 0.005
RADAR_W = 15
RADAR_H = 30
RADAR_MAX_X = 10.0
RADAR_MAX_Y = 10.0


@dataclass(frozen=True)
class DvsEvent:
    t: float
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class RadarDetection:
    x_d: float
    y_d: float
    v_d: float


@dataclass
class RadarFrame:
    t: float
    detections: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    k: int = 0

    def __post_init__(self):
        det = np.asarray(self.detections, dtype=float)
        if det.size == 0:
            det = np.zeros((0, 3))
        if det.ndim != 2 or det.shape[1] != 3:
            raise ValueError(f"radar detections must be (n, 3) rows of x_d, y_d, v_d; got {det.shape}")
        self.detections = det


@dataclass
class DvsBins:
    """Sparse per-bin active pixel indices for one polarity (CSR layout)."""

    indptr: np.ndarray
    indices: np.ndarray
    n_pixels: int
    dt: float = DVS_BIN
    t0: float = 0.0

    @property
    def n_bins(self) -> int:
        return len(self.indptr) - 1

    def active(self, k: int) -> np.ndarray:
        if k < 0 or k >= self.n_bins:
            return np.zeros(0, dtype=np.int64)
        return self.indices[self.indptr[k]:self.indptr[k + 1]]

    def dense(self, k: int) -> np.ndarray:
        out = np.zeros(self.n_pixels, dtype=np.uint8)
        out[self.active(k)] = 1
        return out

    def spike_vector(self, k: int) -> SpikeVector:
        return SpikeVector(self.dense(k), self.t0 + k * self.dt)

    def to_dense(self) -> np.ndarray:
        return np.stack([self.dense(k) for k in range(self.n_bins)]) if self.n_bins else \
            np.zeros((0, self.n_pixels), dtype=np.uint8)


@dataclass
class BinnedDvs:
    positive: DvsBins
    negative: DvsBins
    rejected: int = 0


def _events_to_columns(events):
    if isinstance(events, np.ndarray) and events.dtype.names:
        return (events["t"].astype(float), events["x"].astype(np.int64),
                events["y"].astype(np.int64), events["p"].astype(np.int64))
    if isinstance(events, np.ndarray):
        arr = events.reshape(-1, 4)
        return arr[:, 0].astype(float), arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64), \
            arr[:, 3].astype(np.int64)
    events = list(events)
    if not events:
        z = np.zeros(0)
        return z, z.astype(np.int64), z.astype(np.int64), z.astype(np.int64)
    return (np.array([e.t for e in events], dtype=float),
            np.array([e.x for e in events], dtype=np.int64),
            np.array([e.y for e in events], dtype=np.int64),
            np.array([e.polarity for e in events], dtype=np.int64))


def bin_dvs_events(events, native_res=DVS_NATIVE_RES, target_res=DVS_TARGET_RES,
                   dt_bin: float = DVS_BIN, n_bins: int | None = None, t0: float = 0.0) -> BinnedDvs:
    """OR-pool events into per-polarity binary bins.

    ``events`` may be a list of :class:`DvsEvent`, an (n, 4) array of
    ``t, x, y, polarity`` rows, or a structured array with fields t/x/y/p.
    Pixel (x, y) maps to target column floor(x*W/native_w) and row
    floor(y*H/native_h); flattened index is ``row * W + column``.
    Out-of-range events are dropped and counted in ``rejected``.
    """
    native_w, native_h = native_res
    tw, th = target_res
    if native_w < tw or native_h < th:
        raise ValueError(f"native resolution {native_res} smaller than target {target_res}")
    t, x, y, p = _events_to_columns(events)
    if t.size and np.any(np.diff(t) < 0):
        raise ValueError("DVS events must be time-sorted")
    ok = (x >= 0) & (x < native_w) & (y >= 0) & (y < native_h) & (t >= t0) & np.isin(p, (-1, 1))
    rejected = int((~ok).sum())
    t, x, y, p = t[ok], x[ok], y[ok], p[ok]
    k = np.floor((t - t0) / dt_bin + 1e-9).astype(np.int64)
    if n_bins is None:
        n_bins = int(k.max()) + 1 if k.size else 0
    else:
        keep = k < n_bins
        rejected += int((~keep).sum())
        t, x, y, p, k = t[keep], x[keep], y[keep], p[keep], k[keep]
    pix = (y * th // native_h) * tw + (x * tw // native_w)
    n_pix = tw * th

    def build(mask):
        key = np.unique(k[mask] * n_pix + pix[mask])  # dedup = OR pooling
        bins, idx = np.divmod(key, n_pix)
        indptr = np.zeros(n_bins + 1, dtype=np.int64)
        np.add.at(indptr, bins + 1, 1)
        return DvsBins(np.cumsum(indptr), idx, n_pix, dt_bin, t0)

    return BinnedDvs(build(p > 0), build(p < 0), rejected)


def radar_quantize(x_d: float, y_d: float, max_x: float = RADAR_MAX_X, max_y: float = RADAR_MAX_Y,
                   width: int = RADAR_W, height: int = RADAR_H):
    """Map a detection to its image cell, or ``None`` when outside the field of view.

    The lateral coordinate is first shifted by max_x/2 so that a centred
    field of view lands in [0, max_x].
    """
    if not (math.isfinite(x_d) and math.isfinite(y_d)):
        raise ValueError(f"non-finite radar detection ({x_d}, {y_d})")
    xs = x_d + max_x / 2.0
    if not (0.0 <= xs <= max_x and 0.0 <= y_d <= max_y):
        return None
    return math.floor((width - 1) * xs / max_x), math.floor((height - 1) * y_d / max_y)


def radar_quantize_many(xy: np.ndarray, max_x=RADAR_MAX_X, max_y=RADAR_MAX_Y,
                        width=RADAR_W, height=RADAR_H):
    """Vectorised :func:`radar_quantize`; returns (qx, qy, in_range mask)."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(xy)):
        raise ValueError("non-finite radar detection")
    xs = xy[:, 0] + max_x / 2.0
    ok = (xs >= 0) & (xs <= max_x) & (xy[:, 1] >= 0) & (xy[:, 1] <= max_y)
    qx = np.floor((width - 1) * xs / max_x).astype(np.int64)
    qy = np.floor((height - 1) * xy[:, 1] / max_y).astype(np.int64)
    return qx, qy, ok


def radar_image(frame: RadarFrame, max_x=RADAR_MAX_X, max_y=RADAR_MAX_Y,
                width=RADAR_W, height=RADAR_H) -> np.ndarray:
    """Binary (width, height) image with a 1 at every occupied cell."""
    img = np.zeros((width, height), dtype=np.uint8)
    if len(frame.detections):
        qx, qy, ok = radar_quantize_many(frame.detections[:, :2], max_x, max_y, width, height)
        img[qx[ok], qy[ok]] = 1
    return img


def radar_frame_to_spikes(frame: RadarFrame, oversample: int = 10, dt_bin: float = DVS_BIN,
                          **kw) -> list[SpikeVector]:
    """Flatten the frame's spike image row-major and repeat it ``oversample`` times."""
    bits = radar_image(frame, **kw).reshape(-1)
    return [SpikeVector(bits.copy(), frame.t + i * dt_bin) for i in range(oversample)]
