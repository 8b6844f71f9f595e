"""Ground-truth alignment and the localisation / mapping errors.

The ground truth is rotated and translated onto the SLAM frame by grid search
(0.5 degree, 5 cm) minimising the localisation error. For a fixed rotation the
L1 objective separates in x and y, so the best translation on the grid is read
off the medians of the residuals; the rotation grid is searched exhaustively.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

ROT_STEP = math.radians(0.5)
TRANS_STEP = 0.05
MAX_GAP = 0.1


class InsufficientDataError(ValueError):
    pass


@dataclass
class Trajectory:
    t: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if len(self.t) != len(self.xy):
            raise ValueError("t and xy lengths differ")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.xy)):
            raise ValueError("non-finite trajectory coordinates")

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_array(cls, arr) -> "Trajectory":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:, 0], arr[:, 1:3])


@dataclass(frozen=True)
class Alignment:
    rotation: float
    translation: tuple[float, float]
    mae_l: float = float("nan")

    def apply(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return xy @ np.array([[c, s], [-s, c]]) + np.asarray(self.translation)


def associate(gt: Trajectory, slam: Trajectory, max_gap: float = MAX_GAP):
    """Pair every SLAM sample with the nearest-in-time ground-truth sample.

    Returns (gt_xy, slam_xy, slam_t) for the pairs within ``max_gap``.
    """
    if len(gt) == 0 or len(slam) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    j = np.clip(np.searchsorted(gt.t, slam.t), 1, max(len(gt) - 1, 1))
    if len(gt) > 1:
        left = np.abs(slam.t - gt.t[j - 1]) <= np.abs(gt.t[j] - slam.t)
        j = np.where(left, j - 1, j)
    else:
        j = np.zeros(len(slam), dtype=int)
    ok = np.abs(gt.t[j] - slam.t) <= max_gap + 1e-9
    return gt.xy[j[ok]], slam.xy[ok], slam.t[ok]


def mae_localisation(a, b) -> float:
    """Mean over samples of |dx| + |dy|."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if a.shape != b.shape:
        raise ValueError(f"sample counts differ: {len(a)} vs {len(b)}")
    if not len(a):
        raise InsufficientDataError("no samples")
    return float(np.abs(a - b).sum(axis=1).mean())


def mae_mapping(gt, slam_map, swap: bool = False) -> float:
    """Mean over map points of the L1 distance to the nearest ground-truth point.

    ``swap=True`` averages over ground-truth points instead.
    """
    gt = np.asarray(gt, dtype=float).reshape(-1, 2)
    pts = np.asarray(slam_map, dtype=float).reshape(-1, 2)
    if not len(gt) or not len(pts):
        raise InsufficientDataError("empty point set")
    if swap:
        gt, pts = pts, gt
    dist, _ = cKDTree(gt).query(pts, p=1)
    return float(np.mean(dist))


def _grid_candidates(lo, hi, step):
    """Integer grid indices bracketing the interval [lo, hi] of L1 minimisers."""
    return np.stack([np.floor(lo / step), np.ceil(lo / step),
                     np.floor(hi / step), np.ceil(hi / step)], axis=-1)


def _best_axis(res, step):
    """Grid offset minimising sum |res - t| per row; ties go to the smaller offset.

    ``res`` is (R, n); returns (index, cost) arrays of length R.
    """
    srt = np.sort(res, axis=1)
    n = res.shape[1]
    lo, hi = srt[:, (n - 1) // 2], srt[:, n // 2]
    cand = _grid_candidates(lo, hi, step)  # (R, 4)
    cost = np.abs(res[:, None, :] - cand[:, :, None] * step).sum(axis=2)
    best = cost.min(axis=1, keepdims=True)
    tol = 1e-9 * np.maximum(1.0, best)
    masked = np.where(cost <= best + tol, cand, np.inf)
    k = masked.min(axis=1)
    return k, best[:, 0]


def _search(g, s, rot_step, trans_step):
    n_half = int(round(math.pi / rot_step))
    ks = np.arange(-n_half + 1, n_half + 1)
    rots = ks * rot_step
    c, sn = np.cos(rots)[:, None], np.sin(rots)[:, None]
    gx = c * g[None, :, 0] - sn * g[None, :, 1]
    gy = sn * g[None, :, 0] + c * g[None, :, 1]
    kx, cx = _best_axis(s[None, :, 0] - gx, trans_step)
    ky, cy = _best_axis(s[None, :, 1] - gy, trans_step)
    cost = (cx + cy) / len(g)
    best = cost.min()
    tied = np.flatnonzero(cost <= best + 1e-9 * max(1.0, best))
    # smallest |rotation|, then lexicographic translation
    order = sorted(tied, key=lambda i: (abs(ks[i]), kx[i], ky[i]))
    i = order[0]
    return float(rots[i]), (float(kx[i] * trans_step), float(ky[i] * trans_step)), float(cost[i])


def align_points(gt_xy, slam_xy, rot_step: float = ROT_STEP, trans_step: float = TRANS_STEP,
                 check_reflection: bool = True) -> Alignment:
    """Grid-search alignment of already associated point pairs."""
    g = np.asarray(gt_xy, dtype=float).reshape(-1, 2)
    s = np.asarray(slam_xy, dtype=float).reshape(-1, 2)
    if len(g) < 2 or len(g) != len(s):
        raise InsufficientDataError(f"need at least 2 associated samples, got {len(g)}")
    rot, trans, cost = _search(g, s, rot_step, trans_step)
    if check_reflection and cost > 0:
        mirrored = _search(g * np.array([1.0, -1.0]), s, rot_step, trans_step)[2]
        if mirrored < 0.5 * cost:
            log.warning("mirrored ground truth aligns with half the error (%.3f vs %.3f m); "
                        "check frame handedness", mirrored, cost)
    return Alignment(rot, trans, cost)


def align(gt: Trajectory, slam: Trajectory, max_gap: float = MAX_GAP, **kw) -> Alignment:
    g, s, _ = associate(gt, slam, max_gap)
    return align_points(g, s, **kw)


def evaluate(gt: Trajectory, slam: Trajectory, slam_map=None, max_gap: float = MAX_GAP,
             swap_mapping: bool = False) -> dict:
    """Align, then report both errors; ``slam_map`` defaults to the SLAM trajectory."""
    g, s, _ = associate(gt, slam, max_gap)
    al = align_points(g, s)
    g_al = al.apply(g)
    mae_l = mae_localisation(g_al, s)
    pts = slam.xy if slam_map is None else slam_map
    mae_m = mae_mapping(al.apply(gt.xy), pts, swap=swap_mapping)
    return {
        "rotation": al.rotation,
        "rotation_deg": math.degrees(al.rotation),
        "translation": list(al.translation),
        "mae_l": mae_l,
        "mae_m": mae_m,
        "n_samples": int(len(s)),
    }
