"""End-to-end replay: encoders -> SNN-STDP ensembles -> fusion -> odometry + back-end.

Everything runs on the 5 ms bin clock. Radar frames arrive every 40 ms and
are re-presented to the radar ensemble for up to ``oversample`` bins, cut
short by the next frame. Each completed window yields one scaled latent code,
which is handed to the back-end together with the odometric pose at that
instant and the radar detections gathered since the previous code.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .backend import ExperienceMap
from .config import MODE_BLOCKS, MODES, PipelineConfig
from .encoders import (DVS_NATIVE_RES, DVS_TARGET_RES, RADAR_H, RADAR_W, bin_dvs_events,
                       radar_image)
from .evaluation import Trajectory, evaluate
from .fusion import CodeFuser
from .odometry import Pose2D, RadarGyroOdometry, heading_velocity
from .scenario import Recording
from .spiking import LifParams, SnnStdpEnsemble, StdpParams

log = logging.getLogger(__name__)


def radar_body_points(detections) -> np.ndarray:
    """Radar (x_d right, y_d forward) to body (x forward, y left)."""
    det = np.asarray(detections, dtype=float).reshape(-1, 3)
    return np.column_stack([det[:, 1], -det[:, 0]])


def build_ensembles(cfg: PipelineConfig, blocks) -> dict:
    stdp = StdpParams(eta_d=cfg.eta_d, a_p=cfg.a_p, a_n=cfg.a_n, tau_p=cfg.tau_p, tau_n=cfg.tau_n,
                      lambda2=cfg.lambda2, eta_c=cfg.eta_c, phi_norm=cfg.phi_norm)
    n_dvs = DVS_TARGET_RES[0] * DVS_TARGET_RES[1]
    out = {}
    for i, b in enumerate(blocks):
        if b == "radar":
            n, mu, tau = RADAR_W * RADAR_H, cfg.mu_r, cfg.tau_m_r
        else:
            n, mu, tau = n_dvs, cfg.mu_pos_neg, cfg.tau_m_pos_neg
        coding = LifParams(tau_m=tau, mu=mu, dt=cfg.dt)
        error = LifParams(tau_m=tau, mu=mu * cfg.error_mu_ratio, dt=cfg.dt)
        seed = cfg.seed * 1000 + ("dvs_pos", "dvs_neg", "radar").index(b)
        out[b] = SnnStdpEnsemble.create(n, cfg.M, coding, error, stdp, seed=seed)
    return out


def radar_bin_schedule(frames, n_bins: int, dt: float, oversample: int):
    """Index of the radar frame presented at each bin, or -1."""
    sched = np.full(n_bins, -1, dtype=np.int64)
    starts = [int(math.floor(f.t / dt + 1e-9)) for f in frames]
    for i, k0 in enumerate(starts):
        k1 = k0 + oversample
        if i + 1 < len(starts):
            k1 = min(k1, starts[i + 1])
        sched[max(k0, 0):max(min(k1, n_bins), 0)] = i
    return sched


@dataclass
class PipelineResult:
    mode: str
    codes: np.ndarray
    code_t: np.ndarray
    emap: ExperienceMap
    odometry: np.ndarray  # t, x, y, psi, v_h at each radar frame
    odom_ticks: np.ndarray  # t, x, y, psi at each code
    raw_codes: np.ndarray = None  # unscaled window rates (Hz)
    metrics: dict = field(default_factory=dict)

    def slam_trajectory(self) -> np.ndarray:
        t = np.array([e.t for e in self.emap.experiences])
        return np.column_stack([t, self.emap.poses()]) if len(t) else np.zeros((0, 4))


class Pipeline:
    """Streaming SLAM over one recording; call :meth:`run` or step through :meth:`process_bin`."""

    def __init__(self, rec: Recording, cfg: PipelineConfig, mode: str = "fused"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.rec, self.cfg, self.mode = rec, cfg, mode
        self.blocks = MODE_BLOCKS[mode]
        self.n_bins = int(math.floor(rec.duration / cfg.dt + 1e-9))
        self.ensembles = build_ensembles(cfg, self.blocks)
        self.fuser = CodeFuser(self.blocks, cfg.M, cfg.window, cfg.dt, cfg.mask_silent, cfg.stride)
        self.emap = ExperienceMap(theta=cfg.theta_for(mode), alpha=cfg.alpha,
                                  relax_iters=cfg.relax_iters, recency=cfg.recency)
        self.odo = RadarGyroOdometry(Pose2D(), 0.0, float(rec.manifest.get("gyro_period", 0.001)),
                                     math.radians(cfg.theta_v_deg))
        native = tuple(rec.manifest.get("dvs_resolution", DVS_NATIVE_RES))
        if any(b.startswith("dvs") for b in self.blocks):
            self.dvs = bin_dvs_events(rec.dvs, native, DVS_TARGET_RES, cfg.dt, self.n_bins)
        else:
            self.dvs = None
        self.radar_images = [radar_image(f).reshape(-1) for f in rec.radar] if "radar" in self.blocks else []
        self.radar_sched = radar_bin_schedule(rec.radar, self.n_bins, cfg.dt, cfg.oversample)
        self._gyro_i = 0
        self._radar_i = 0
        self._pending = []  # (frame pose, body points) since the last code
        self.odometry_rows = []
        self.codes, self.raw_codes, self.code_t, self.odom_ticks = [], [], [], []

    def _advance_odometry(self, t: float):
        gyro, frames = self.rec.gyro, self.rec.radar
        tol = 1e-9
        while self._radar_i < len(frames) and frames[self._radar_i].t <= t + tol:
            f = frames[self._radar_i]
            self._feed_gyro_until(f.t + tol)
            v_h = heading_velocity(f.detections, self.odo.theta_v)
            self.odo.feed_radar(f.t, v_h=v_h)
            self.odometry_rows.append((f.t, self.odo.x, self.odo.y, self.odo.psi, self.odo.v_h))
            self._pending.append((self.odo.pose, radar_body_points(f.detections)))
            self._radar_i += 1
        self._feed_gyro_until(t + tol)
        del gyro

    def _feed_gyro_until(self, t: float):
        g = self.rec.gyro
        i = self._gyro_i
        while i < len(g) and g[i, 0] <= t:
            self.odo.feed_gyro(float(g[i, 0]), float(g[i, 1]))
            i += 1
        self._gyro_i = i

    def _input(self, block: str, k: int) -> np.ndarray:
        if block == "radar":
            i = self.radar_sched[k]
            if i < 0:
                return np.zeros(RADAR_W * RADAR_H, dtype=np.uint8)
            return self.radar_images[i]
        bins = self.dvs.positive if block == "dvs_pos" else self.dvs.negative
        return bins.dense(k)

    def process_bin(self, k: int):
        spikes = {b: self.ensembles[b].step(self._input(b, k))[0] for b in self.blocks}
        t_end = round((k + 1) * self.cfg.dt, 9)
        out = self.fuser.push(spikes, t_end)
        if out is None:
            return None
        raw, scaled = out
        self.raw_codes.append(raw.values)
        self._advance_odometry(t_end)
        pose = self.odo.pose
        pts = [backend.transform_detections(body, Pose2D(*backend.relative(pose, fp)))
               for fp, body in self._pending]
        self._pending = []
        det = np.vstack(pts) if pts else np.zeros((0, 2))
        self.emap.ingest(scaled.values, pose, det, t_end)
        self.codes.append(scaled.values)
        self.code_t.append(t_end)
        self.odom_ticks.append((t_end, pose.x, pose.y, pose.psi))
        return scaled

    def run(self, progress=None) -> PipelineResult:
        for k in range(self.n_bins):
            self.process_bin(k)
            if progress is not None and k % 2000 == 0:
                progress(k, self.n_bins)
        self._advance_odometry(self.rec.duration)
        res = PipelineResult(
            self.mode,
            np.array(self.codes).reshape(-1, self.fuser.dim),
            np.array(self.code_t),
            self.emap,
            np.array(self.odometry_rows).reshape(-1, 5),
            np.array(self.odom_ticks).reshape(-1, 4),
            np.array(self.raw_codes).reshape(-1, self.fuser.dim),
        )
        res.metrics = compute_metrics(res, self.rec)
        return res


def compute_metrics(res: PipelineResult, rec: Recording) -> dict:
    m = {
        "mode": res.mode,
        "n_codes": int(len(res.code_t)),
        "n_experiences": len(res.emap),
        "n_loop_closures": len(res.emap.loop_closures),
        "n_obstacle_points": int(len(res.emap.obstacle_cloud())),
    }
    if len(rec.gt) >= 2 and len(res.code_t) >= 2:
        gt = Trajectory.from_array(rec.gt)
        slam = Trajectory.from_array(res.slam_trajectory())
        odom = Trajectory.from_array(res.odom_ticks)
        m["slam"] = evaluate(gt, slam)
        m["odometry"] = evaluate(gt, odom)
        m["mae_l_ratio"] = m["slam"]["mae_l"] / max(m["odometry"]["mae_l"], 1e-12)
    return m


def run_pipeline(rec: Recording, cfg: PipelineConfig | None = None, mode: str = "fused",
                 out_dir=None, progress=None) -> PipelineResult:
    res = Pipeline(rec, cfg or PipelineConfig(), mode).run(progress)
    if out_dir is not None:
        write_outputs(res, out_dir, cfg or PipelineConfig())
    return res


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])


def write_outputs(res: PipelineResult, out_dir, cfg: PipelineConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "trajectory.csv", ["t", "x", "y", "psi"], res.slam_trajectory().tolist())
    _write_csv(out / "odometry.csv", ["t", "x", "y", "psi", "v_h"], res.odometry.tolist())
    _write_csv(out / "odometry_ticks.csv", ["t", "x", "y", "psi"], res.odom_ticks.tolist())
    _write_csv(out / "codes.csv", ["t"] + [f"c{i}" for i in range(res.codes.shape[1])],
               np.column_stack([res.code_t, res.codes]).tolist())
    res.emap.write_csvs(out)
    with open(out / "metrics.json", "w") as fh:
        json.dump({"metrics": res.metrics, "config": cfg.to_dict()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
