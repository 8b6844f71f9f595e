"""Experience-map back-end: template matching, loop closure, relaxation, obstacles.

Each 10 Hz tick adds one experience carrying the scaled latent code as its
template, its pose (propagated from the previous corrected pose by the
odometric increment) and the radar detections seen since the previous tick
in body coordinates. A template whose cosine similarity with the current code
reaches ``theta`` closes a loop: a zero-offset link ties the new experience to
the matched one and the graph is relaxed.

Body frame: x forward, y to the left. World points follow
``p_w = R(psi) p_b + (X, Y)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fusion import EPS
from .odometry import Pose2D, wrap_angle

log = logging.getLogger(__name__)


def compose(p: Pose2D, delta) -> Pose2D:
    """p ⊕ delta, with delta = (dx, dy, dpsi) expressed in p's frame."""
    dx, dy, dpsi = delta
    c, s = math.cos(p.psi), math.sin(p.psi)
    return Pose2D(p.x + c * dx - s * dy, p.y + s * dx + c * dy, p.psi + dpsi)


def relative(a: Pose2D, b: Pose2D) -> tuple[float, float, float]:
    """Delta such that compose(a, delta) == b."""
    c, s = math.cos(a.psi), math.sin(a.psi)
    dx, dy = b.x - a.x, b.y - a.y
    return (c * dx + s * dy, -s * dx + c * dy, wrap_angle(b.psi - a.psi))


def transform_detections(detections, pose: Pose2D) -> np.ndarray:
    """Rotate body-frame points by the yaw, then translate by the position."""
    pts = np.asarray(detections, dtype=float).reshape(-1, 2)
    c, s = math.cos(pose.psi), math.sin(pose.psi)
    out = np.empty_like(pts)
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + pose.x
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + pose.y
    return out


@dataclass
class Experience:
    id: int
    pose: Pose2D
    template: np.ndarray
    body_detections: np.ndarray
    t: float


@dataclass(frozen=True)
class Link:
    from_id: int
    to_id: int
    delta: tuple[float, float, float]
    kind: str = "odom"

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise ValueError("link endpoints must differ")
        if not all(math.isfinite(v) for v in self.delta):
            raise ValueError(f"non-finite link delta {self.delta}")


@dataclass
class ExperienceMap:
    theta: float = 0.6
    alpha: float = 0.5
    relax_iters: int = 20
    recency: int = 50
    experiences: list = field(default_factory=list)
    links: list = field(default_factory=list)
    loop_closures: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        self._units = []  # unit-norm templates, zero rows for null codes
        self._last_odom: Pose2D | None = None
        self.on_correction = []  # callbacks run after every relaxation

    def __len__(self):
        return len(self.experiences)

    def poses(self) -> np.ndarray:
        return np.array([[e.pose.x, e.pose.y, e.pose.psi] for e in self.experiences]).reshape(-1, 3)

    def best_match(self, code) -> tuple[int | None, float]:
        """Argmax similarity over templates older than the recency window."""
        n_old = len(self._units) - self.recency
        if n_old <= 0:
            return None, 0.0
        v = np.asarray(code, dtype=float)
        norm = np.linalg.norm(v)
        if norm < EPS:
            return None, 0.0
        sims = np.stack(self._units[:n_old]) @ (v / norm)
        j = int(np.argmax(sims))
        return j, float(sims[j])

    def ingest(self, code, odom_pose: Pose2D, detections=None, t: float = 0.0):
        """Add one experience; returns (id, matched id or None)."""
        code = np.asarray(getattr(code, "values", code), dtype=float)
        if self.experiences and code.shape != self.experiences[0].template.shape:
            raise ValueError(f"template length {code.shape} differs from {self.experiences[0].template.shape}")
        det = np.zeros((0, 2)) if detections is None else np.asarray(detections, dtype=float).reshape(-1, 2)
        new_id = len(self.experiences)
        if new_id == 0:
            pose = odom_pose
        else:
            delta = relative(self._last_odom, odom_pose)
            pose = compose(self.experiences[-1].pose, delta)
        match, score = self.best_match(code)
        self.experiences.append(Experience(new_id, pose, code.copy(), det, t))
        norm = np.linalg.norm(code)
        self._units.append(code / norm if norm >= EPS else np.zeros_like(code))
        if new_id > 0:
            self.links.append(Link(new_id - 1, new_id, delta, "odom"))
        self._last_odom = odom_pose
        if match is None or score < self.theta:
            return new_id, None
        self.links.append(Link(match, new_id, (0.0, 0.0, 0.0), "loop"))
        self.loop_closures.append((new_id, match, score))
        log.debug("loop closure %d -> %d (s=%.3f)", new_id, match, score)
        self.relax()
        return new_id, match

    def relax(self, iters: int | None = None):
        """Jacobi relaxation of all poses toward the poses implied by their links.

        Each sweep moves every experience except the first by ``alpha`` times
        its mean discrepancy; yaw discrepancies are averaged on the circle.
        """
        iters = self.relax_iters if iters is None else iters
        if not self.links or iters <= 0:
            return
        P = self.poses()
        a = np.array([l.from_id for l in self.links])
        b = np.array([l.to_id for l in self.links])
        d = np.array([l.delta for l in self.links], dtype=float)
        n = len(P)
        for _ in range(iters):
            ca, sa = np.cos(P[a, 2]), np.sin(P[a, 2])
            # pose of b implied by a and the link
            ib = np.column_stack([P[a, 0] + ca * d[:, 0] - sa * d[:, 1],
                                  P[a, 1] + sa * d[:, 0] + ca * d[:, 1],
                                  P[a, 2] + d[:, 2]])
            # pose of a implied by b and the inverted link
            psi_a = P[b, 2] - d[:, 2]
            cb, sb = np.cos(psi_a), np.sin(psi_a)
            ia = np.column_stack([P[b, 0] - cb * d[:, 0] + sb * d[:, 1],
                                  P[b, 1] - sb * d[:, 0] - cb * d[:, 1],
                                  psi_a])
            idx = np.concatenate([b, a])
            implied = np.vstack([ib, ia])
            diff = implied - P[idx]
            dyaw = wrap_angle(diff[:, 2])
            acc = np.zeros((n, 4))
            np.add.at(acc, idx, np.column_stack([diff[:, :2], np.cos(dyaw), np.sin(dyaw)]))
            cnt = np.bincount(idx, minlength=n).astype(float)
            has = cnt > 0
            has[0] = False  # anchor
            step = np.zeros((n, 3))
            step[has, :2] = acc[has, :2] / cnt[has, None]
            step[has, 2] = np.arctan2(acc[has, 3], acc[has, 2])
            P = P + self.alpha * step
        for e, p in zip(self.experiences, P):
            e.pose = Pose2D(*p)
        for cb_ in self.on_correction:
            cb_(self)

    def world_detections(self, i: int) -> np.ndarray:
        e = self.experiences[i]
        return transform_detections(e.body_detections, e.pose)

    def obstacle_cloud(self) -> np.ndarray:
        """Every experience's detections through its current pose, in experience order."""
        parts = [self.world_detections(i) for i in range(len(self.experiences))]
        return np.vstack(parts) if parts else np.zeros((0, 2))

    rebuild_obstacle_map = obstacle_cloud

    # export

    def write_csvs(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "experiences.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "t", "x", "y", "psi"])
            for e in self.experiences:
                w.writerow([e.id, repr(e.t), repr(e.pose.x), repr(e.pose.y), repr(e.pose.psi)])
        with open(out / "links.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from", "to", "dx", "dy", "dpsi", "kind"])
            for l in self.links:
                w.writerow([l.from_id, l.to_id, *map(repr, map(float, l.delta)), l.kind])
        with open(out / "obstacles.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in self.obstacle_cloud():
                w.writerow([repr(float(x)), repr(float(y))])
