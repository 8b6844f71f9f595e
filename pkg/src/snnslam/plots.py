"""Static SVG figures for a finished run: trajectories, obstacle cloud, code similarity."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import Trajectory, align  # noqa: E402
from .fusion import similarity_matrix  # noqa: E402


def read_csv(path, min_cols: int = 1) -> np.ndarray:
    """Numeric CSV with one header line; an empty body gives a (0, min_cols) array."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return arr if arr.size else np.zeros((0, min_cols))


def plot_run(in_dir, out_svg, gt_path=None, max_codes: int = 1500, max_points: int = 15000) -> Path:
    """Draw the run in ``in_dir`` (as written by the ``run`` command) to ``out_svg``.

    Ground truth is taken from ``gt_path`` or ``in_dir/gt.csv`` when present
    and aligned onto the SLAM frame before drawing.
    """
    src = Path(in_dir)
    slam = read_csv(src / "trajectory.csv", 4)
    odom = read_csv(src / "odometry_ticks.csv", 4) if (src / "odometry_ticks.csv").exists() else None
    obstacles = read_csv(src / "obstacles.csv", 2) if (src / "obstacles.csv").exists() else np.zeros((0, 2))
    codes = read_csv(src / "codes.csv", 2) if (src / "codes.csv").exists() else np.zeros((0, 2))
    gt_file = Path(gt_path) if gt_path else src / "gt.csv"
    gt = read_csv(gt_file, 4) if gt_file.exists() else None

    plt.rcParams["svg.hashsalt"] = "snnslam"
    fig, (ax_map, ax_sim) = plt.subplots(1, 2, figsize=(12, 5.5))
    if len(obstacles):
        pts = obstacles[::max(1, int(np.ceil(len(obstacles) / max_points)))]
        ax_map.plot(pts[:, 0], pts[:, 1], ",", color="0.6", label="obstacles")
    if gt is not None and len(gt) >= 2 and len(slam) >= 2:
        al = align(Trajectory.from_array(gt), Trajectory.from_array(slam))
        g = al.apply(gt[:, 1:3])
        ax_map.plot(g[:, 0], g[:, 1], "k-", lw=0.8, label="ground truth")
    if odom is not None and len(odom):
        ax_map.plot(odom[:, 1], odom[:, 2], "-", color="tab:orange", lw=0.8, label="odometry")
    if len(slam):
        ax_map.plot(slam[:, 1], slam[:, 2], "-", color="tab:blue", lw=1.0, label="SLAM")
    ax_map.set_aspect("equal", adjustable="datalim")
    ax_map.set_xlabel("x [m]")
    ax_map.set_ylabel("y [m]")
    ax_map.legend(loc="upper right", fontsize=8)
    ax_map.set_title("trajectory and obstacle map")

    if len(codes) >= 2:
        step = max(1, int(np.ceil(len(codes) / max_codes)))
        sub = codes[::step]
        sim = similarity_matrix(sub[:, 1:])
        t0, t1 = sub[0, 0], sub[-1, 0]
        im = ax_sim.imshow(sim, origin="lower", extent=(t0, t1, t0, t1), vmin=-1, vmax=1,
                           cmap="viridis", interpolation="nearest")
        fig.colorbar(im, ax=ax_sim, fraction=0.046, label="cosine similarity")
    ax_sim.set_xlabel("t [s]")
    ax_sim.set_ylabel("t [s]")
    ax_sim.set_title("latent code similarity")

    out = Path(out_svg)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out
