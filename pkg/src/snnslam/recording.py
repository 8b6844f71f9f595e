"""On-disk recording layout: ``manifest.json`` plus one CSV per sensor stream.

    dvs.csv    t,x,y,p                 native pixel coordinates, p in {-1, 1}
    radar.csv  k,t,n,x1,y1,v1,...      one frame per line, n detections
    gyro.csv   t,yaw_rate
    gt.csv     t,x,y,psi

Floats are written with ``repr`` so a write/read cycle is lossless and two
writes of the same recording are byte-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .encoders import RadarFrame
from .scenario import Recording

HEADERS = {
    "dvs": "t,x,y,p",
    "radar": "k,t,n,detections",
    "gyro": "t,yaw_rate",
    "gt": "t,x,y,psi",
}


class RecordingError(ValueError):
    """Malformed recording; the message names the file and line."""


def _f(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header: str, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        fh.writelines(rows)


def write_recording(rec: Recording, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w") as fh:
        json.dump(rec.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_rows(out / "dvs.csv", HEADERS["dvs"],
                (f"{_f(t)},{int(x)},{int(y)},{int(p)}\n" for t, x, y, p in rec.dvs.tolist()))
    _write_rows(out / "radar.csv", HEADERS["radar"],
                (",".join([str(f.k), _f(f.t), str(len(f.detections))]
                          + [_f(v) for v in f.detections.reshape(-1)]) + "\n" for f in rec.radar))
    _write_rows(out / "gyro.csv", HEADERS["gyro"], (f"{_f(t)},{_f(r)}\n" for t, r in rec.gyro.tolist()))
    _write_rows(out / "gt.csv", HEADERS["gt"], (",".join(map(_f, row)) + "\n" for row in rec.gt.tolist()))
    return out


def _read_table(path: Path, width: int, int_cols=()) -> np.ndarray:
    if not path.exists():
        raise RecordingError(f"{path}: missing")
    rows = []
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise RecordingError(f"{path}:1: empty file")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != width:
                raise RecordingError(f"{path}:{lineno}: expected {width} fields, got {len(parts)}")
            try:
                row = [float(v) for v in parts]
            except ValueError as exc:
                raise RecordingError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in row):
                raise RecordingError(f"{path}:{lineno}: non-finite value")
            if rows and row[0] < rows[-1][0]:
                raise RecordingError(f"{path}:{lineno}: timestamp goes backwards")
            rows.append(row)
    arr = np.array(rows, dtype=float).reshape(-1, width)
    for c in int_cols:
        if np.any(arr[:, c] != np.round(arr[:, c])):
            raise RecordingError(f"{path}: column {c} must hold integers")
    return arr


def _read_radar(path: Path) -> list:
    if not path.exists():
        raise RecordingError(f"{path}: missing")
    frames = []
    with open(path) as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            try:
                k, t, n = int(parts[0]), float(parts[1]), int(parts[2])
                vals = [float(v) for v in parts[3:]]
            except (ValueError, IndexError) as exc:
                raise RecordingError(f"{path}:{lineno}: {exc}") from None
            if len(vals) != 3 * n:
                raise RecordingError(f"{path}:{lineno}: header says {n} detections, found {len(vals) / 3:g}")
            if not math.isfinite(t) or not all(math.isfinite(v) for v in vals):
                raise RecordingError(f"{path}:{lineno}: non-finite value")
            if frames and t < frames[-1].t:
                raise RecordingError(f"{path}:{lineno}: timestamp goes backwards")
            frames.append(RadarFrame(t, np.array(vals).reshape(n, 3), k))
    return frames


def read_recording(in_dir) -> Recording:
    src = Path(in_dir)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except FileNotFoundError:
        raise RecordingError(f"{src / 'manifest.json'}: missing") from None
    except json.JSONDecodeError as exc:
        raise RecordingError(f"{src / 'manifest.json'}:{exc.lineno}: {exc.msg}") from None
    if "duration" not in manifest:
        raise RecordingError(f"{src / 'manifest.json'}: no duration")
    dvs = _read_table(src / "dvs.csv", 4, int_cols=(1, 2, 3))
    radar = _read_radar(src / "radar.csv")
    gyro = _read_table(src / "gyro.csv", 2)
    gt_path = src / "gt.csv"
    gt = _read_table(gt_path, 4) if gt_path.exists() else np.zeros((0, 4))
    return Recording(manifest, dvs, radar, gyro, gt)
