"""Windowed rate averaging, on-line standard scaling and code similarity."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

BLOCK_ORDER = ("dvs_pos", "dvs_neg", "radar")
EPS = 1e-8


@dataclass
class LatentCode:
    values: np.ndarray
    t: float


def average_window(blocks, window: float = 0.1, dt: float = 0.005) -> np.ndarray:
    """Mean firing rate (Hz) of each neuron over one window, blocks concatenated in order.

    Each block is a (n_bins, M) array of binary spikes covering exactly the
    window; a short block means the window is not yet complete.
    """
    n_bins = int(round(window / dt))
    rates = []
    for b in blocks:
        b = np.asarray(b)
        if b.ndim != 2 or b.shape[0] != n_bins:
            raise ValueError(f"block of shape {b.shape} does not cover {n_bins} bins")
        rates.append(b.sum(axis=0) / window)
    return np.concatenate(rates).astype(float)


@dataclass
class OnlineScaler:
    """Welford running mean/variance; ``step`` updates then standardises."""

    dim: int
    count: int = 0
    mean: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    @property
    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.dim)
        return np.sqrt(self.m2 / self.count)

    def update(self, x):
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / np.maximum(self.std, EPS)

    def step(self, x) -> np.ndarray:
        self.update(x)
        return self.transform(x)


def scaler_step(s: OnlineScaler, code: LatentCode) -> tuple[LatentCode, OnlineScaler]:
    out = s.step(code.values)
    return LatentCode(out, code.t), s


def similarity(a, b) -> float:
    a = np.asarray(getattr(a, "values", a), dtype=float)
    b = np.asarray(getattr(b, "values", b), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"code lengths differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < EPS or nb < EPS:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def similarity_matrix(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=float)
    norms = np.linalg.norm(codes, axis=1)
    unit = np.divide(codes, norms[:, None], out=np.zeros_like(codes), where=norms[:, None] >= EPS)
    return np.clip(unit @ unit.T, -1.0, 1.0)


class CodeFuser:
    """Turns per-ensemble coding spikes into scaled latent codes every window.

    Blocks must follow the canonical order (positive DVS, negative DVS,
    radar); any subset is allowed for single-modality runs. A block whose
    neurons were all silent over a window is treated as a missing modality:
    its scaled entries are zero and its statistics are not updated. With
    ``stride < window`` consecutive windows overlap.
    """

    def __init__(self, blocks=BLOCK_ORDER, m: int = 64, window: float = 0.1, dt: float = 0.005,
                 mask_silent: bool = True, stride: float | None = None):
        blocks = tuple(blocks)
        if not blocks or any(b not in BLOCK_ORDER for b in blocks):
            raise ValueError(f"unknown block in {blocks}")
        order = [BLOCK_ORDER.index(b) for b in blocks]
        if order != sorted(order) or len(set(order)) != len(order):
            raise ValueError(f"blocks must follow the order {BLOCK_ORDER}, got {blocks}")
        self.blocks = blocks
        self.m = m
        self.window = window
        self.dt = dt
        self.n_bins = int(round(window / dt))
        self.n_stride = int(round((window if stride is None else stride) / dt))
        if self.n_bins < 1 or not 1 <= self.n_stride <= self.n_bins:
            raise ValueError("need 0 < stride <= window, both at least one bin")
        self.mask_silent = mask_silent
        self.scalers = {b: OnlineScaler(m) for b in blocks}
        self._buf = {b: deque(maxlen=self.n_bins) for b in blocks}
        self._seen = 0

    @property
    def dim(self) -> int:
        return self.m * len(self.blocks)

    def push(self, spikes: dict, t_end: float):
        """Add one bin of coding spikes; returns (raw, scaled) codes when a window completes."""
        for b in self.blocks:
            self._buf[b].append(np.asarray(spikes[b]))
        self._seen += 1
        if self._seen < self.n_bins or (self._seen - self.n_bins) % self.n_stride:
            return None
        raw = average_window([np.stack(self._buf[b]) for b in self.blocks], self.window, self.dt)
        return LatentCode(raw, t_end), LatentCode(self.scale(raw), t_end)

    def scale(self, raw: np.ndarray) -> np.ndarray:
        out = np.zeros_like(raw)
        for i, b in enumerate(self.blocks):
            part = raw[i * self.m:(i + 1) * self.m]
            if self.mask_silent and not part.any():
                continue
            out[i * self.m:(i + 1) * self.m] = self.scalers[b].step(part)
        return out
