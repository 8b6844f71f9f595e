"""Flat pipeline configuration, loadable from YAML.

Key names follow the usual SNN-STDP parameter table (``mu_pos_neg`` is the
threshold shared by both DVS polarity ensembles, ``mu_r`` the radar one).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

MODES = ("dvs", "radar", "fused")
MODE_BLOCKS = {
    "dvs": ("dvs_pos", "dvs_neg"),
    "radar": ("radar",),
    "fused": ("dvs_pos", "dvs_neg", "radar"),
}
DEFAULT_THETA = {"dvs": 0.85, "radar": 0.85, "fused": 0.85}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    eta_d: float = 3e-4
    eta_c: float = 1.0
    M: int = 64
    mu_pos_neg: float = 0.3
    mu_r: float = 0.03
    tau_m_pos_neg: float = 0.017
    tau_m_r: float = 0.17
    a_p: float = 1.0
    a_n: float = 0.8
    tau_p: float = 0.0208
    tau_n: float = 0.008
    lambda2: float = 0.1
    error_mu_ratio: float = 1.0 / 3.0
    # synaptic scaling target; 1/sqrt(3) is the expected column norm of the
    # U[0, 1/sqrt(N)] initialisation for any N. None: plain STDP
    phi_norm: float | None = 1.0 / math.sqrt(3.0)
    dt: float = 0.005
    window: float = 0.1
    stride: float = 0.1
    oversample: int = 10
    theta: float | None = None  # None: per-mode default
    alpha: float = 0.5
    relax_iters: int = 20
    recency: int = 50
    theta_v_deg: float = 60.0
    mask_silent: bool = True
    seed: int = 0

    def __post_init__(self):
        positive = ("eta_d", "eta_c", "mu_pos_neg", "mu_r", "tau_m_pos_neg", "tau_m_r", "a_p", "a_n",
                    "tau_p", "tau_n", "lambda2", "error_mu_ratio", "dt", "window", "stride", "alpha",
                    "theta_v_deg")
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        for name in ("M", "oversample", "relax_iters", "recency"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < (1 if name in ("M", "oversample") else 0):
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.phi_norm is not None and not (isinstance(self.phi_norm, (int, float)) and self.phi_norm > 0):
            raise ConfigError(f"phi_norm must be a positive number or null, got {self.phi_norm!r}")
        if self.theta is not None and not 0.0 < self.theta < 1.0:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if self.alpha > 1.0:
            raise ConfigError("alpha must not exceed 1")
        if self.stride > self.window + 1e-12:
            raise ConfigError("stride must not exceed window")
        for name in ("window", "stride"):
            ratio = getattr(self, name) / self.dt
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(f"{name} must be a multiple of dt")
        if self.dt > min(self.tau_m_pos_neg, self.tau_m_r):
            raise ConfigError("dt must not exceed the membrane time constants")

    def theta_for(self, mode: str) -> float:
        return DEFAULT_THETA[mode] if self.theta is None else self.theta

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "PipelineConfig":
        d = dict(d or {})
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for f in fields(cls):
            if f.name in d and f.type in ("float", "float | None") and isinstance(d[f.name], int) \
                    and not isinstance(d[f.name], bool):
                d[f.name] = float(d[f.name])
        return cls(**d)


def load_yaml(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of keys to values")
    return data


def load_config(path=None) -> PipelineConfig:
    return PipelineConfig.from_dict(load_yaml(path) if path else {})
