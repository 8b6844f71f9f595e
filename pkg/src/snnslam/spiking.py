"""
Leaky integrate-and-fire dynamics and the SNN-STDP sparse-coding ensemble.

An ensemble couples M coding neurons and N error neurons:

    coding current  J_c = eta_c * Phi^T s(t) + W c(t-1)
    error current   J_e = Psi c(t-1) - eta_c * s(t)

Both populations are forward-Euler LIF units with reset to zero. The weights
Phi, W and Psi adapt continually through nearest-neighbour pair STDP plus a
multiplicative decay that realises the Frobenius penalty of the sparse-coding
objective. Phi and Psi share one update: input-to-coding pairs potentiate and
coding-to-error pairs (the code over-predicting an input) depress. Optional
synaptic scaling (``phi_norm``) rescales a coding neuron's Phi column to a
fixed L2 norm each time it fires, which stops a few busy neurons from
absorbing the whole dictionary on long non-stationary streams.
The objective itself is only ever evaluated for monitoring.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class SpikingInputError(ValueError):
    """Raised for non-finite currents or inputs of the wrong shape."""


@dataclass(frozen=True)
class LifParams:
    tau_m: float = 0.017
    mu: float = 0.3
    dt: float = 0.005

    def __post_init__(self):
        if not (self.tau_m > 0 and self.mu > 0 and self.dt > 0):
            raise ValueError("tau_m, mu and dt must be strictly positive")
        if self.dt > self.tau_m:
            raise ValueError(f"dt={self.dt} exceeds tau_m={self.tau_m}; Euler step unstable")


@dataclass
class LifState:
    v: float = 0.0
    last_spike_time: float | None = None


@dataclass(frozen=True)
class StdpParams:
    eta_d: float = 3e-4
    a_p: float = 1.0
    a_n: float = 0.8
    tau_p: float = 0.0208
    tau_n: float = 0.008
    lambda2: float = 0.1
    eta_c: float = 1.0
    # L2 norm a Phi column is rescaled to whenever its neuron fires; None
    # (plain STDP) disables the scaling
    phi_norm: float | None = None

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "phi_norm" and value is None:
                continue
            if not value > 0:
                raise ValueError(f"StdpParams.{name} must be > 0, got {value}")


@dataclass(frozen=True)
class SpikeVector:
    bits: np.ndarray
    t: float


def lif_step(state: LifState, params: LifParams, j_in: float, t: float | None = None):
    """Advance one LIF neuron by one Euler step.

    Returns ``(spike, new_state)``; the input state is left untouched.
    """
    if not math.isfinite(j_in):
        raise SpikingInputError(f"non-finite input current {j_in!r}")
    v = state.v + (params.dt / params.tau_m) * (j_in - state.v)
    if v >= params.mu:
        return 1, LifState(0.0, t if t is not None else state.last_spike_time)
    return 0, LifState(v, state.last_spike_time)


def analytic_rate(j_in: float, mu: float, tau_m: float) -> float:
    """Continuous-time firing rate of a LIF neuron under constant input (Hz)."""
    if j_in <= mu:
        return 0.0
    return 1.0 / (tau_m * math.log(j_in / (j_in - mu)))


def stdp_kernel(tau, p: StdpParams):
    """Pair kernel: ``a_p exp(-tau/tau_p)`` for tau >= 0, ``-a_n exp(tau/tau_n)`` otherwise.

    Accepts scalars or arrays; ``tau = +inf`` maps to 0 so missing partners
    contribute nothing.
    """
    tau = np.asarray(tau, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        ltp = p.a_p * np.exp(-np.where(tau >= 0, tau, 0.0) / p.tau_p)
        ltd = -p.a_n * np.exp(np.where(tau < 0, tau, 0.0) / p.tau_n)
    out = np.where(tau >= 0, ltp, ltd)
    return float(out) if out.ndim == 0 else out


def reconstruction_objective(phi, c_bar, s_bar, lambda1: float, lambda2: float) -> float:
    """||Phi c - s||^2 + lambda1 ||c||_1 + lambda2/2 ||Phi||_F^2 for rate vectors c, s."""
    phi = np.asarray(phi, dtype=float)
    c_bar = np.asarray(c_bar, dtype=float)
    s_bar = np.asarray(s_bar, dtype=float)
    if phi.ndim != 2 or phi.shape != (s_bar.shape[0], c_bar.shape[0]):
        raise SpikingInputError(
            f"phi {phi.shape} incompatible with s {s_bar.shape} and c {c_bar.shape}"
        )
    resid = phi @ c_bar - s_bar
    return float(resid @ resid + lambda1 * np.abs(c_bar).sum() + 0.5 * lambda2 * np.sum(phi * phi))


# clip bounds and the sign applied to the STDP delta for each plastic matrix;
# W is inhibitory, so potentiation deepens the (negative) weight
PHI_BOUNDS = (-2.0, 2.0)
PSI_BOUNDS = (-2.0, 2.0)
W_BOUNDS = (-2.0, 0.0)


def _pair_update(weights, sign, bounds, pre_idx, post_idx, t_pre, t_post, t, p: StdpParams):
    """Nearest-neighbour STDP on a [pre, post] oriented weight view.

    ``t_pre``/``t_post`` already hold the current step's spikes. A post spike
    pairs with each presynaptic last spike (tau >= 0, coincident spikes
    included); a pre spike pairs with each strictly earlier postsynaptic
    last spike (tau < 0).
    """
    scale = sign * p.eta_d
    if post_idx.size:
        tau = t - t_pre  # +inf for presynaptic neurons that never fired
        dk = stdp_kernel(tau, p)
        weights[:, post_idx] += scale * dk[:, None]
    if pre_idx.size:
        tau = t_post - t
        earlier = tau < 0
        if earlier.any():
            dk = np.where(earlier, stdp_kernel(np.where(earlier, tau, -np.inf), p), 0.0)
            weights[pre_idx, :] += scale * dk[None, :]
    if post_idx.size:
        weights[:, post_idx] = np.clip(weights[:, post_idx], *bounds)
    if pre_idx.size:
        weights[pre_idx, :] = np.clip(weights[pre_idx, :], *bounds)


@dataclass
class SnnStdpEnsemble:
    """One coding/error LIF population pair with plastic Phi, W, Psi.

    Use :meth:`create` for the seeded default initialisation
    (Phi ~ U[0, 1/sqrt(N)], Psi = Phi, W = -Phi^T Phi).
    """

    phi: np.ndarray
    w: np.ndarray
    psi: np.ndarray
    lif_coding: LifParams
    lif_error: LifParams
    stdp: StdpParams
    seed: int = 0
    learning: bool = True
    step_count: int = 0
    v_coding: np.ndarray = field(default=None)
    v_error: np.ndarray = field(default=None)
    t_input: np.ndarray = field(default=None)
    t_coding: np.ndarray = field(default=None)
    t_delivered: np.ndarray = field(default=None)
    t_error: np.ndarray = field(default=None)
    c_prev: np.ndarray = field(default=None)

    def __post_init__(self):
        # column-major: STDP touches whole columns (one per spiking neuron)
        self.phi = np.array(self.phi, dtype=float, order="F")
        self.w = np.array(self.w, dtype=float)
        self.psi = np.array(self.psi, dtype=float, order="F")
        n, m = self.phi.shape
        if self.w.shape != (m, m) or self.psi.shape != (n, m):
            raise SpikingInputError(
                f"inconsistent shapes phi {self.phi.shape}, w {self.w.shape}, psi {self.psi.shape}"
            )
        if self.lif_coding.dt != self.lif_error.dt:
            raise ValueError("coding and error populations must share dt")
        if self.v_coding is None:
            self.reset_state()

    @classmethod
    def create(cls, n_inputs: int, n_coding: int, lif_coding: LifParams | None = None,
               lif_error: LifParams | None = None, stdp: StdpParams | None = None,
               seed: int = 0) -> "SnnStdpEnsemble":
        rng = np.random.default_rng(seed)
        phi = rng.uniform(0.0, 1.0 / math.sqrt(n_inputs), size=(n_inputs, n_coding))
        w = np.clip(-(phi.T @ phi), *W_BOUNDS)
        lif_coding = lif_coding or LifParams()
        return cls(phi=phi, w=w, psi=phi.copy(), lif_coding=lif_coding,
                   lif_error=lif_error or lif_coding, stdp=stdp or StdpParams(), seed=seed)

    @property
    def n_inputs(self) -> int:
        return self.phi.shape[0]

    @property
    def n_coding(self) -> int:
        return self.phi.shape[1]

    @property
    def dt(self) -> float:
        return self.lif_coding.dt

    def reset_state(self):
        """Zero potentials and forget all spike history; weights are kept."""
        n, m = self.phi.shape
        self.v_coding = np.zeros(m)
        self.v_error = np.zeros(n)
        self.t_input = np.full(n, -np.inf)
        self.t_coding = np.full(m, -np.inf)
        self.t_delivered = np.full(m, -np.inf)
        self.t_error = np.full(n, -np.inf)
        self.c_prev = np.zeros(m, dtype=bool)

    def step(self, s_t) -> tuple[np.ndarray, np.ndarray]:
        """Advance one timestep with binary input ``s_t``; returns (coding, error) spikes."""
        s = np.asarray(s_t.bits if isinstance(s_t, SpikeVector) else s_t)
        if s.shape != (self.n_inputs,):
            raise SpikingInputError(f"expected input of length {self.n_inputs}, got {s.shape}")
        s = s.astype(bool, copy=False)
        eta_c = self.stdp.eta_c
        active = np.flatnonzero(s)
        delivered = np.flatnonzero(self.c_prev)

        j_c = eta_c * self.phi[active].sum(axis=0)
        j_e = -eta_c * s.astype(float)
        if delivered.size:
            j_c += self.w[:, delivered].sum(axis=1)
            j_e += self.psi[:, delivered].sum(axis=1)

        lc, le = self.lif_coding, self.lif_error
        self.v_coding += (lc.dt / lc.tau_m) * (j_c - self.v_coding)
        self.v_error += (le.dt / le.tau_m) * (j_e - self.v_error)
        c = self.v_coding >= lc.mu
        e = self.v_error >= le.mu
        self.v_coding[c] = 0.0
        self.v_error[e] = 0.0

        t = self.step_count * self.dt
        self.t_input[active] = t
        self.t_coding[c] = t
        self.t_delivered[delivered] = t
        self.t_error[e] = t
        if self.learning:
            self.stdp_apply(t, active, np.flatnonzero(c), delivered, np.flatnonzero(e))
        self.c_prev = c
        self.step_count += 1
        return c.astype(np.uint8), e.astype(np.uint8)

    def stdp_apply(self, t: float, input_idx, coding_idx, delivered_idx, error_idx):
        """Pair STDP on all three matrices for this step's spikes, then decay."""
        p = self.stdp
        # W[m, j]: coding j (delivered one step later) -> coding m
        _pair_update(self.w.T, -1.0, W_BOUNDS, delivered_idx, coding_idx,
                     self.t_delivered, self.t_coding, t, p)
        # Phi and Psi both hold the dictionary: input->coding pairs potentiate,
        # coding->error pairs (over-prediction of input i) depress
        for mat in (self.phi, self.psi):
            _pair_update(mat, 1.0, PHI_BOUNDS, input_idx, coding_idx,
                         self.t_input, self.t_coding, t, p)
            _pair_update(mat.T, -1.0, PSI_BOUNDS, delivered_idx, error_idx,
                         self.t_delivered, self.t_error, t, p)
        decay = 1.0 - p.eta_d * p.lambda2
        self.phi *= decay
        self.w *= decay
        self.psi *= decay
        if p.phi_norm is not None and coding_idx.size:
            cols = self.phi[:, coding_idx]
            norm = np.sqrt(np.einsum("ij,ij->j", cols, cols))
            self.phi[:, coding_idx] = cols * (p.phi_norm / np.maximum(norm, 1e-12))

    def run(self, inputs, learning: bool | None = None):
        """Feed a (T, N) binary array; returns stacked (T, M) coding and (T, N) error spikes."""
        saved = self.learning
        if learning is not None:
            self.learning = learning
        try:
            out_c, out_e = [], []
            for row in np.asarray(inputs):
                c, e = self.step(row)
                out_c.append(c)
                out_e.append(e)
        finally:
            self.learning = saved
        return np.array(out_c).reshape(-1, self.n_coding), np.array(out_e).reshape(-1, self.n_inputs)

    def copy(self) -> "SnnStdpEnsemble":
        return SnnStdpEnsemble(
            phi=self.phi.copy(), w=self.w.copy(), psi=self.psi.copy(),
            lif_coding=self.lif_coding, lif_error=self.lif_error, stdp=self.stdp,
            seed=self.seed, learning=self.learning, step_count=self.step_count,
            v_coding=self.v_coding.copy(), v_error=self.v_error.copy(),
            t_input=self.t_input.copy(), t_coding=self.t_coding.copy(),
            t_delivered=self.t_delivered.copy(), t_error=self.t_error.copy(),
            c_prev=self.c_prev.copy(),
        )

    # snapshot container: a single .npz holding arrays plus a JSON header

    def save(self, path):
        header = {
            "n_inputs": self.n_inputs,
            "n_coding": self.n_coding,
            "lif_coding": asdict(self.lif_coding),
            "lif_error": asdict(self.lif_error),
            "stdp": asdict(self.stdp),
            "seed": self.seed,
            "step_count": self.step_count,
            "learning": self.learning,
        }
        with open(path, "wb") as fh:
            np.savez(
                fh, header=np.array(json.dumps(header, sort_keys=True)),
                phi=self.phi, w=self.w, psi=self.psi,
                v_coding=self.v_coding, v_error=self.v_error,
                t_input=self.t_input, t_coding=self.t_coding,
                t_delivered=self.t_delivered, t_error=self.t_error, c_prev=self.c_prev,
            )

    @classmethod
    def load(cls, path) -> "SnnStdpEnsemble":
        with np.load(Path(path), allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            arrays = {k: data[k].copy() for k in data.files if k != "header"}
        ens = cls(
            phi=arrays.pop("phi"), w=arrays.pop("w"), psi=arrays.pop("psi"),
            lif_coding=LifParams(**header["lif_coding"]),
            lif_error=LifParams(**header["lif_error"]),
            stdp=StdpParams(**header["stdp"]),
            seed=header["seed"], learning=header["learning"],
            step_count=header["step_count"], **arrays,
        )
        if ens.phi.shape != (header["n_inputs"], header["n_coding"]):
            raise SpikingInputError("snapshot header does not match stored weights")
        return ens
