"""Time-domain Monte-Carlo check of the DC output variances.

The linearised quadrature Langevin equations are integrated with
Euler-Maruyama, driven by white noise of the same powers as the vacuum
inputs (2 per sum/difference channel, 1 per pump channel).  The output
out = sqrt(2k) x - x_in is projected on a witness and passed through two
Gaussian low-pass windows of widths tau and 2 tau (tau = 1/bandwidth), each
normalised to unit energy, so that E[Y^2] is the output spectral density
smoothed over |omega| ~ 1/tau.  The combination (4 Y_2tau^2 - Y_tau^2) / 3
removes the leading omega^2 smoothing bias and is averaged over
trajectories.

Euler-Maruyama reproduces the DC gain of the continuous system exactly
(summing the update gives sum(x) dt = A^-1 (x_end - x_0 - B W)), so the
remaining bias is the O(tau^-4) smoothing error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import UnstableDynamicsError
from .model import OpoParams, SteadyState, steady_state
from .spectra import QuadratureBasis, Witness, drift_matrices

# window half-width in units of the wider kernel's standard deviation
WINDOW_WIDTHS = 4.0
_BLOCK_STEPS = 250
_CHUNK_TRAJ = 5000


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_total: float
    n_traj: int
    seed: int
    burn_in: float
    lowpass_bandwidth: float
    # each Euler increment is the sum of this many sub-increments, so a run at
    # (dt, r) and one at (dt/2, r/2) see the same Brownian path
    noise_refinement: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.n_traj < 2 or self.lowpass_bandwidth <= 0 or self.burn_in < 0:
            raise ValueError(f"invalid simulation config {self}")
        if self.noise_refinement < 1:
            raise ValueError("noise_refinement must be >= 1")
        if self.t_total < self.burn_in + self.window:
            raise ValueError(
                f"t_total={self.t_total} shorter than burn_in + filter window "
                f"({self.burn_in} + {self.window})")

    @property
    def tau(self) -> float:
        return 1.0 / self.lowpass_bandwidth

    @property
    def window(self) -> float:
        return 2 * WINDOW_WIDTHS * 2 * self.tau

    @classmethod
    def for_params(cls, params: OpoParams, n_traj: int = 10_000, seed: int = 0,
                   dt: Optional[float] = None, bandwidth: Optional[float] = None) -> "SimConfig":
        """Defaults that satisfy the step-size and burn-in constraints for ``params``."""
        rate = slowest_decay(params)
        dt = dt if dt is not None else 0.01 / max(params.k_a, params.k_p)
        bandwidth = bandwidth if bandwidth is not None else min(0.2 * rate, 0.1 * params.k_a)
        burn_in = 10.0 / rate
        window = 2 * WINDOW_WIDTHS * 2 / bandwidth
        return cls(dt=dt, t_total=burn_in + window, n_traj=n_traj, seed=seed,
                   burn_in=burn_in, lowpass_bandwidth=bandwidth)

    def check_against(self, params: OpoParams) -> None:
        """Raise if dt or burn-in violate the constraints for these parameters."""
        if self.dt > 0.01 / max(params.k_a, params.k_p) * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds 0.01/max(k_a, k_p)")
        if self.burn_in < 10.0 / slowest_decay(params) * (1 - 1e-12):
            raise ValueError(f"burn_in={self.burn_in} shorter than 10 slowest decay times")


class McEstimate(NamedTuple):
    estimate: float
    stderr: float

    @property
    def undersampled(self) -> bool:
        return self.stderr > 0.1 * abs(self.estimate)


def _simulated_channels(basis: QuadratureBasis, witnesses=None):
    """Channels of the decoupled sectors the witnesses touch (all sectors if None).

    P-i are free integrators with no DC output and are never simulated.
    """
    n = basis.n
    sectors = [[basis.qp(i) for i in range(1, n + 1)] + [basis.q_pump],
               [basis.pp(i) for i in range(1, n + 1)] + [basis.p_pump]]
    sectors += [[basis.qm(i)] for i in range(1, n + 1)]
    if witnesses is None:
        chosen = sectors
    else:
        chosen = [sec for sec in sectors if any(w.touches(sec) for w in witnesses)]
    return sorted(c for sec in chosen for c in sec)


def slowest_decay(params: OpoParams, ss: Optional[SteadyState] = None) -> float:
    """Smallest nonzero decay rate of the simulated drift (zero modes excluded)."""
    ss = ss if ss is not None else steady_state(params)
    A, _ = drift_matrices(params, ss)
    keep = _simulated_channels(QuadratureBasis(params.n))
    re = -np.linalg.eigvals(A[np.ix_(keep, keep)]).real
    decaying = re[re > 1e-9 * params.k_a]
    return float(decaying.min())


def trajectory_generator(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for trajectory ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _gaussian_kernel(times, center, width, dt):
    g = np.exp(-0.5 * ((times - center) / width) ** 2)
    return g / math.sqrt(np.sum(g * g) * dt)


def simulate_dc_variances(witnesses: Sequence[Witness], params: OpoParams,
                          ss: Optional[SteadyState], cfg: SimConfig) -> list[McEstimate]:
    """Monte-Carlo DC variance of several witnesses from one shared set of trajectories."""
    ss = ss if ss is not None else steady_state(params)
    basis = QuadratureBasis(params.n)
    for w in witnesses:
        if w.n != params.n:
            raise ValueError("witness pair count does not match params")
        if w.touches(basis.p_minus_indices()):
            raise ValueError("P-i channels have no DC limit; witness must not use them")

    A_full, b_full = drift_matrices(params, ss)
    keep = _simulated_channels(basis, witnesses)
    A = A_full[np.ix_(keep, keep)]
    b = b_full[keep]
    noise = basis.noise[keep]
    max_re = float(np.max(np.linalg.eigvals(A).real))
    if max_re > 1e-10 * params.k_a:
        raise UnstableDynamicsError(f"linearised dynamics grow at rate {max_re:g}")

    W = np.array([w.weights[keep] for w in witnesses])          # (k, m)
    Wb = W * b                                                    # weights on internal states
    dim = len(keep)
    steps = int(round(cfg.t_total / cfg.dt))
    times = np.arange(steps) * cfg.dt
    center = cfg.burn_in + 0.5 * (cfg.t_total - cfg.burn_in)
    kernels = np.stack([_gaussian_kernel(times, center, cfg.tau, cfg.dt),
                        _gaussian_kernel(times, center, 2 * cfg.tau, cfg.dt)])
    first = int(np.searchsorted(times, center - WINDOW_WIDTHS * 2 * cfg.tau))
    kernels[:, :first] = 0.0
    step_T = (np.eye(dim) + cfg.dt * A).T
    sqrt_noise = np.sqrt(noise * cfg.dt / cfg.noise_refinement)

    Z = np.empty((len(witnesses), cfg.n_traj))
    for start in range(0, cfg.n_traj, _CHUNK_TRAJ):
        stop = min(start + _CHUNK_TRAJ, cfg.n_traj)
        gens = [trajectory_generator(cfg.seed, t) for t in range(start, stop)]
        count = stop - start
        x = np.zeros((count, dim))
        Y = np.zeros((len(witnesses), 2, count))
        for block in range(0, steps, _BLOCK_STEPS):
            nb = min(_BLOCK_STEPS, steps - block)
            raw = np.stack([g.standard_normal((nb, cfg.noise_refinement, dim)) for g in gens], axis=1)
            dW = raw.sum(axis=2) * sqrt_noise                     # (nb, count, m)
            drive = dW * b
            states = np.empty((nb, count, dim))
            for s in range(nb):
                states[s] = x
                x = x @ step_T
                x += drive[s]
            if not np.all(np.isfinite(x)):
                raise UnstableDynamicsError("trajectories diverged")
            kern = kernels[:, block:block + nb]
            if not kern.any():
                continue
            # output increments: w.(b x) dt - w.dW
            out = states @ (Wb.T * cfg.dt) - dW @ W.T             # (nb, count, k)
            Y += np.einsum("stk,fs->kft", out, kern)
        Z[:, start:stop] = (4 * Y[:, 1] ** 2 - Y[:, 0] ** 2) / 3
    return [McEstimate(float(z.mean()), float(z.std(ddof=1) / math.sqrt(len(z)))) for z in Z]


def simulate_dc_variance(w: Witness, params: OpoParams, ss: Optional[SteadyState],
                         cfg: SimConfig) -> McEstimate:
    return simulate_dc_variances([w], params, ss, cfg)[0]


def refined(cfg: SimConfig) -> SimConfig:
    """Same Brownian paths at half the step size (requires even ``noise_refinement``)."""
    if cfg.noise_refinement % 2:
        raise ValueError("noise_refinement must be even to halve dt on the same path")
    return replace(cfg, dt=cfg.dt / 2, noise_refinement=cfg.noise_refinement // 2)
