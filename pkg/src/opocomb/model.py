"""Physical parameters and the classical operating point of an above-threshold OPO.

All downstream physics depends only on the pump/signal loss ratio ``kappa``,
the pump-to-threshold power ratio ``sigma``, the number of signal/idler pairs
``n`` and frequencies measured in units of ``k_a``.  The defaults therefore
normalise ``k_a = chi = 1`` and take ``k_p = kappa``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class OpoParams:
    """Configuration of a single OPO with ``n`` signal/idler pairs.

    ``amplitude_profile`` fixes the relative sizes of the classical signal
    amplitudes; only its direction matters, the norm is set by ``sigma``.
    ``omega_p`` and ``fsr`` are bookkeeping only.
    """

    k_a: float = 1.0
    k_p: float = 1.0
    chi: float = 1.0
    n: int = 1
    sigma: float = 1.0
    amplitude_profile: tuple = field(default=None)
    omega_p: Optional[float] = None
    fsr: Optional[float] = None

    def __post_init__(self):
        for name in ("k_a", "k_p", "chi"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if not (math.isfinite(self.sigma) and self.sigma >= 1.0):
            raise ValueError(f"sigma must be >= 1 (above threshold), got {self.sigma!r}")
        if self.amplitude_profile is None:
            profile = (1.0,) * self.n
        else:
            profile = tuple(float(p) for p in self.amplitude_profile)
        if len(profile) != self.n:
            raise ValueError(f"amplitude_profile has length {len(profile)}, expected n={self.n}")
        if any(not math.isfinite(p) or p < 0 for p in profile) or max(profile) <= 0:
            raise ValueError("amplitude_profile needs nonnegative entries, at least one > 0")
        object.__setattr__(self, "amplitude_profile", profile)

    @classmethod
    def from_dimensionless(cls, kappa, sigma, n, profile=None, k_a=1.0, chi=1.0):
        return cls(k_a=k_a, k_p=kappa * k_a, chi=chi, n=n, sigma=sigma,
                   amplitude_profile=profile)

    @classmethod
    def from_json(cls, data: dict) -> "OpoParams":
        """Build from ``{"kappa", "sigma", "n", "profile"?, "k_a"?, "chi"?}``."""
        allowed = {"kappa", "sigma", "n", "profile", "k_a", "chi"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
        missing = {"kappa", "sigma", "n"} - set(data)
        if missing:
            raise ValueError(f"missing parameter keys: {sorted(missing)}")
        return cls.from_dimensionless(
            kappa=float(data["kappa"]), sigma=float(data["sigma"]), n=data["n"],
            profile=data.get("profile"), k_a=float(data.get("k_a", 1.0)),
            chi=float(data.get("chi", 1.0)))

    def to_json(self) -> dict:
        return {"kappa": self.kappa, "sigma": self.sigma, "n": self.n,
                "profile": list(self.amplitude_profile), "k_a": self.k_a, "chi": self.chi}

    @property
    def kappa(self) -> float:
        return self.k_p / self.k_a

    @property
    def equal_amplitudes(self) -> bool:
        p = self.amplitude_profile
        return all(abs(x - p[0]) <= 1e-12 * abs(p[0]) for x in p)

    def profile_ratio(self, i: int, j: int) -> float:
        """alpha_i / alpha_j for 1-based pair indices, defined even at threshold."""
        num, den = self.amplitude_profile[i - 1], self.amplitude_profile[j - 1]
        if den == 0:
            raise ValueError(f"pair {j} has zero amplitude; ratio undefined")
        return num / den

    def comb_frequencies(self) -> dict:
        """Mode frequencies omega_{+-i} = omega_p/2 +- (i + 1/2) * fsr."""
        if self.omega_p is None or self.fsr is None:
            raise ValueError("omega_p and fsr are not set")
        freqs = {}
        for i in range(1, self.n + 1):
            freqs[i] = self.omega_p / 2 + (i + 0.5) * self.fsr
            freqs[-i] = self.omega_p / 2 - (i + 0.5) * self.fsr
        return freqs

    def with_sigma(self, sigma: float) -> "OpoParams":
        return OpoParams(k_a=self.k_a, k_p=self.k_p, chi=self.chi, n=self.n, sigma=sigma,
                         amplitude_profile=self.amplitude_profile,
                         omega_p=self.omega_p, fsr=self.fsr)


@dataclass(frozen=True)
class SteadyState:
    alpha: np.ndarray
    pump_mean: float
    pump_in: float
    phases: np.ndarray

    @property
    def total_power(self) -> float:
        """Sum of alpha_i**2."""
        return float(np.dot(self.alpha, self.alpha))


def threshold_pump(params: OpoParams) -> float:
    """External pump amplitude at which oscillation starts."""
    return params.k_a / (2 * params.chi) * math.sqrt(params.k_p / 2)


def pump_ratio(pump_in: float, params: OpoParams) -> float:
    """sigma implied by a drive amplitude: (pump_in / threshold)**2."""
    return (pump_in / threshold_pump(params)) ** 2


def steady_state(params: OpoParams) -> SteadyState:
    """Classical amplitudes satisfying 4 chi^2 sum(alpha^2) = k_a k_p (sqrt(sigma) - 1).

    Phases are gauged so that every alpha_i is real and positive.
    """
    if params.sigma < 1:
        raise ValueError("below threshold: no oscillating steady state")
    target = params.k_a * params.k_p * (math.sqrt(params.sigma) - 1) / (4 * params.chi ** 2)
    profile = np.asarray(params.amplitude_profile, dtype=float)
    alpha = profile * math.sqrt(target / np.dot(profile, profile))
    return SteadyState(
        alpha=alpha,
        pump_mean=params.k_a / (2 * params.chi),
        pump_in=math.sqrt(params.sigma) * threshold_pump(params),
        phases=np.zeros(params.n),
    )


def threshold_residual(params: OpoParams, ss: SteadyState) -> float:
    """|4 chi^2 sum(alpha^2) - k_a k_p (sqrt(sigma) - 1)|."""
    lhs = 4 * params.chi ** 2 * ss.total_power
    return abs(lhs - params.k_a * params.k_p * (math.sqrt(params.sigma) - 1))


def check_consistent(params: OpoParams, ss: SteadyState) -> None:
    if len(ss.alpha) != params.n:
        raise ValueError(f"steady state has {len(ss.alpha)} pairs, params has n={params.n}")
