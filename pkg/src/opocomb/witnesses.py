"""van Loock-Furusawa inseparability tests for the comb partitions.

Every test pairs an amplitude-type witness ``u`` with a phase-type witness
``v``; a separable state obeys

    V(u) + V(v) >= 2 (|sum_A h g| + |sum_B h g|)

for the mode bipartition A|B, where h and g are the single-mode weights of
``u`` and ``v``.  Modes are labelled +i, -i for the signals and 0 for the pump.
All variances are evaluated at DC.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalError
from .model import OpoParams, SteadyState, steady_state
from .spectra import QuadratureBasis, Witness, witness_variance_dc

log = logging.getLogger(__name__)

KINDS = ("S1", "S2", "S3", "S4", "S2p")
X_KINDS = ("S1", "S2", "S3")
X_MIN, X_MAX = 1e-3, 1e3
PRESCAN_POINTS = 50
GOLDEN_RTOL = 1e-8


@dataclass
class VlfCase:
    kind: str
    n: int
    j: Optional[int]
    k: Optional[int]
    x: Optional[float]
    u: Witness
    v: Witness
    partition: tuple
    bound: float


@dataclass
class VlfResult:
    kind: str
    S: float
    bound: float
    violation: float
    x_opt: Optional[float] = None
    converged: bool = True
    V_u: float = math.nan
    V_v: float = math.nan
    boundary_pinned: bool = False

    @property
    def inseparable(self) -> bool:
        return self.violation < 0

    def to_json(self) -> dict:
        def num(v):
            if v is None:
                return None
            return v if math.isfinite(v) else str(v)

        return {"kind": self.kind, "S": num(self.S), "bound": self.bound,
                "violation": num(self.violation), "x_opt": num(self.x_opt),
                "converged": self.converged, "V_u": num(self.V_u), "V_v": num(self.V_v),
                "boundary_pinned": self.boundary_pinned}


def _partition(kind: str, n: int, j: int, k: Optional[int]) -> tuple:
    signals = {s * i for i in range(1, n + 1) for s in (1, -1)}
    everything = signals | {0}
    if kind == "S1":
        a = {0}
    elif kind in ("S2", "S2p"):
        a = {j, -j}
    elif kind == "S3":
        a = {s * i for i in range(1, k + 1) for s in (1, -1)}
    else:
        a = set(range(1, k + 1))
    return frozenset(a), frozenset(everything - a)


def vlf_bound(u: Witness, v: Witness, partition) -> float:
    """Right-hand side 2 (|sum_A h g| + |sum_B h g|) from the single-mode weights."""
    h, _ = u.mode_weights()
    _, g = v.mode_weights()
    total = 0.0
    for side in partition:
        total += abs(sum(h[m] * g[m] for m in side))
    return 2 * total


def _validate_indices(kind, n, j, k):
    if kind not in KINDS:
        raise ValueError(f"unknown vLF kind {kind!r}; expected one of {KINDS}")
    if kind != "S1" and n < 2:
        raise ValueError(f"{kind} needs at least two pairs")
    if not 1 <= j <= n:
        raise ValueError(f"j={j} out of range 1..{n}")
    if kind in ("S3", "S4"):
        if k is None or not 1 <= k <= n - 1:
            raise ValueError(f"{kind} needs 1 <= k <= n-1, got k={k}")


def build_case(kind: str, params: OpoParams, j: int = 1, k: Optional[int] = None,
               x: Optional[float] = None) -> VlfCase:
    n = params.n
    if kind in ("S3", "S4") and k is None:
        k = 1
    _validate_indices(kind, n, j, k)
    if kind in X_KINDS:
        if x is None or not (math.isfinite(x) and x > 0):
            raise ValueError(f"{kind} needs a weight x > 0, got {x!r}")
    elif x is not None:
        raise ValueError(f"{kind} has no free weight x")

    basis = QuadratureBasis(n)
    u = np.zeros(len(basis))
    v = np.zeros(len(basis))
    r = params.profile_ratio
    pairs = range(1, n + 1)

    if kind == "S1":
        for i in pairs:
            u[basis.qp(i)] = r(i, 1)
            v[basis.pp(i)] = 1.0
        u[basis.q_pump] = 2 / x * sum(r(i, 1) for i in pairs)
        v[basis.p_pump] = -x
    elif kind in ("S2", "S2p"):
        for i in pairs:
            u[basis.qp(i)] = r(i, j)
            if i != j:
                v[basis.pp(j)] += r(i, j)
                v[basis.pp(i)] -= 1.0
        if kind == "S2":
            u[basis.q_pump] = 2 / x * sum(r(i, j) for i in pairs)
    elif kind == "S3":
        for i in pairs:
            u[basis.qp(i)] = 1.0 if i <= k else r(i, 1)
        u[basis.q_pump] = 2 / x * sum(r(i, 1) for i in pairs)
        for i in range(1, k + 1):
            for l in pairs:
                if l != i:
                    v[basis.pp(i)] += 1.0
                    v[basis.pp(l)] -= r(i, l)
    else:
        for i in pairs:
            u[basis.qm(i)] = r(i, j)
            if i != j:
                v[basis.pp(i)] += 1.0
                v[basis.pp(j)] -= r(i, j)

    uw = Witness(u, n, label=f"u[{kind}]")
    vw = Witness(v, n, label=f"v[{kind}]")
    part = _partition(kind, n, j, k)
    return VlfCase(kind=kind, n=n, j=j if kind != "S1" else None, k=k, x=x, u=uw, v=vw,
                   partition=part, bound=vlf_bound(uw, vw, part))


def evaluate(case: VlfCase, params: OpoParams, ss: Optional[SteadyState] = None) -> VlfResult:
    ss = ss if ss is not None else steady_state(params)
    vu = witness_variance_dc(case.u, params, ss)
    vv = witness_variance_dc(case.v, params, ss)
    S = vu + vv
    return VlfResult(kind=case.kind, S=S, bound=case.bound, violation=S - case.bound,
                     x_opt=case.x, V_u=vu, V_v=vv)


def golden_section(f, lo: float, hi: float, tol: float = GOLDEN_RTOL, max_iter: int = 200):
    """Minimise a unimodal ``f`` on [lo, hi]; returns (argmin, min, converged)."""
    ratio = (math.sqrt(5) - 1) / 2
    x1 = hi - ratio * (hi - lo)
    x2 = lo + ratio * (hi - lo)
    f1, f2 = f(x1), f(x2)
    it = 0
    while hi - lo > tol and it < max_iter:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - ratio * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + ratio * (hi - lo)
            f2 = f(x2)
        it += 1
    if f1 <= f2:
        return x1, f1, hi - lo <= tol
    return x2, f2, hi - lo <= tol


class _QuadraticS:
    """S(x) = V(a + b/x) + V(c + d x), expanded once by polarisation.

    Each V(p + t q) = V(p) + t [V(p+q) - V(p) - V(q)] + t^2 V(q) needs three
    DC evaluations, after which S(x) is cheap to scan.
    """

    def __init__(self, kind, params, ss, j, k):
        case1 = build_case(kind, params, j=j, k=k, x=1.0)
        case2 = build_case(kind, params, j=j, k=k, x=2.0)
        n = params.n
        wu1, wu2 = case1.u.weights, case2.u.weights
        wv1, wv2 = case1.v.weights, case2.v.weights
        b = 2 * (wu1 - wu2)
        a = wu1 - b
        d = wv2 - wv1
        c = wv1 - d
        self.u_coeffs = self._expand(a, b, n, params, ss)
        self.v_coeffs = self._expand(c, d, n, params, ss)

    @staticmethod
    def _variance(w, n, params, ss):
        if not np.any(w):
            return 0.0
        return witness_variance_dc(Witness(w, n), params, ss)

    def _expand(self, p, q, n, params, ss):
        vp = self._variance(p, n, params, ss)
        vq = self._variance(q, n, params, ss)
        if not (math.isfinite(vp) and math.isfinite(vq)):
            return None
        vpq = self._variance(p + q, n, params, ss)
        return vp, vpq - vp - vq, vq

    @property
    def finite(self):
        return self.u_coeffs is not None and self.v_coeffs is not None

    def __call__(self, x):
        t = 1.0 / x
        a0, a1, a2 = self.u_coeffs
        c0, c1, c2 = self.v_coeffs
        return a0 + a1 * t + a2 * t * t + c0 + c1 * x + c2 * x * x


def optimize_x(kind: str, params: OpoParams, ss: Optional[SteadyState] = None,
               j: int = 1, k: Optional[int] = None) -> VlfResult:
    """Minimise S(x) over x in [1e-3, 1e3] (golden section in log x)."""
    if kind not in X_KINDS:
        raise ValueError(f"{kind} has no free weight to optimise")
    ss = ss if ss is not None else steady_state(params)
    model = _QuadraticS(kind, params, ss, j, k)
    bound = build_case(kind, params, j=j, k=k, x=1.0).bound
    if not model.finite:
        return VlfResult(kind=kind, S=math.inf, bound=bound, violation=math.inf,
                         x_opt=None, converged=False, V_u=math.inf, V_v=math.inf)

    def s_log(t):
        return model(math.exp(t))

    grid = np.linspace(math.log(X_MIN), math.log(X_MAX), PRESCAN_POINTS)
    values = np.array([s_log(t) for t in grid])
    interior = (values[1:-1] < values[:-2]) & (values[1:-1] < values[2:])
    if interior.sum() > 1:
        log.warning("S(x) for %s at sigma=%g, n=%d has %d local minima on the pre-scan grid",
                    kind, params.sigma, params.n, int(interior.sum()))
    idx = int(np.argmin(values))
    lo = grid[max(idx - 1, 0)]
    hi = grid[min(idx + 1, len(grid) - 1)]
    t_opt, _, converged = golden_section(s_log, lo, hi, tol=GOLDEN_RTOL)
    pinned = (idx in (0, len(grid) - 1)
              and min(abs(t_opt - grid[0]), abs(t_opt - grid[-1])) < 1e-6)
    x_opt = math.exp(t_opt)
    result = evaluate(build_case(kind, params, j=j, k=k, x=x_opt), params, ss)
    result.converged = converged and not pinned
    result.boundary_pinned = pinned
    return result


@dataclass
class SurfaceGrid:
    kind: str
    sigma: np.ndarray
    n: np.ndarray
    violation: np.ndarray
    x_opt: np.ndarray
    S: np.ndarray
    bound: np.ndarray
    mask: np.ndarray = field(default=None)

    def rows(self):
        """Long-format records (sigma, n, violation, x_opt, S, bound, ok)."""
        for a, n in enumerate(self.n):
            for b, s in enumerate(self.sigma):
                yield (float(s), int(n), self.violation[a, b], self.x_opt[a, b],
                       self.S[a, b], self.bound[a, b], bool(self.mask[a, b]))


def evaluate_cell(kind, sigma, n, kappa=1.0, k_a=1.0, chi=1.0, j=1, k=None,
                  x=None, optimize=True) -> VlfResult:
    params = OpoParams.from_dimensionless(kappa, sigma, n, k_a=k_a, chi=chi)
    ss = steady_state(params)
    if kind in X_KINDS and (optimize or x is None):
        return optimize_x(kind, params, ss, j=j, k=k)
    return evaluate(build_case(kind, params, j=j, k=k, x=x), params, ss)


def _cell(job):
    kind, sigma, n, opts = job
    try:
        return evaluate_cell(kind, sigma, n, **opts), None
    except (ValueError, NumericalError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def default_workers() -> int:
    return max(1, int(os.environ.get("OPOCOMB_THREADS", "1")))


def iter_surface(kind: str, sigmas: Sequence[float], ns: Sequence[int], kappa: float = 1.0,
                 k_a: float = 1.0, chi: float = 1.0, j: int = 1, k: Optional[int] = None,
                 x: Optional[float] = None, optimize: bool = True,
                 workers: Optional[int] = None):
    """Yield (sigma, n, result, error) in row-major (n, sigma) order as cells finish."""
    sigmas = np.asarray(sigmas, dtype=float)
    ns = np.asarray(ns, dtype=int)
    if np.any(sigmas < 1):
        raise ValueError("sigma grid must stay at or above threshold")
    opts = dict(kappa=kappa, k_a=k_a, chi=chi, j=j, k=k, x=x, optimize=optimize)
    jobs = [(kind, float(s), int(n), opts) for n in ns for s in sigmas]
    workers = workers or default_workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for job, (res, err) in zip(jobs, pool.map(_cell, jobs, chunksize=8)):
                yield job[1], job[2], res, err
    else:
        for job in jobs:
            res, err = _cell(job)
            yield job[1], job[2], res, err


def scan_surface(kind: str, sigmas: Sequence[float], ns: Sequence[int], kappa: float = 1.0,
                 k_a: float = 1.0, chi: float = 1.0, j: int = 1, k: Optional[int] = None,
                 x: Optional[float] = None, optimize: bool = True,
                 workers: Optional[int] = None) -> SurfaceGrid:
    """Violation and x_opt over a (n, sigma) grid; failed cells are masked, not zeroed."""
    sigmas = np.asarray(sigmas, dtype=float)
    ns = np.asarray(ns, dtype=int)
    shape = (len(ns), len(sigmas))
    grid = SurfaceGrid(kind=kind, sigma=sigmas, n=ns,
                       violation=np.full(shape, np.nan), x_opt=np.full(shape, np.nan),
                       S=np.full(shape, np.nan), bound=np.full(shape, np.nan),
                       mask=np.zeros(shape, dtype=bool))
    cells = iter_surface(kind, sigmas, ns, kappa=kappa, k_a=k_a, chi=chi, j=j, k=k,
                         x=x, optimize=optimize, workers=workers)
    for flat, (s, n, res, err) in enumerate(cells):
        a, b = divmod(flat, len(sigmas))
        if res is None:
            log.warning("cell %s n=%d sigma=%g failed: %s", kind, n, s, err)
            continue
        grid.violation[a, b] = res.violation
        grid.S[a, b] = res.S
        grid.bound[a, b] = res.bound
        grid.x_opt[a, b] = res.x_opt if res.x_opt is not None else np.nan
        grid.mask[a, b] = True
    return grid


def onset_sigma(kind: str, n: int, sigmas: Sequence[float], kappa: float = 1.0,
                refine_tol: float = 1e-6, **opts) -> Optional[float]:
    """Smallest sigma on the grid (refined by bisection) where the violation turns negative."""
    def violation(s):
        return evaluate_cell(kind, s, n, kappa=kappa, **opts).violation

    previous = None
    for s in sigmas:
        if violation(s) < 0:
            if previous is None:
                return float(s)
            lo, hi = previous, float(s)
            while hi - lo > refine_tol:
                mid = 0.5 * (lo + hi)
                if violation(mid) < 0:
                    hi = mid
                else:
                    lo = mid
            return hi
        previous = float(s)
    return None
