"""Linear stability of the classical steady state.

The Jacobian acts on (..., da_i, da_i*, da_-i, da_-i*, ..., dp, dp*).  Its
eigenvalues are compared against the closed-form set {0 x (2n-1),
-2k_a x (2n-1), l1, l2, l3, l4}.  In the reference form the discriminant of l3,4 reads
``(kappa+2)**2 - 8 n sqrt(sigma)``; reducing the symmetric phase-quadrature
subsystem by hand gives ``(kappa+2)**2 - 8 kappa sqrt(sigma)`` instead, and only
the latter agrees with the matrix when ``kappa != n``.  Both variants are
available and the mismatch of the reference form is reported, not hidden.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError
from .model import OpoParams, SteadyState, check_consistent, steady_state

STABILITY_TOL = 1e-10
# numeric eigenvalues closer than this (relative to ||J||) are treated as one
# split degenerate eigenvalue and replaced by their centroid
CLUSTER_TOL = 1e-6


def build_jacobian(ss: SteadyState, params: OpoParams) -> np.ndarray:
    check_consistent(params, ss)
    n, ka, kp, chi = params.n, params.k_a, params.k_p, params.chi
    a_plus = ss.alpha * np.exp(1j * ss.phases)
    a_minus = ss.alpha * np.exp(-1j * ss.phases)
    dim = 2 * (2 * n + 1)
    J = np.zeros((dim, dim), dtype=complex)
    p = 4 * n
    for i in range(n):
        b = 4 * i
        ap, am = a_plus[i], a_minus[i]
        J[b:b + 4, b:b + 4] = [[-ka, 0, 0, ka],
                               [0, -ka, ka, 0],
                               [0, ka, -ka, 0],
                               [ka, 0, 0, -ka]]
        J[b, p] = 2 * chi * ap
        J[b + 1, p + 1] = 2 * chi * np.conj(ap)
        J[b + 2, p] = 2 * chi * am
        J[b + 3, p + 1] = 2 * chi * np.conj(am)
        J[p, b] = -2 * chi * am
        J[p, b + 2] = -2 * chi * ap
        J[p + 1, b + 1] = -2 * chi * np.conj(am)
        J[p + 1, b + 3] = -2 * chi * np.conj(ap)
    J[p, p] = J[p + 1, p + 1] = -kp
    if not np.any(J.imag):
        return J.real
    return J


def eigenvalues_closed_form(params: OpoParams, corrected: bool = False) -> np.ndarray:
    """Closed-form eigenvalue multiset for equal signal amplitudes.

    ``corrected=False`` evaluates the reference formula unchanged
    (``8 n sqrt(sigma)`` under the l3,4 root); ``corrected=True`` uses
    ``8 kappa sqrt(sigma)``, which is what the Jacobian actually yields.
    """
    if not params.equal_amplitudes:
        raise ValueError("closed-form eigenvalues assume equal signal amplitudes")
    n, ka, kappa = params.n, params.k_a, params.kappa
    root_sigma = math.sqrt(params.sigma)
    r12 = cmath.sqrt(kappa * (kappa - 8 * (root_sigma - 1)))
    coupling = kappa if corrected else n
    r34 = cmath.sqrt((kappa + 2) ** 2 - 8 * coupling * root_sigma)
    lambdas = [
        -0.5 * ka * (kappa + r12), -0.5 * ka * (kappa - r12),
        -0.5 * ka * (kappa + 2 + r34), -0.5 * ka * (kappa + 2 - r34),
    ]
    values = [0.0] * (2 * n - 1) + [-2.0 * ka] * (2 * n - 1) + lambdas
    return np.array(values, dtype=complex)


def eigenvalues_numeric(J: np.ndarray, cluster_tol: float = CLUSTER_TOL) -> np.ndarray:
    """All eigenvalues of ``J`` with split degenerate clusters re-merged.

    A defective eigenvalue of multiplicity m is perturbed by O(eps**(1/m)) in
    floating point, but the mean of its cluster stays accurate to O(eps).
    """
    J = np.asarray(J)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError(f"Jacobian must be square, got shape {J.shape}")
    try:
        values = np.linalg.eigvals(J)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigensolver did not converge: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise ConvergenceError("eigensolver returned non-finite eigenvalues")
    scale = max(1.0, float(np.linalg.norm(J, 2)))
    return _merge_clusters(values.astype(complex), cluster_tol * scale)


def _merge_clusters(values: np.ndarray, radius: float) -> np.ndarray:
    # single-linkage grouping
    m = len(values)
    labels = list(range(m))

    def find(k):
        while labels[k] != k:
            labels[k] = labels[labels[k]]
            k = labels[k]
        return k

    for a in range(m):
        for b in range(a + 1, m):
            if abs(values[a] - values[b]) <= radius:
                labels[find(a)] = find(b)
    out = values.copy()
    roots = np.array([find(k) for k in range(m)])
    for r in set(roots):
        members = roots == r
        if members.sum() > 1:
            out[members] = values[members].mean()
    return out


def match_multisets(a, b) -> tuple[float, list]:
    """Greedy minimal-distance pairing of two equal-size multisets.

    Returns the largest matched distance and the list of (a_idx, b_idx) pairs.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if len(a) != len(b):
        return math.inf, []
    dist = np.abs(a[:, None] - b[None, :])
    pairs = []
    worst = 0.0
    for _ in range(len(a)):
        k = int(np.argmin(dist))
        i, j = divmod(k, dist.shape[1])
        worst = max(worst, float(dist[i, j]))
        pairs.append((i, j))
        dist[i, :] = np.inf
        dist[:, j] = np.inf
    return worst, pairs


@dataclass
class StabilityReport:
    eigenvalues: np.ndarray
    closed_form_eigenvalues: Optional[np.ndarray]
    max_real_part: float
    stable: bool
    match_error: float
    corrected_match_error: float = math.nan
    discrepancy: Optional[dict] = field(default=None)

    def to_json(self) -> dict:
        def pairs(values):
            if values is None:
                return None
            return [[float(v.real), float(v.imag)] for v in values]

        return {
            "eigenvalues": pairs(self.eigenvalues),
            "closed_form": pairs(self.closed_form_eigenvalues),
            "stable": self.stable,
            "max_real_part": self.max_real_part,
            "match_error": self.match_error,
            "corrected_match_error": self.corrected_match_error,
            "discrepancy": self.discrepancy,
        }


def discrepancy_report(params: OpoParams, numeric, closed_form, tol: float) -> Optional[dict]:
    """Structured description of a numeric/closed-form mismatch, or None."""
    err, pairs = match_multisets(numeric, closed_form)
    if err <= tol * params.k_a:
        return None
    bad = [(i, j) for i, j in pairs if abs(numeric[i] - closed_form[j]) > tol * params.k_a]
    return {
        "n": params.n,
        "kappa": params.kappa,
        "sigma": params.sigma,
        "tolerance": tol * params.k_a,
        "match_error": err,
        "mismatched": [
            {"numeric": [numeric[i].real, numeric[i].imag],
             "closed_form": [closed_form[j].real, closed_form[j].imag]}
            for i, j in bad
        ],
    }


def is_stable(params: OpoParams, tol: float = STABILITY_TOL,
              match_tol: float = 1e-8) -> StabilityReport:
    ss = steady_state(params)
    numeric = eigenvalues_numeric(build_jacobian(ss, params))
    max_re = float(np.max(numeric.real))
    closed = None
    err = corrected_err = math.nan
    discrepancy = None
    if params.equal_amplitudes:
        closed = eigenvalues_closed_form(params)
        err, _ = match_multisets(numeric, closed)
        corrected_err, _ = match_multisets(numeric, eigenvalues_closed_form(params, corrected=True))
        discrepancy = discrepancy_report(params, numeric, closed, match_tol)
    return StabilityReport(
        eigenvalues=numeric,
        closed_form_eigenvalues=closed,
        max_real_part=max_re,
        stable=max_re <= tol * params.k_a,
        match_error=err,
        corrected_match_error=corrected_err,
        discrepancy=discrepancy,
    )
