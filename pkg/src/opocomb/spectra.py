"""Linearised input-output transfer functions and output quadrature variances.

Channels are the pair sum/difference quadratures Q+i, Q-i, P+i, P-i
(i = 1..n) followed by the pump quadratures Qp, Pp.  With a single-mode
vacuum quadrature variance of 1, every sum/difference input channel carries
noise power 2 and each pump channel carries 1.

Variances of a witness are evaluated as sum_in N_in |sum_out w_out T[out, in]|^2,
summing the weighted coefficients per input before taking moduli so that the
1/Omega pieces cancel wherever they cancel algebraically.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConvergenceError, PoleError, SingularSystemError
from .model import OpoParams, SteadyState, check_consistent

log = logging.getLogger(__name__)

PAIR_NOISE = 2.0
PUMP_NOISE = 1.0

_CHANNEL_RE = re.compile(r"^([QP])(?:([+-])(\d+)|p)$")


class QuadratureBasis:
    """Ordered channel list for ``n`` pairs: per pair Q+i, Q-i, P+i, P-i, then Qp, Pp."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        names = []
        for i in range(1, n + 1):
            names += [f"Q+{i}", f"Q-{i}", f"P+{i}", f"P-{i}"]
        names += ["Qp", "Pp"]
        self.names = names
        self._index = {name: k for k, name in enumerate(names)}
        self.noise = np.array([PUMP_NOISE if name.endswith("p") else PAIR_NOISE
                               for name in names])

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, QuadratureBasis) and other.n == self.n

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValueError(f"unknown channel {name!r} for n={self.n}") from None

    def qp(self, i):
        return 4 * (i - 1)

    def qm(self, i):
        return 4 * (i - 1) + 1

    def pp(self, i):
        return 4 * (i - 1) + 2

    def pm(self, i):
        return 4 * (i - 1) + 3

    @property
    def q_pump(self):
        return 4 * self.n

    @property
    def p_pump(self):
        return 4 * self.n + 1

    def p_minus_indices(self):
        return [self.pm(i) for i in range(1, self.n + 1)]


class Witness:
    """Real-weighted linear combination of output channels."""

    def __init__(self, weights, n: int, label: str = ""):
        self.basis = QuadratureBasis(n)
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(self.basis),):
            raise ValueError(f"expected {len(self.basis)} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("witness weights must be finite")
        if not np.any(w):
            raise ValueError("witness needs at least one nonzero weight")
        self.weights = w
        self.n = n
        self.label = label

    @classmethod
    def from_terms(cls, terms: Mapping[str, float], n: int, label: str = "") -> "Witness":
        basis = QuadratureBasis(n)
        w = np.zeros(len(basis))
        for name, coef in terms.items():
            w[basis.index(name)] += coef
        return cls(w, n, label or format_witness_terms(w, basis))

    def __repr__(self):
        return f"Witness({self.label or format_witness_terms(self.weights, self.basis)})"

    def touches(self, indices) -> bool:
        return bool(np.any(self.weights[list(indices)] != 0))

    def shot_noise(self) -> float:
        """Variance of this combination on vacuum input."""
        return float(np.sum(self.basis.noise * self.weights ** 2))

    def mode_weights(self) -> tuple[dict, dict]:
        """Expand onto single modes: returns (h, g) dicts keyed by +i, -i and 0 (pump)."""
        b = self.basis
        h, g = {}, {}
        for i in range(1, self.n + 1):
            qs, qd = self.weights[b.qp(i)], self.weights[b.qm(i)]
            ps, pd = self.weights[b.pp(i)], self.weights[b.pm(i)]
            h[i], h[-i] = qs + qd, qs - qd
            g[i], g[-i] = ps + pd, ps - pd
        h[0] = self.weights[b.q_pump]
        g[0] = self.weights[b.p_pump]
        return h, g


def format_witness_terms(weights, basis: QuadratureBasis) -> str:
    return ",".join(f"{w:g}*{name}" for w, name in zip(weights, basis.names) if w != 0)


def parse_witness(spec: str, n: int) -> Witness:
    """Parse ``"1*P+1,1*P+2,-2.0*Pp"``; a bare channel name means coefficient 1."""
    terms: dict[str, float] = {}
    for raw in spec.split(","):
        term = raw.strip()
        if not term:
            raise ValueError(f"empty term in witness spec {spec!r}")
        if "*" in term:
            coef_text, name = term.rsplit("*", 1)
            try:
                coef = float(coef_text)
            except ValueError:
                raise ValueError(f"bad coefficient in term {term!r}") from None
        else:
            coef, name = 1.0, term
        name = name.strip()
        m = _CHANNEL_RE.match(name)
        if not m:
            raise ValueError(f"bad channel name {name!r}")
        if m.group(3) is not None and not 1 <= int(m.group(3)) <= n:
            raise ValueError(f"channel {name!r} out of range for n={n}")
        terms[name] = terms.get(name, 0.0) + coef
    return Witness.from_terms(terms, n, label=spec)


@dataclass(frozen=True)
class TransferMatrix:
    omega: float
    matrix: np.ndarray
    basis: QuadratureBasis


def _check_den(value, what, omega):
    if not np.all(np.isfinite(value)) or np.any(np.abs(value) < 1e-300):
        raise PoleError(f"denominator of {what} vanishes at omega={omega!r}")


def transfer_closed_form(params: OpoParams, ss: SteadyState, omega: float) -> TransferMatrix:
    """Output/input map at analysis frequency ``omega`` > 0 from the explicit solutions."""
    check_consistent(params, ss)
    if not omega > 0:
        raise ValueError("closed-form transfer needs omega > 0; use witness_variance_dc for DC")
    n, ka, kp, chi = params.n, params.k_a, params.k_p, params.chi
    W = float(omega)
    basis = QuadratureBasis(n)
    T = np.zeros((len(basis), len(basis)), dtype=complex)
    a = np.asarray(ss.alpha, dtype=float)
    total = float(a @ a)
    g2 = 8 * chi ** 2 * total
    root = math.sqrt(ka * kp)

    dq = -1j * kp * W + W ** 2 - g2
    dp = (2 * ka + 1j * W) * (kp + 1j * W) + g2
    dqp = kp * W + 1j * (W ** 2 - g2)
    for den, what in ((W * dq, "Q+ rows"), (dp, "P+/Pp rows"), (dqp, "Qp row")):
        _check_den(den, what, omega)

    qp = [basis.qp(i) for i in range(1, n + 1)]
    qm = [basis.qm(i) for i in range(1, n + 1)]
    pp = [basis.pp(i) for i in range(1, n + 1)]
    pm = [basis.pm(i) for i in range(1, n + 1)]

    outer = np.outer(a, a)
    # Q+ block
    cross_q = -16j * chi ** 2 * ka * outer / (W * dq)
    self_q = -(1 + 2 * ka * (kp * W + 1j * (W ** 2 + 8 * chi ** 2 * (a ** 2 - total))) / (W * dq))
    block = cross_q.copy()
    np.fill_diagonal(block, self_q)
    T[np.ix_(qp, qp)] = block
    T[qp, basis.q_pump] = -8 * chi * root * a / dq
    # Q- and P- are decoupled
    T[qm, qm] = -1j * W / (2 * ka + 1j * W)
    T[pm, pm] = -1 - 2j * ka / W
    # P+ block
    cross_p = -16 * chi ** 2 * ka * outer / ((2 * ka + 1j * W) * dp)
    self_p = -1 + 2 * ka / (2 * ka + 1j * W) - 16 * chi ** 2 * ka * a ** 2 / ((2 * ka + 1j * W) * dp)
    block = cross_p.copy()
    np.fill_diagonal(block, self_p)
    T[np.ix_(pp, pp)] = block
    T[pp, basis.p_pump] = 8 * chi * root * a / dp
    # pump rows
    T[basis.q_pump, basis.q_pump] = (kp * W - 1j * (W ** 2 - g2)) / dqp
    T[basis.q_pump, qp] = 4j * chi * root * a / dqp
    T[basis.p_pump, basis.p_pump] = (2 * ka * (kp - 1j * W) + 1j * kp * W + W ** 2 - g2) / dp
    T[basis.p_pump, pp] = -4 * chi * root * a / dp
    return TransferMatrix(W, T, basis)


def drift_matrices(params: OpoParams, ss: SteadyState) -> tuple[np.ndarray, np.ndarray]:
    """Internal drift A and input coupling b of the quadrature Langevin equations.

    d/dt x = A x + diag(b) x_in, with x ordered like ``QuadratureBasis``.
    """
    check_consistent(params, ss)
    n, ka, kp, chi = params.n, params.k_a, params.k_p, params.chi
    basis = QuadratureBasis(n)
    A = np.zeros((len(basis), len(basis)))
    a = np.asarray(ss.alpha, dtype=float)
    for i in range(1, n + 1):
        al = a[i - 1]
        A[basis.qp(i), basis.q_pump] = 4 * chi * al
        A[basis.qm(i), basis.qm(i)] = -2 * ka
        A[basis.pp(i), basis.p_pump] = 4 * chi * al
        A[basis.pp(i), basis.pp(i)] = -2 * ka
        A[basis.q_pump, basis.qp(i)] = -2 * chi * al
        A[basis.p_pump, basis.pp(i)] = -2 * chi * al
    A[basis.q_pump, basis.q_pump] = -kp
    A[basis.p_pump, basis.p_pump] = -kp
    b = np.full(len(basis), math.sqrt(2 * ka))
    b[basis.q_pump] = b[basis.p_pump] = math.sqrt(2 * kp)
    return A, b


def _sector_blocks(basis: QuadratureBasis):
    n = basis.n
    q_block = [basis.qp(i) for i in range(1, n + 1)] + [basis.q_pump]
    p_block = [basis.pp(i) for i in range(1, n + 1)] + [basis.p_pump]
    blocks = [("Q+/Qp", q_block), ("P+/Pp", p_block)]
    blocks += [(f"Q-{i}", [basis.qm(i)]) for i in range(1, n + 1)]
    blocks += [(f"P-{i}", [basis.pm(i)]) for i in range(1, n + 1)]
    return blocks


def transfer_numeric(params: OpoParams, ss: SteadyState, omega: float) -> TransferMatrix:
    """Independent route: solve (i omega - A) x = diag(b) x_in, then out = b x - x_in.

    At omega = 0 the P-i rows have no solution and are returned as NaN; any
    other singular block raises ``SingularSystemError``.
    """
    if omega < 0:
        raise ValueError("omega must be >= 0")
    A, b = drift_matrices(params, ss)
    basis = QuadratureBasis(params.n)
    T = np.zeros((len(basis), len(basis)), dtype=complex)
    for name, idx in _sector_blocks(basis):
        sub = 1j * omega * np.eye(len(idx)) - A[np.ix_(idx, idx)]
        smallest = np.linalg.svd(sub, compute_uv=False)[-1]
        if smallest <= 1e-13 * max(1.0, np.abs(sub).max()):
            if name.startswith("P-") and omega == 0:
                T[np.ix_(idx, idx)] = np.nan
                continue
            raise SingularSystemError(
                f"{name} block is singular at omega={omega!r} (i*omega hits a drift eigenvalue)")
        x = np.linalg.solve(sub, np.diag(b[idx]))
        T[np.ix_(idx, idx)] = b[idx, None] * x - np.eye(len(idx))
    return TransferMatrix(float(omega), T, basis)


def witness_variance(w: Witness, T: TransferMatrix) -> float:
    if w.basis != T.basis:
        raise ValueError("witness and transfer matrix have different pair counts")
    touched = w.weights != 0
    if not np.all(np.isfinite(T.matrix[touched])):
        raise ValueError(f"transfer matrix is not finite at omega={T.omega} on a channel the witness uses")
    row = w.weights[touched] @ T.matrix[touched]
    return float(np.sum(T.basis.noise * np.abs(row) ** 2))


def witness_variance_at(w: Witness, params: OpoParams, ss: SteadyState, omega: float) -> float:
    return witness_variance(w, transfer_closed_form(params, ss, omega))


# DC limit: dyadic ladder omega_m = k_a 2**-m.  V(omega) is even in omega, so
# Richardson extrapolation works in h = omega**2 with ratio 4.
DC_FIRST = 10
DC_LAST = 40
DC_RTOL = 1e-8
_RICHARDSON_DEPTH = 4


def witness_variance_dc(w: Witness, params: OpoParams, ss: SteadyState,
                        rtol: float = DC_RTOL) -> float:
    """Omega -> 0 limit of the output variance of ``w``; ``math.inf`` on clean 1/Omega^2 divergence."""
    if w.touches(w.basis.p_minus_indices()):
        raise ValueError("P-i channels diverge identically at DC; witness must not use them")
    atol = 1e-12 * w.shot_noise()
    omegas, values, table = [], [], []
    previous = None
    for m in range(DC_FIRST, DC_LAST + 1):
        omega = params.k_a * 2.0 ** -m
        v = witness_variance_at(w, params, ss, omega)
        omegas.append(omega)
        values.append(v)
        if len(values) >= 4 and _diverging(omegas[-4:], values[-4:]):
            return math.inf
        row = [v]
        if table:
            for j in range(1, min(len(table), _RICHARDSON_DEPTH) + 1):
                factor = 4.0 ** j
                row.append((factor * row[j - 1] - table[-1][j - 1]) / (factor - 1))
        table.append(row)
        estimate = row[-1]
        if previous is not None and len(table) >= 3:
            if abs(estimate - previous) <= rtol * abs(estimate) + atol:
                return max(estimate, 0.0)
        previous = estimate
    raise ConvergenceError(
        f"DC limit of {w!r} did not settle over omega = 2^-{DC_FIRST}..2^-{DC_LAST} "
        f"(last values {values[-3:]})")


def _diverging(omegas, values) -> bool:
    if min(values) <= 0:
        return False
    slope = np.polyfit(np.log(omegas), np.log(values), 1)[0]
    return abs(slope + 2) <= 0.05 * 2


def epr_variance_dc(params: OpoParams) -> float:
    """Reference phase-sum variance at DC for equal amplitudes: 2 (sigma - 1) / (n sigma)."""
    return 2 * (params.sigma - 1) / (params.n * params.sigma)
