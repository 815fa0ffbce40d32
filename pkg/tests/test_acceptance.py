"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from opocomb.mc_oracle import SimConfig, simulate_dc_variances
from opocomb.model import OpoParams, steady_state
from opocomb.spectra import (parse_witness, transfer_closed_form, transfer_numeric,
                             witness_variance_dc)
from opocomb.stability import (build_jacobian, discrepancy_report, eigenvalues_closed_form,
                               eigenvalues_numeric, match_multisets)
from opocomb.witnesses import build_case, evaluate, golden_section, optimize_x, vlf_bound
from opocomb.stability import is_stable


def _joint_onset(n, lo=1.0, hi=10.0, points=91, tol=1e-6):
    """Smallest sigma where optimised S1 and S2 are both violated, or None."""
    def both(sigma):
        p = OpoParams.from_dimensionless(1.0, sigma, n)
        ss = steady_state(p)
        return (optimize_x("S1", p, ss).violation < 0
                and optimize_x("S2", p, ss).violation < 0)

    prev = None
    for s in np.linspace(lo, hi, points):
        if both(float(s)):
            if prev is None:
                return float(s)
            a, b = prev, float(s)
            while b - a > tol:
                m = 0.5 * (a + b)
                a, b = (a, m) if both(m) else (m, b)
            return b
        prev = float(s)
    return None


def _onset(kind, n, lo=1.0, hi=10.0, points=91, tol=1e-6):
    def violated(sigma):
        p = OpoParams.from_dimensionless(1.0, sigma, n)
        if kind == "S2p":
            return evaluate(build_case(kind, p), p).violation < 0
        return optimize_x(kind, p).violation < 0

    prev = None
    for s in np.linspace(lo, hi, points):
        if violated(float(s)):
            if prev is None:
                return float(s)
            a, b = prev, float(s)
            while b - a > tol:
                m = 0.5 * (a + b)
                a, b = (a, m) if violated(m) else (m, b)
            return b
        prev = float(s)
    return None


def test_criterion_1_epr_variance_law(criterion_report):
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(1, 9):
        w = parse_witness("P+1", n)
        for sigma in (1.0, 1.5, 2.0, 4.0, 9.0):
            for kappa in (0.5, 1.0, 2.0):
                p = OpoParams.from_dimensionless(kappa, sigma, n)
                got = witness_variance_dc(w, p, steady_state(p))
                worst = max(worst, abs(got - 2 * (sigma - 1) / (n * sigma)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 1.0
    criterion_report(1, ok, f"max |V(P+1) - 2(s-1)/(n s)| = {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-6
    assert elapsed < 1.0


def test_criterion_2_phase_sum_minimum(criterion_report):
    t0 = time.perf_counter()
    n = 3

    def v1(sigma):
        p = OpoParams.from_dimensionless(1.0, sigma, n)
        case = build_case("S1", p, x=sigma)
        return witness_variance_dc(case.v, p, steady_state(p))

    grid = np.linspace(1.0, 3.0, 200)
    values = np.array([v1(float(s)) for s in grid])
    k = int(np.argmin(values))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    s_min, v_min, converged = golden_section(v1, float(lo), float(hi), tol=1e-9)
    elapsed = time.perf_counter() - t0
    ok = converged and abs(s_min - 1.18) <= 0.02 and v_min < 1 and elapsed < 5.0
    criterion_report(2, ok, f"argmin sigma = {s_min:.4f}, V(v1) = {v_min:.4f}, {elapsed:.2f} s")
    assert converged
    assert abs(s_min - 1.18) <= 0.02
    assert v_min < 1
    assert elapsed < 5.0


def test_criterion_3_eigenvalue_closed_forms(criterion_report):
    t0 = time.perf_counter()
    failures = []
    for n in (1, 2, 3):
        for kappa in (0.5, 1.0, 2.0):
            for sigma in (1.5, 2.0, 4.0):
                p = OpoParams.from_dimensionless(kappa, sigma, n)
                numeric = eigenvalues_numeric(build_jacobian(steady_state(p), p))
                err, _ = match_multisets(numeric, eigenvalues_closed_form(p))
                if err > 1e-8 * p.k_a:
                    failures.append((n, kappa, sigma, err))
    silent = []
    for n in range(4, 9):
        for kappa in (0.5, 1.0, 2.0):
            for sigma in (1.5, 2.0, 4.0):
                p = OpoParams.from_dimensionless(kappa, sigma, n)
                numeric = eigenvalues_numeric(build_jacobian(steady_state(p), p))
                closed = eigenvalues_closed_form(p)
                err, _ = match_multisets(numeric, closed)
                report = discrepancy_report(p, numeric, closed, 1e-8)
                if err > 1e-8 * p.k_a and not (report and report["mismatched"]):
                    silent.append((n, kappa, sigma))
    elapsed = time.perf_counter() - t0
    ok = not failures and not silent and elapsed < 1.0
    detail = f"{len(failures)}/27 small-n cases mismatch, {len(silent)} silent, {elapsed:.2f} s"
    if failures:
        n, kappa, sigma, err = max(failures, key=lambda f: f[3])
        detail += f"; worst n={n} kappa={kappa} sigma={sigma} distance={err:.3g}"
    criterion_report(3, ok, detail)
    assert not failures, f"closed form disagrees with the Jacobian: {failures}"
    assert not silent
    assert elapsed < 1.0


def test_criterion_4_transfer_oracle(criterion_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240611)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        kappa = float(rng.uniform(0.2, 4.0))
        sigma = float(rng.uniform(1.0, 9.0))
        omega = float(rng.uniform(0.01, 5.0))
        p = OpoParams.from_dimensionless(kappa, sigma, n)
        ss = steady_state(p)
        diff = transfer_closed_form(p, ss, omega).matrix - transfer_numeric(p, ss, omega).matrix
        worst = max(worst, float(np.max(np.abs(diff))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 1.0
    criterion_report(4, ok, f"max |T_closed - T_numeric| = {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-9
    assert elapsed < 1.0


def test_criterion_5_violation_existence_and_onset_order(criterion_report):
    t0 = time.perf_counter()
    onsets = {n: _joint_onset(n) for n in range(2, 11)}
    elapsed = time.perf_counter() - t0
    missing = [n for n, s in onsets.items() if s is None]
    seq = [onsets[n] for n in range(2, 11) if onsets[n] is not None]
    drops = [(n, onsets[n], onsets[n + 1]) for n in range(2, 10)
             if onsets[n] is not None and onsets[n + 1] is not None
             and onsets[n + 1] < onsets[n] - 1e-5]
    ok = not missing and not drops and elapsed < 30.0
    detail = ("onsets " + ", ".join(f"n={n}:{s:.4f}" for n, s in onsets.items() if s)
              + f"; {len(drops)} decreases, {elapsed:.1f} s")
    criterion_report(5, ok, detail)
    assert not missing, f"no joint violation in [1, 10] for n={missing}"
    assert not drops, f"minimal violating sigma decreases with n: {drops}"
    assert elapsed < 30.0
    assert len(seq) == 9


def test_criterion_6_s2prime_needs_more_pump(criterion_report):
    t0 = time.perf_counter()
    pairs = {n: (_onset("S2", n), _onset("S2p", n)) for n in (2, 3, 4)}
    elapsed = time.perf_counter() - t0
    bad = [n for n, (a, b) in pairs.items() if a is None or b is None or b < a - 1e-6]
    ok = not bad and elapsed < 10.0
    detail = ", ".join(f"n={n}: S2 {a:.4f} <= S2' {b:.4f}" for n, (a, b) in pairs.items())
    criterion_report(6, ok, f"{detail}; {elapsed:.1f} s")
    assert not bad
    assert elapsed < 10.0


def test_criterion_7_s3_bounds_and_s4_always_violated(criterion_report):
    t0 = time.perf_counter()
    bound_bad = []
    for n in range(2, 13):
        p = OpoParams.from_dimensionless(1.0, 2.0, n)
        for k in range(1, n):
            b = build_case("S3", p, k=k, x=1.0).bound
            if not (b == 8 * k * (n - k) and 8 * (n - 1) <= b <= 2 * n * n):
                bound_bad.append((n, k, b))
    s4_bad = []
    checked = 0
    for n in range(2, 7):
        for kappa in (0.5, 1.0, 2.0):
            for sigma in (1.5, 2.0, 4.0, 9.0):
                p = OpoParams.from_dimensionless(kappa, sigma, n)
                if not is_stable(p).stable:
                    continue
                ss = steady_state(p)
                for k in range(1, n):
                    checked += 1
                    res = evaluate(build_case("S4", p, k=k), p, ss)
                    if not res.violation < 0:
                        s4_bad.append((n, kappa, sigma, k, res.violation))
    elapsed = time.perf_counter() - t0
    ok = not bound_bad and not s4_bad and checked > 0 and elapsed < 5.0
    criterion_report(7, ok, f"{len(bound_bad)} bound failures, S4 violated at "
                            f"{checked - len(s4_bad)}/{checked} stable points, {elapsed:.2f} s")
    assert not bound_bad
    assert checked > 0 and not s4_bad
    assert elapsed < 5.0


@pytest.mark.slow
def test_criterion_8_monte_carlo_concordance(criterion_report):
    t0 = time.perf_counter()
    p = OpoParams.from_dimensionless(1.0, 2.0, 2)
    ss = steady_state(p)
    x_opt = optimize_x("S2", p, ss).x_opt
    witnesses = {
        "Q-1": parse_witness("Q-1", 2),
        "P+1": parse_witness("P+1", 2),
        "v1(x=sigma)": build_case("S1", p, x=p.sigma).v,
        "u2(x_opt)": build_case("S2", p, x=x_opt).u,
    }
    cfg = SimConfig.for_params(p, n_traj=10_000, seed=1)
    cfg.check_against(p)
    estimates = simulate_dc_variances(list(witnesses.values()), p, ss, cfg)
    distances = {}
    for (name, w), est in zip(witnesses.items(), estimates):
        analytic = witness_variance_dc(w, p, ss)
        distances[name] = (est.estimate - analytic) / est.stderr
    elapsed = time.perf_counter() - t0
    ok = all(abs(d) <= 3 for d in distances.values()) and elapsed < 300
    detail = ", ".join(f"{k}: {d:+.2f} se" for k, d in distances.items())
    criterion_report(8, ok, f"{detail}; {cfg.n_traj} trajectories, {elapsed:.0f} s")
    assert cfg.n_traj >= 10_000
    assert all(abs(d) <= 3 for d in distances.values()), distances
    assert elapsed < 300
