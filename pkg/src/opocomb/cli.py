"""Command-line front end.

Single evaluations are written as JSON, surfaces and spectra as CSV with
``#`` header lines carrying the version and the fully resolved parameters.
Exit status: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from contextlib import contextmanager

import numpy as np

from . import __version__
from .errors import NumericalError, PoleError
from .mc_oracle import SimConfig, simulate_dc_variance
from .model import OpoParams, steady_state, threshold_pump
from .spectra import parse_witness, witness_variance_at, witness_variance_dc
from .stability import is_stable
from .witnesses import (KINDS, X_KINDS, build_case, default_workers, evaluate,
                        iter_surface, optimize_x)

log = logging.getLogger("opocomb")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def parse_range(text: str) -> np.ndarray:
    """``a:b:steps`` (inclusive, linear) or ``log:a:b:steps``."""
    logspace = text.startswith("log:")
    parts = text[4:].split(":") if logspace else text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"range {text!r} must look like a:b:steps")
    try:
        a, b, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad numbers in range {text!r}") from None
    if steps < 1:
        raise argparse.ArgumentTypeError("range needs at least one step")
    if logspace:
        if a <= 0 or b <= 0:
            raise argparse.ArgumentTypeError("log ranges need positive endpoints")
        return np.geomspace(a, b, steps)
    return np.linspace(a, b, steps)


def parse_int_range(text: str) -> np.ndarray:
    """``a:b`` inclusive integer range (a bare integer is a single value)."""
    try:
        parts = [int(p) for p in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer range {text!r}") from None
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or parts[1] < parts[0]:
        raise argparse.ArgumentTypeError(f"integer range {text!r} must look like a:b with a <= b")
    return np.arange(parts[0], parts[1] + 1)


def _profile(text):
    return [float(v) for v in text.split(",")]


def _add_params(p, sigma=True, n=True):
    p.add_argument("--kappa", type=float, default=1.0, help="pump/signal loss ratio k_p/k_a")
    if sigma:
        p.add_argument("--sigma", type=float, required=True, help="pump power / threshold power")
    if n:
        p.add_argument("--n", type=int, required=True, help="number of signal/idler pairs")
    p.add_argument("--k-a", type=float, default=1.0, dest="k_a")
    p.add_argument("--chi", type=float, default=1.0)
    p.add_argument("--profile", type=_profile, default=None,
                   help="comma-separated relative signal amplitudes")
    p.add_argument("--params", type=str, default=None,
                   help="JSON file with kappa/sigma/n/profile/k_a/chi (flags override)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opocomb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"opocomb {__version__}")
    parser.add_argument("-o", "--output", default="-", help="output path ('-' for stdout)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes for scans (default $OPOCOMB_THREADS or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("steady-state", help="classical operating point")
    _add_params(p)

    p = sub.add_parser("stability", help="Jacobian eigenvalues vs closed form")
    _add_params(p)

    p = sub.add_parser("spectrum", help="witness variance versus analysis frequency")
    _add_params(p)
    p.add_argument("--omega-min", type=float, default=1e-3)
    p.add_argument("--omega-max", type=float, default=10.0)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--log-spacing", action="store_true")
    p.add_argument("--witness", required=True, help='e.g. "1*P+1,1*P+2,-2.0*Pp"')
    p.add_argument("--normalize", choices=["none", "shot"], default="none",
                   help="divide by the vacuum variance of the same witness")
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    vlf = sub.add_parser("vlf", help="van Loock-Furusawa tests")
    vsub = vlf.add_subparsers(dest="vlf_command", required=True)
    p = vsub.add_parser("eval", help="evaluate one inequality at DC")
    _add_params(p)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--j", type=int, default=1)
    p.add_argument("--k", type=int, default=None)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--x", type=float, default=None)
    group.add_argument("--optimize", action="store_true")

    p = vsub.add_parser("scan", help="violation surface over (sigma, n)")
    _add_params(p, sigma=False, n=False)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--sigma-range", type=parse_range, required=True)
    p.add_argument("--n-range", type=parse_int_range, required=True)
    p.add_argument("--j", type=int, default=1)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--x", type=float, default=None, help="fixed x instead of optimising")
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("fig2", help="phase-sum and pump-combination variances versus sigma")
    _add_params(p, sigma=False, n=False)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--x-policy", default="sigma", help="'sigma' or a fixed number")
    p.add_argument("--sigma-range", type=parse_range, default=parse_range("1:3:200"))
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("verify", help="Monte-Carlo check of a DC witness variance")
    _add_params(p)
    p.add_argument("--witness", required=True)
    p.add_argument("--traj", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--bandwidth", type=float, default=None)
    return parser


def resolve_params(args, sigma=None, n=None) -> OpoParams:
    data = {}
    if getattr(args, "params", None):
        with open(args.params, encoding="utf-8") as fh:
            data = json.load(fh)
    # explicit flags override the file
    data["kappa"] = args.kappa if args.kappa is not None else data.get("kappa")
    data["sigma"] = sigma if sigma is not None else getattr(args, "sigma", data.get("sigma"))
    data["n"] = n if n is not None else getattr(args, "n", data.get("n"))
    data["k_a"] = args.k_a
    data["chi"] = args.chi
    if args.profile is not None:
        data["profile"] = args.profile
    return OpoParams.from_json(data)


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    return value


@contextmanager
def _open_output(path):
    if path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _meta(args, params=None, **extra):
    meta = {"version": __version__, "command": _command_name(args)}
    if params is not None:
        meta["params"] = params.to_json()
    meta.update(extra)
    return meta


def _command_name(args):
    if args.command == "vlf":
        return f"vlf {args.vlf_command}"
    return args.command


def _write_json(args, payload):
    with _open_output(args.output) as fh:
        json.dump(_jsonable(payload), fh, indent=2, allow_nan=False)
        fh.write("\n")


class _Table:
    """CSV (streamed, with header comments and a completion marker) or JSON records."""

    def __init__(self, fh, fmt, columns, meta):
        self.fh, self.fmt, self.columns, self.meta = fh, fmt, columns, meta
        self.records = []
        if fmt == "csv":
            fh.write(f"# opocomb {__version__}\n")
            fh.write("# meta: " + json.dumps(_jsonable(meta)) + "\n")
            self.writer = csv.writer(fh, lineterminator="\n")
            self.writer.writerow(columns)

    def row(self, values):
        if self.fmt == "csv":
            self.writer.writerow([_fmt(v) for v in values])
            self.fh.flush()
        else:
            self.records.append(dict(zip(self.columns, values)))

    def finish(self, complete=True, note=""):
        if self.fmt == "csv":
            self.fh.write(("# complete" if complete else "# incomplete") + (f": {note}" if note else "") + "\n")
        else:
            json.dump(_jsonable({"meta": self.meta, "complete": complete, "note": note,
                                 "rows": self.records}), self.fh, indent=2)
            self.fh.write("\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def cmd_steady_state(args):
    params = resolve_params(args)
    ss = steady_state(params)
    _write_json(args, {"meta": _meta(args, params),
                       "alpha": ss.alpha.tolist(), "pump_mean": ss.pump_mean,
                       "pump_in": ss.pump_in, "pump_threshold": threshold_pump(params),
                       "phases": ss.phases.tolist()})


def cmd_stability(args):
    params = resolve_params(args)
    report = is_stable(params)
    payload = {"meta": _meta(args, params), "params": params.to_json()}
    payload.update(report.to_json())
    _write_json(args, payload)


def cmd_spectrum(args):
    params = resolve_params(args)
    ss = steady_state(params)
    w = parse_witness(args.witness, params.n)
    if args.points < 1 or not 0 < args.omega_min <= args.omega_max:
        raise ValueError("need 0 < omega-min <= omega-max and points >= 1")
    grid = (np.geomspace if args.log_spacing else np.linspace)(args.omega_min, args.omega_max, args.points)
    norm = w.shot_noise() if args.normalize == "shot" else 1.0
    meta = _meta(args, params, witness=args.witness, normalize=args.normalize)
    with _open_output(args.output) as fh:
        table = _Table(fh, args.format, ["omega", "variance"], meta)
        skipped = 0
        for omega in grid:
            try:
                table.row([float(omega), witness_variance_at(w, params, ss, float(omega)) / norm])
            except PoleError as exc:
                log.warning("skipping omega=%g: %s", omega, exc)
                skipped += 1
        table.finish(note=f"{skipped} pole points skipped" if skipped else "")


def cmd_vlf_eval(args):
    params = resolve_params(args)
    ss = steady_state(params)
    if args.optimize:
        result = optimize_x(args.kind, params, ss, j=args.j, k=args.k)
    else:
        x = args.x
        if args.kind in X_KINDS and x is None:
            raise ValueError(f"{args.kind} needs --x or --optimize")
        result = evaluate(build_case(args.kind, params, j=args.j, k=args.k, x=x), params, ss)
    payload = {"meta": _meta(args, params, j=args.j, k=args.k)}
    payload.update(result.to_json())
    _write_json(args, payload)


def cmd_vlf_scan(args):
    if np.any(args.sigma_range < 1):
        raise ValueError("sigma range must stay >= 1")
    if args.kind in ("S2", "S2p", "S3", "S4") and args.n_range[0] < 2:
        raise ValueError(f"{args.kind} needs n >= 2")
    workers = args.threads or default_workers()
    meta = _meta(args, kind=args.kind, kappa=args.kappa, k_a=args.k_a, chi=args.chi,
                 j=args.j, k=args.k, x=args.x,
                 sigma=[float(s) for s in args.sigma_range],
                 n=[int(n) for n in args.n_range])
    columns = ["sigma", "n", "violation", "x_opt", "S", "bound"]
    with _open_output(args.output) as fh:
        table = _Table(fh, args.format, columns, meta)
        failed = 0
        try:
            for sigma, n, res, err in iter_surface(
                    args.kind, args.sigma_range, args.n_range, kappa=args.kappa, k_a=args.k_a,
                    chi=args.chi, j=args.j, k=args.k, x=args.x, optimize=args.x is None,
                    workers=workers):
                if res is None:
                    failed += 1
                    log.warning("cell n=%d sigma=%g failed: %s", n, sigma, err)
                    table.row([sigma, n, math.nan, math.nan, math.nan, math.nan])
                    continue
                x_opt = res.x_opt if res.x_opt is not None else math.nan
                table.row([sigma, n, res.violation, x_opt, res.S, res.bound])
        except BaseException as exc:
            table.finish(complete=False, note=f"{type(exc).__name__}: {exc}")
            raise
        table.finish(note=f"{failed} cells failed" if failed else "")


def cmd_fig2(args):
    policy = args.x_policy
    if policy != "sigma":
        try:
            fixed_x = float(policy)
        except ValueError:
            raise ValueError("--x-policy must be 'sigma' or a number") from None
        if fixed_x <= 0:
            raise ValueError("fixed x must be > 0")
    sigmas = args.sigma_range
    if np.any(sigmas < 1):
        raise ValueError("sigma range must stay >= 1")
    base = resolve_params(args, sigma=float(sigmas[0]), n=args.n)
    meta = _meta(args, base, x_policy=policy, sigma=[float(s) for s in sigmas])
    meta["params"].pop("sigma")
    with _open_output(args.output) as fh:
        table = _Table(fh, args.format, ["sigma", "nV_Pplus", "V_v1"], meta)
        best = (math.inf, None)
        for sigma in sigmas:
            params = base.with_sigma(float(sigma))
            ss = steady_state(params)
            x = float(sigma) if policy == "sigma" else fixed_x
            v1 = build_case("S1", params, x=x).v
            single = parse_witness("P+1", params.n)
            nv = params.n * witness_variance_dc(single, params, ss)
            vv = witness_variance_dc(v1, params, ss)
            table.row([float(sigma), nv, vv])
            if vv < best[0]:
                best = (vv, float(sigma))
        table.finish(note=f"min V_v1={best[0]!r} at sigma={best[1]!r}")


def cmd_verify(args):
    params = resolve_params(args)
    ss = steady_state(params)
    w = parse_witness(args.witness, params.n)
    cfg = SimConfig.for_params(params, n_traj=args.traj, seed=args.seed,
                               dt=args.dt, bandwidth=args.bandwidth)
    cfg.check_against(params)
    est = simulate_dc_variance(w, params, ss, cfg)
    analytic = witness_variance_dc(w, params, ss)
    distance = abs(est.estimate - analytic) / est.stderr if est.stderr > 0 else math.inf
    config = {"dt": cfg.dt, "t_total": cfg.t_total, "n_traj": cfg.n_traj, "seed": cfg.seed,
              "burn_in": cfg.burn_in, "lowpass_bandwidth": cfg.lowpass_bandwidth}
    _write_json(args, {"meta": _meta(args, params, witness=args.witness, seed=args.seed,
                                     sim=config),
                       "estimate": est.estimate, "stderr": est.stderr, "analytic": analytic,
                       "sigma_distance": distance, "undersampled": est.undersampled})


COMMANDS = {
    "steady-state": cmd_steady_state,
    "stability": cmd_stability,
    "spectrum": cmd_spectrum,
    "vlf eval": cmd_vlf_eval,
    "vlf scan": cmd_vlf_scan,
    "fig2": cmd_fig2,
    "verify": cmd_verify,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[_command_name(args)](args)
    except (ValueError, OSError) as exc:
        print(f"opocomb: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"opocomb: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
