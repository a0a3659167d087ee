"""Command-line front end.

``rdjoint analyze`` estimates a design from a CSV file; ``rdjoint simulate``
runs a coverage experiment from a key-value config file. Standard output
only ever carries JSON; errors are also reported as JSON with a stable
``code``, and a one-line message goes to standard error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .band import BandRequest, uniform_band
from .bandwidth import rule_of_thumb_bandwidths
from .data import FitSpec, load_sample, validate_sample
from .errors import (DomainError, EstimationError, InferenceError, ParseError, RDError,
                     RDWarning, SchemaError)
from .fuzzy import assemble_omega_fuzzy, estimate_fuzzy
from .inference import confidence_region, rbc_marginal_interval, region_boundary
from .sharp import assemble_omega, estimate_sharp, nn_variance
from .simlab import parse_config

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_ESTIMATION, EXIT_INFERENCE = 0, 2, 3, 4


class UsageError(RDError):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, InferenceError):
        return EXIT_INFERENCE
    if isinstance(exc, EstimationError):
        return EXIT_ESTIMATION
    return EXIT_USAGE


def _clean(obj, path="", notes=None):
    """Replace non-finite floats by ``None`` and record where it happened."""
    if isinstance(obj, dict):
        return {k: _clean(v, f"{path}.{k}" if path else k, notes) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, f"{path}[{i}]", notes) for i, v in enumerate(obj)]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist(), path, notes)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if not math.isfinite(value):
            if notes is not None:
                notes.append({"code": "non_finite", "message": f"{path} is not finite"})
            return None
        return value
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(payload, out):
    notes = []
    payload = _clean(payload, notes=notes)
    if notes and isinstance(payload.get("warnings"), list):
        payload["warnings"].extend(notes)
    out.write(json.dumps(payload, indent=2, allow_nan=False))
    out.write("\n")


def _fail(exc: Exception, out, err) -> int:
    code = getattr(exc, "code", "error")
    _emit({"schema_version": SCHEMA_VERSION, "error": {"code": code, "message": str(exc)}}, out)
    err.write(f"error [{code}]: {exc}\n")
    return _exit_code(exc)


def _build_parser():
    parser = _Parser(prog="rdjoint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    an = sub.add_parser("analyze", help="estimate a design from CSV data")
    an.add_argument("--data", required=True, type=Path, help="CSV file with a header row")
    an.add_argument("--x", required=True, help="running variable column")
    an.add_argument("--y", required=True, help="outcome column")
    an.add_argument("--t", default=None, help="treatment column (fuzzy design)")
    an.add_argument("--cutoff", required=True, type=float, help="threshold of the running variable")
    an.add_argument("--p", type=int, default=1, help="main polynomial order (default 1)")
    an.add_argument("--q", type=int, default=None, help="pilot polynomial order (default p + 1)")
    an.add_argument("--h", type=float, default=None,
                    help="main bandwidth (default: plug-in rule)")
    an.add_argument("--b", type=float, default=None, help="pilot bandwidth (default h if --h is set)")
    an.add_argument("--kernel", default="triangular",
                    help="triangular, epanechnikov or uniform")
    an.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level")
    an.add_argument("--delta-lo", type=float, default=0.0,
                    help="extrapolate down to cutoff - delta-lo")
    an.add_argument("--delta-hi", type=float, default=0.0,
                    help="extrapolate up to cutoff + delta-hi")
    an.add_argument("--grid", type=int, default=101, help="band grid size")
    an.add_argument("--band", choices=("uniform", "envelope", "none"), default="uniform")
    an.add_argument("--boundary-points", type=int, default=256,
                    help="vertices of the emitted ellipse")
    an.add_argument("--nn-neighbors", type=int, default=3,
                    help="neighbours in the variance estimator")

    sim = sub.add_parser("simulate", help="run a Monte Carlo coverage experiment")
    sim.add_argument("--config", required=True, type=Path, help="experiment file")
    sim.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def _warning_entries(caught):
    entries = []
    for w in caught:
        msg = w.message
        code = getattr(msg, "code", None) or type(msg).__name__
        entries.append({"code": code, "message": str(msg)})
    return entries


def _analyze(args) -> dict:
    if not (0.0 < args.alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {args.alpha}", code="bad_alpha")
    if args.boundary_points < 8:
        raise DomainError("--boundary-points must be >= 8", code="bad_boundary_points")
    schema = {"running": args.x, "outcome": args.y, "treatment": args.t}
    try:
        with open(args.data, encoding="utf-8", newline="") as fh:
            sample = load_sample(fh, schema, args.cutoff)
    except OSError as exc:
        raise SchemaError(f"cannot read {args.data}: {exc.strerror}", code="unreadable_data") \
            from None
    fuzzy = args.t is not None

    bandwidth_source = "user"
    if args.h is None:
        if args.b is not None:
            raise DomainError("--b requires --h", code="bad_bandwidth")
        h, b = rule_of_thumb_bandwidths(sample, args.p, args.kernel, args.q)
        bandwidth_source = "rule_of_thumb"
    else:
        h, b = args.h, args.b
        if b is None:
            b = h
            warnings.warn(RDWarning("--b not given; using b = h", "b_defaults_to_h"))
    spec = FitSpec(h=h, b=b, p=args.p, q=args.q, kernel=args.kernel, alpha=args.alpha,
                   delta_lo=args.delta_lo, delta_hi=args.delta_hi,
                   nn_neighbors=args.nn_neighbors)
    request = None
    if args.band != "none":
        request = BandRequest(spec.delta_lo, spec.delta_hi, args.grid, spec.alpha, args.band)

    report = validate_sample(sample, spec)
    fatal = report.first_fatal()
    if fatal is not None:
        raise EstimationError(fatal.message, code=fatal.code)

    if fuzzy:
        variances = nn_variance(sample, spec, include_treatment=True)
        est = estimate_fuzzy(sample, spec, variances)
        tau_prime = est.tau_prime_frd  # weak slope first stage is an estimation failure
        omega = assemble_omega_fuzzy(est, variances, spec)
        estimates = {
            "tau_hat": est.tau_hat_frd,
            "tau_prime_hat": est.tau_prime_hat_frd,
            "tau_tilde": est.tau_frd,
            "tau_prime_tilde": tau_prime,
            "outcome": _sharp_estimates(est.y_part),
            "first_stage": dict(_sharp_estimates(est.t_part),
                                tau_prime_hat_se=est.tau_prime_t_se),
        }
    else:
        variances = nn_variance(sample, spec)
        est = estimate_sharp(sample, spec)
        omega = assemble_omega(est, variances, spec)
        estimates = _sharp_estimates(est)

    center = est.center
    region = confidence_region(center, omega.omega_h, spec.alpha)
    boundary = region_boundary(region, args.boundary_points)
    band = None
    if request is not None:
        ub = uniform_band(center, omega, request)
        band = {"variant": ub.variant, "c_star": ub.c_star, "arc_angle": ub.arc_angle,
                "xs": ub.xs, "center": ub.center, "lo": ub.lo, "hi": ub.hi}

    return {
        "schema_version": SCHEMA_VERSION,
        "design": "fuzzy" if fuzzy else "sharp",
        "spec": {
            "p": spec.p, "q": spec.q, "h": spec.h, "b": spec.b, "kernel": spec.kernel,
            "alpha": spec.alpha, "delta_lo": spec.delta_lo, "delta_hi": spec.delta_hi,
            "nn_neighbors": spec.nn_neighbors, "bandwidth_source": bandwidth_source,
        },
        "sample": {
            "n": sample.n, "cutoff": sample.cutoff,
            "n_left": report.n_left, "n_right": report.n_right,
            "n_left_in_h": report.n_left_in_h, "n_right_in_h": report.n_right_in_h,
            "n_left_in_b": report.n_left_in_b, "n_right_in_b": report.n_right_in_b,
        },
        "estimates": estimates,
        "omega": {"V": omega.V, "Vp": omega.Vp, "C": omega.C, "omega_h": omega.omega_h},
        "marginal": {
            "tau": list(rbc_marginal_interval(center[0], omega.omega_h[0, 0], spec.alpha)),
            "tau_prime": list(rbc_marginal_interval(center[1], omega.omega_h[1, 1], spec.alpha)),
        },
        "region": {
            "center": list(region.center), "level": region.level,
            "chi2_crit": region.chi2_crit, "boundary": [list(pt) for pt in boundary],
        },
        "band": band,
        "warnings": [],
    }


def _sharp_estimates(est) -> dict:
    return {
        "tau_hat": est.tau_hat, "tau_prime_hat": est.tau_prime_hat,
        "tau_tilde": est.tau_tilde, "tau_prime_tilde": est.tau_prime_tilde,
        "mu_p1_left": est.mu_p1_left, "mu_p1_right": est.mu_p1_right,
        "B_left": est.B_left, "B_right": est.B_right,
        "Bp_left": est.Bp_left, "Bp_right": est.Bp_right,
    }


def _simulate(args) -> dict:
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        raise DomainError(f"cannot read {args.config}: {exc.strerror}", code="bad_config") \
            from None
    if args.jobs < 1:
        raise DomainError("--jobs must be >= 1", code="usage")
    config = parse_config(text)
    start = time.perf_counter()
    report = config.run(jobs=args.jobs)
    payload = {"schema_version": SCHEMA_VERSION}
    payload.update(report.to_dict())
    payload["config"] = {
        "n": config.n, "reps": config.reps,
        "bandwidth": "rule_of_thumb" if config.auto_bandwidth else "fixed",
        "mu_left": list(config.dgp.mu_left), "mu_right": list(config.dgp.mu_right),
        "noise_sd_left": config.dgp.noise_sd_left, "noise_sd_right": config.dgp.noise_sd_right,
        "x_dist": list(config.dgp.x_dist), "seed": config.dgp.seed,
        "fuzzy": config.dgp.fuzzy is not None,
        "p": config.spec.p, "q": config.spec.q, "kernel": config.spec.kernel,
        "alpha": config.spec.alpha, "delta_lo": config.spec.delta_lo,
        "delta_hi": config.spec.delta_hi, "grid": config.grid_size,
    }
    if not config.auto_bandwidth:
        payload["config"].update(h=config.spec.h, b=config.spec.b)
    payload["elapsed_seconds"] = time.perf_counter() - start
    return payload


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, out, err)
    except SystemExit as exc:
        # --help exits through argparse; usage text already went to stdout
        return int(exc.code or 0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            payload = _analyze(args) if args.command == "analyze" else _simulate(args)
        except (RDError, ValueError) as exc:
            return _fail(exc, out, err)
    if "warnings" in payload:
        payload["warnings"].extend(_warning_entries(caught))
    else:
        payload["warnings"] = _warning_entries(caught)
    _emit(payload, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
