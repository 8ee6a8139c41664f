"""Command-line interface: ``firstbest simulate | estimate | tables | catalog``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bspline import BasisSpec
from .data import Sample, ValueWeight, read_csv_sample, trim_common_support
from .density import DEFAULT_SCALE, fit_kde
from .dgp import MODEL_IDS, catalog_table
from .errors import (
    BandEmptyError,
    ConfigError,
    DegenerateSampleError,
    FirstBestError,
    ParseError,
    SchemaError,
    UnknownModelError,
)
from .functionals import (
    BAND_M,
    CRITICAL_95,
    EMPIRICAL_IOTA,
    POINT_M,
    SIM_EPS,
    DerivVector,
    bootstrap_critical_value,
    confidence_interval,
    deriv_value_band,
    deriv_welfare_sample,
    estimate_welfare_sample,
    value_sample_mean,
    var_sieve,
)
from .montecarlo import MCConfig, format_table, read_table_csv, run_grid, write_table_csv
from .sieve import DEFAULT_DEGREE, default_interior_knots, fit_propensity, fit_sieve, robust_covariance

SCHEMA_VERSION = 1
log = logging.getLogger("firstbest")


class UsageError(Exception):
    """Bad command line; maps to exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="firstbest", description="Inference on first-best welfare and value functionals.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a Monte Carlo coverage grid", formatter_class=fmt)
    s.add_argument("--models", type=_str_list, default=("M1",), help="comma-separated model ids")
    s.add_argument("--n", type=_int_list, default=(1500, 3000, 6000), help="comma-separated sample sizes")
    s.add_argument("--reps", type=int, default=500, help="replications per cell")
    s.add_argument("--seed", type=int, default=0, help="master seed")
    s.add_argument("--kind", choices=("welfare_known_f", "welfare_sample", "value_known_f", "value_sample"),
                   default=None, help="estimator (default: the model's own kind)")
    s.add_argument("--variance", choices=("analytic", "sieve"), default=None,
                   help="variance estimator (default: analytic for welfare, sieve for value)")
    s.add_argument("--M", type=int, default=POINT_M, help="Sobol points for point estimates")
    s.add_argument("--band-M", type=int, default=BAND_M, help="Sobol points for the band integral")
    s.add_argument("--eps", type=float, default=SIM_EPS, help="band half-width")
    s.add_argument("--interior-knots", type=int, default=None,
                   help="interior knots per dimension and arm (default: sample-size rule)")
    s.add_argument("--degree", type=int, default=DEFAULT_DEGREE, help="B-spline degree")
    s.add_argument("--knots", choices=("uniform", "quantile"), default="uniform",
                   help="interior knot placement")
    s.add_argument("--kde-scale", type=float, default=1.0, help="bandwidth multiplier for value_sample")
    s.add_argument("--workers", type=int, default=1, help="worker processes")
    s.add_argument("--out", type=Path, default=None, help="CSV output path (default: stdout table)")

    e = sub.add_parser("estimate", help="estimate a functional on a CSV data set", formatter_class=fmt)
    e.add_argument("--data", type=Path, required=True, help="input CSV")
    e.add_argument("--outcome", required=True, help="outcome column")
    e.add_argument("--treat", required=True, help="0/1 treatment column")
    e.add_argument("--covars", type=_str_list, required=True, help="comma-separated covariate columns")
    e.add_argument("--functional", choices=("welfare", "share"), default="welfare",
                   help="welfare gain or share treated")
    e.add_argument("--variance", choices=("analytic", "sieve"), default="sieve",
                   help="welfare variance estimator (share always uses sieve)")
    e.add_argument("--cost", type=float, default=0.0, help="subtracted from treated outcomes")
    e.add_argument("--trim", choices=("common-support", "none"), default="common-support",
                   help="support trimming before fitting")
    band = e.add_mutually_exclusive_group()
    band.add_argument("--eps", type=float, default=None, help="absolute band half-width")
    band.add_argument("--iota", type=float, default=None,
                      help=f"band half-width as a fraction of SD(h_hat) (default {EMPIRICAL_IOTA})")
    e.add_argument("--kde-scale", type=float, default=DEFAULT_SCALE, help="bandwidth multiplier")
    e.add_argument("--band-M", type=int, default=BAND_M, help="Sobol points for the band integral")
    e.add_argument("--interior-knots1", type=int, default=None, help="treated-arm interior knots (default: rule)")
    e.add_argument("--interior-knots0", type=int, default=None, help="control-arm interior knots (default: rule)")
    e.add_argument("--degree", type=int, default=DEFAULT_DEGREE, help="B-spline degree")
    e.add_argument("--knots", choices=("uniform", "quantile"), default="uniform",
                   help="interior knot placement (quantile uses each fit's own rows)")
    e.add_argument("--bootstrap", type=int, default=0,
                   help="multiplier-bootstrap draws for the critical value (0: use the normal value)")
    e.add_argument("--critical", type=float, default=CRITICAL_95, help="normal critical value")
    e.add_argument("--seed", type=int, default=0, help="seed for the bootstrap")
    e.add_argument("--out", type=Path, default=None, help="JSON output path (default: stdout)")

    t = sub.add_parser("tables", help="render a simulate CSV as an aligned table", formatter_class=fmt)
    t.add_argument("csv", type=Path, help="table CSV written by simulate")
    t.add_argument("--out", type=Path, default=None, help="text output path (default: stdout)")

    sub.add_parser("catalog", help="print the model catalog as markdown", formatter_class=fmt)
    return p


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    bad = [m for m in args.models if m.upper() not in MODEL_IDS]
    if bad:
        raise UsageError(f"unknown model id(s) {bad}; valid ids: {', '.join(MODEL_IDS)}")
    try:
        config = MCConfig(
            models=tuple(m.upper() for m in args.models), ns=args.n, reps=args.reps,
            seed=args.seed, kind=args.kind, variance=args.variance, M=args.M,
            band_M=args.band_M, eps=args.eps, interior=args.interior_knots,
            degree=args.degree, placement=args.knots, kde_scale=args.kde_scale,
            workers=args.workers,
        )
    except (ConfigError, UnknownModelError) as exc:
        raise UsageError(str(exc)) from None
    rows = run_grid(config)
    if args.out is None:
        sys.stdout.write(format_table(rows))
    else:
        write_table_csv(rows, args.out)
    return 0


def _spec(domain, x, override, args):
    k = override if override is not None else default_interior_knots(x.shape[0], domain.dim)
    return BasisSpec.build(domain, args.degree, k, args.knots, x)


def cmd_estimate(args) -> int:
    if args.eps is not None and not args.eps > 0:
        raise UsageError("--eps must be positive")
    if args.iota is not None and not args.iota > 0:
        raise UsageError("--iota must be positive")
    if args.bootstrap and args.bootstrap < 100:
        raise UsageError("--bootstrap needs at least 100 draws")
    sample = read_csv_sample(args.data, args.outcome, args.treat, list(args.covars))
    n_raw = sample.n
    if args.cost:
        sample = Sample(sample.y - args.cost * sample.d, sample.d, sample.x, sample.domain)
    if args.trim == "common-support":
        sample, _ = trim_common_support(sample)
    dom = sample.domain
    treated = sample.d == 1
    fit = fit_sieve(
        sample,
        _spec(dom, sample.x[treated], args.interior_knots1, args),
        _spec(dom, sample.x[~treated], args.interior_knots0, args),
    )
    meta = {
        "n_raw": n_raw,
        "n_used": sample.n,
        "n_trimmed": n_raw - sample.n,
        "trim": args.trim,
        "cost": args.cost,
        "degree": args.degree,
        "knots": args.knots,
        "K1": fit.K1,
        "K0": fit.K0,
        "seed": args.seed,
    }
    critical = args.critical
    if args.functional == "welfare":
        pfit = None
        if args.variance == "analytic":
            pfit = fit_propensity(sample, _spec(dom, sample.x, None, args))
        est = estimate_welfare_sample(fit, sample, args.variance, pfit, critical)
        point, sigma = est.point, est.se * math.sqrt(sample.n)
        meta["variance"] = args.variance
        delta = deriv_welfare_sample(fit, sample)
    else:
        h = fit.cate_values(sample.x)
        if args.eps is not None:
            eps, iota = args.eps, None
        else:
            iota = args.iota if args.iota is not None else EMPIRICAL_IOTA
            eps = iota * float(np.std(h, ddof=1))
            if not eps > 0:
                raise DegenerateSampleError("fitted CATE is constant; cannot size the band")
        kde = fit_kde(sample.x, args.kde_scale)
        weight = ValueWeight.constant(1.0, "share")
        point = value_sample_mean(fit, weight, sample)
        try:
            delta = deriv_value_band(fit, weight, kde.pdf, dom, eps, args.band_M)
            meta["band_empty"] = False
        except BandEmptyError:
            # no mass near the boundary: the share is locally constant in the fit
            log.warning("no Sobol point falls in the band |h| < %g; reporting a zero SE", eps)
            delta = DerivVector(np.zeros(fit.coef.size), fit.K1)
            meta["band_empty"] = True
        sigma = math.sqrt(var_sieve(delta, robust_covariance(fit)))
        meta.update({"variance": "sieve", "eps": eps, "iota": iota,
                     "kde_scale": args.kde_scale, "kde_bandwidths": kde.bandwidths.tolist(),
                     "band_M": args.band_M})
    if args.bootstrap:
        # the multiplier statistic only carries the sieve part of the variance
        sigma_sieve = math.sqrt(var_sieve(delta, robust_covariance(fit)))
        if sigma_sieve > 0:
            critical = bootstrap_critical_value(fit, delta, sigma_sieve, args.bootstrap, args.seed)
        meta["bootstrap_B"] = args.bootstrap
    lo, hi = confidence_interval(point, sigma, sample.n, critical)
    result = {
        "schema_version": SCHEMA_VERSION,
        "functional": args.functional,
        "point": point,
        "se": sigma / math.sqrt(sample.n),
        "ci": [lo, hi],
        "critical": critical,
        "n": sample.n,
        "meta": meta,
        "fit": fit.to_dict(),
    }
    _emit(json.dumps(result, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def cmd_tables(args) -> int:
    try:
        records = read_table_csv(args.csv)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    _emit(format_table(records), args.out)
    return 0


def cmd_catalog(args) -> int:
    sys.stdout.write(catalog_table() + "\n")
    return 0


_COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "tables": cmd_tables,
             "catalog": cmd_catalog}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"firstbest {args.command}: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, ParseError, FileNotFoundError) as exc:
        print(f"firstbest {args.command}: {exc}", file=sys.stderr)
        return 2
    except FirstBestError as exc:
        print(f"firstbest {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
