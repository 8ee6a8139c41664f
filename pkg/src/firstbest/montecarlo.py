"""Replication driver for the coverage studies.

Every replication owns a random substream derived from
``(master seed, model number, n, replication index)``, and aggregation runs
in replication order after all workers finish, so a grid's numbers do not
depend on the worker count.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .bspline import BasisSpec
from .data import TargetDistribution, ValueWeight, trim_common_support
from .density import fit_kde
from .dgp import DGPSpec, MODEL_IDS, make_dgp, simulate_sample, true_functional
from .errors import CellFailure, ConfigError, FirstBestError
from .functionals import (
    BAND_M,
    CRITICAL_95,
    KINDS,
    POINT_M,
    SIM_EPS,
    estimate_value_known_f,
    estimate_value_sample,
    estimate_welfare_known_f,
    estimate_welfare_sample,
)
from .sieve import DEFAULT_DEGREE, default_interior_knots, fit_propensity, fit_sieve

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("model", "n", "true", "bias", "sd", "se", "sd_se", "coverage", "failures")
WELFARE_TRUTH_M = 5000
VALUE_TRUTH_M = 1_000_000
MAX_FAILURE_RATE = 0.2


@dataclass(frozen=True)
class MCConfig:
    models: tuple[str, ...] = ("M1",)
    ns: tuple[int, ...] = (1500, 3000, 6000)
    reps: int = 500
    seed: int = 0
    kind: str | None = None
    variance: str | None = None
    M: int = POINT_M
    band_M: int = BAND_M
    eps: float = SIM_EPS
    interior: int | None = None
    degree: int = DEFAULT_DEGREE
    placement: str = "uniform"
    kde_scale: float = 1.0
    workers: int = 1
    noise_sd: float | None = None
    truth_M: int | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if not self.ns or any(int(n) < 2 for n in self.ns):
            raise ConfigError(f"sample sizes must be >= 2, got {self.ns}")
        for m in self.models:
            make_dgp(m)
        if self.kind is not None and self.kind not in KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}; choose from {KINDS}")
        if self.variance not in (None, "analytic", "sieve"):
            raise ConfigError(f"variance must be 'analytic' or 'sieve', got {self.variance!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.placement not in ("uniform", "quantile"):
            raise ConfigError(f"placement must be 'uniform' or 'quantile', got {self.placement!r}")

    def kind_for(self, dgp: DGPSpec) -> str:
        return self.kind or dgp.kind

    def variance_for(self, kind: str) -> str:
        if kind.startswith("value"):
            if self.variance == "analytic":
                raise ConfigError("the value functional only has a sieve variance")
            return "sieve"
        return self.variance or "analytic"


@dataclass
class MCRow:
    model: str
    n: int
    true_value: float
    bias: float
    sd: float
    mean_se: float
    sd_se: float
    coverage: float
    reps_used: int
    failures: int
    estimates: np.ndarray = field(default=None, repr=False)
    ses: np.ndarray = field(default=None, repr=False)

    def table_record(self) -> dict:
        return {
            "model": self.model,
            "n": self.n,
            "true": self.true_value,
            "bias": self.bias,
            "sd": self.sd,
            "se": self.mean_se,
            "sd_se": self.sd_se,
            "coverage": self.coverage,
            "failures": self.failures,
        }


def _dgp_for(model: str, config: MCConfig) -> DGPSpec:
    dgp = make_dgp(model)
    return dgp if config.noise_sd is None else dgp.with_noise(config.noise_sd)


def truth(dgp: DGPSpec, kind: str, config: MCConfig) -> float:
    if kind.startswith("value"):
        return true_functional(dgp, "value", config.truth_M or VALUE_TRUTH_M)
    return true_functional(dgp, "welfare", config.truth_M or WELFARE_TRUTH_M)


def _spec(domain, x: np.ndarray, config: MCConfig) -> BasisSpec:
    """Basis for a fit on the covariate rows ``x`` (knots at their quantiles by default)."""
    n = x.shape[0]
    k = config.interior if config.interior is not None else default_interior_knots(n, domain.dim)
    return BasisSpec.build(domain, config.degree, k, config.placement, x)


def replicate(dgp: DGPSpec, n: int, seed, config: MCConfig) -> tuple[float, float, float, float]:
    """One simulated draw: returns ``(estimate, se, ci_low, ci_high)``."""
    kind = config.kind_for(dgp)
    variance = config.variance_for(kind)
    sample = simulate_sample(dgp, n, seed)
    if kind in ("welfare_sample", "value_sample"):
        sample, _ = trim_common_support(sample)
    dom = sample.domain
    treated = sample.d == 1
    fit = fit_sieve(sample, _spec(dom, sample.x[treated], config), _spec(dom, sample.x[~treated], config))
    pfit = fit_propensity(sample, _spec(dom, sample.x, config)) if variance == "analytic" else None
    dist = dgp.target()
    if kind == "welfare_known_f":
        est = estimate_welfare_known_f(fit, sample, dist, variance, pfit, dgp.lam, config.M)
    elif kind == "welfare_sample":
        est = estimate_welfare_sample(fit, sample, variance, pfit)
    else:
        v0 = dgp.v0 or (lambda x: np.ones(np.atleast_2d(x).shape[0]))
        weight = ValueWeight(lambda x: dgp.scale * v0(x), f"{dgp.scale:g}*v0")
        if kind == "value_known_f":
            est = estimate_value_known_f(fit, sample, weight, dist, config.eps, config.M, config.band_M)
        else:
            kde = fit_kde(sample.x, config.kde_scale)
            est = estimate_value_sample(fit, sample, weight, kde.pdf, config.eps, config.band_M)
    return est.point, est.se, est.ci_low, est.ci_high


def _seed(config: MCConfig, model: str, n: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(config.seed, spawn_key=(MODEL_IDS.index(model), int(n), r))


def _task(args):
    model, n, r, config = args
    try:
        return replicate(_dgp_for(model, config), n, _seed(config, model, n, r), config)
    except FirstBestError as exc:
        return exc.__class__.__name__ + ": " + str(exc)


def aggregate(
    model: str,
    n: int,
    true_value: float,
    estimates: Sequence[float],
    ses: Sequence[float],
    lows: Sequence[float],
    highs: Sequence[float],
    failures: int = 0,
) -> MCRow:
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    lo = np.asarray(lows, dtype=float)
    hi = np.asarray(highs, dtype=float)
    R = est.size
    if R == 0:
        nan = float("nan")
        return MCRow(model, n, true_value, nan, nan, nan, nan, nan, 0, failures, est, se)
    hits = (lo <= true_value) & (true_value <= hi)
    return MCRow(
        model=model,
        n=int(n),
        true_value=float(true_value),
        bias=float(est.mean() - true_value),
        sd=float(est.std(ddof=1)) if R > 1 else 0.0,
        mean_se=float(se.mean()),
        sd_se=float(se.std(ddof=1)) if R > 1 else 0.0,
        coverage=float(hits.mean()),
        reps_used=R,
        failures=int(failures),
        estimates=est,
        ses=se,
    )


def _run_tasks(tasks: list, workers: int) -> list:
    if workers == 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


def _collect(model: str, n: int, config: MCConfig, results: list) -> MCRow:
    dgp = _dgp_for(model, config)
    ok = [r for r in results if not isinstance(r, str)]
    failed = [r for r in results if isinstance(r, str)]
    if len(failed) > MAX_FAILURE_RATE * len(results):
        raise CellFailure(
            f"{model} n={n}: {len(failed)}/{len(results)} replications failed; first: {failed[0]}"
        )
    if failed:
        log.warning("%s n=%d: %d failed replications excluded", model, n, len(failed))
    arr = np.array(ok, dtype=float).reshape(-1, 4)
    return aggregate(model, n, truth(dgp, config.kind_for(dgp), config),
                     arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], len(failed))


def run_cell(model: str, n: int, config: MCConfig, reps: int | None = None) -> MCRow:
    R = reps or config.reps
    tasks = [(model, n, r, config) for r in range(R)]
    return _collect(model, n, config, _run_tasks(tasks, config.workers))


def run_grid(config: MCConfig) -> list[MCRow]:
    """All ``(model, n)`` cells in catalog order, then increasing ``n``."""
    cells = sorted(
        {(m.upper(), int(n)) for m in config.models for n in config.ns},
        key=lambda c: (MODEL_IDS.index(c[0]), c[1]),
    )
    tasks = [(m, n, r, config) for m, n in cells for r in range(config.reps)]
    results = _run_tasks(tasks, config.workers)
    R = config.reps
    return [
        _collect(m, n, config, results[i * R:(i + 1) * R]) for i, (m, n) in enumerate(cells)
    ]


# -- table I/O -------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table_csv(rows: Sequence[MCRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for row in rows:
            rec = row.table_record()
            w.writerow([_fmt(rec[c]) for c in TABLE_COLUMNS])


def read_table_csv(path: str | Path) -> list[dict]:
    """Parse a table CSV back into records; raises ``ConfigError`` when malformed."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if tuple(h.strip() for h in header) != TABLE_COLUMNS:
            raise ConfigError(f"expected columns {','.join(TABLE_COLUMNS)}, got {','.join(header)}")
        out = []
        for i, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(TABLE_COLUMNS):
                raise ConfigError(f"row {i}: expected {len(TABLE_COLUMNS)} fields, got {len(rec)}")
            try:
                d = {"model": rec[0].strip(), "n": int(rec[1]), "failures": int(rec[8])}
                for c, v in zip(TABLE_COLUMNS[2:8], rec[2:8]):
                    d[c] = float(v)
            except ValueError as exc:
                raise ConfigError(f"row {i}: {exc}") from None
            out.append(d)
    return out


def _catalog_key(rec: dict):
    m = rec["model"]
    return (MODEL_IDS.index(m) if m in MODEL_IDS else len(MODEL_IDS), m, rec["n"])


def format_table(records: Sequence[dict | MCRow]) -> str:
    """Aligned text table (model, n, true, bias, SD, SE, SD(SE), coverage, failures)."""
    recs = [r.table_record() if isinstance(r, MCRow) else r for r in records]
    recs = sorted(recs, key=_catalog_key)
    head = ["Model", "n", "True", "Bias", "SD", "SE", "SD(SE)", "Coverage", "Failures"]
    body = []
    prev = None
    for r in recs:
        body.append([
            r["model"] if r["model"] != prev else "",
            str(r["n"]),
            f"{r['true']:.4f}",
            f"{r['bias']:.4f}",
            f"{r['sd']:.4f}",
            f"{r['se']:.4f}",
            f"{r['sd_se']:.4f}",
            f"{r['coverage']:.4f}",
            str(r["failures"]),
        ])
        prev = r["model"]
    widths = [max(len(h), *(len(b[j]) for b in body)) if body else len(h) for j, h in enumerate(head)]
    line = lambda cells: "  ".join(  # noqa: E731
        c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(cells, widths))
    )
    rule = "-" * len(line(head))
    return "\n".join([line(head), rule, *(line(b) for b in body)]) + "\n"
