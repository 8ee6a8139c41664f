"""Plug-in estimators of the welfare and value functionals and their variances.

Welfare ``W = integral [h(x)]_+ f(x) dx`` and value
``V = integral 1{h(x) >= 0} v0(x) f(x) dx`` are evaluated at the sieve CATE
``h_hat``. Variances are reported as ``sigma^2`` on the ``sqrt(n)`` scale, so
a standard error is ``sigma / sqrt(n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .bspline import BasisSpec, contract_local, design_matrix, local_factors
from .data import Rect, Sample, TargetDistribution, ValueWeight
from .errors import BandEmptyError, DegenerateTrimError, ShapeError
from .qmc import expect_under, rect_points, _check_finite
from .sieve import (
    PropensityFit,
    RobustCovariance,
    SieveFit,
    propensity_keep_mask,
    robust_covariance,
)

CRITICAL_95 = 1.959964
POINT_M = 5000
BAND_M = 1_000_000
SIM_EPS = 0.005
EMPIRICAL_IOTA = 0.01

KINDS = ("welfare_known_f", "welfare_sample", "value_known_f", "value_sample")

_CHUNK = 1 << 16


@dataclass(frozen=True)
class FunctionalEstimate:
    kind: str
    point: float
    se: float
    ci_low: float
    ci_high: float
    n: int
    critical: float = CRITICAL_95
    meta: dict = field(default_factory=dict)

    @property
    def half_width(self) -> float:
        return self.critical * self.se

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "point": self.point,
            "se": self.se,
            "ci": [self.ci_low, self.ci_high],
            "critical": self.critical,
            "n": self.n,
            "meta": self.meta,
        }


@dataclass(frozen=True, eq=False)
class DerivVector:
    """Derivative of a functional along the interacted basis, ``(block1, block0)``.

    The control block carries the minus sign from ``h = mu(., 1) - mu(., 0)``.
    """

    delta: np.ndarray
    K1: int

    @property
    def block1(self) -> np.ndarray:
        return self.delta[: self.K1]

    @property
    def block0(self) -> np.ndarray:
        return self.delta[self.K1:]


def _factors_on_grid(spec: BasisSpec, rect: Rect, M: int):
    return _grid_factors_keyed(spec, rect.lower.tobytes(), rect.upper.tobytes(), rect.dim, M)


@lru_cache(maxsize=2)
def _grid_factors_keyed(spec, lo: bytes, hi: bytes, dim: int, M: int):
    rect = Rect(np.frombuffer(lo), np.frombuffer(hi))
    return local_factors(spec, rect_points(rect, M), clamp=True)


def cate_on_grid(fit: SieveFit, rect: Rect, M: int) -> np.ndarray:
    """``h_hat`` at the ``M`` Sobol points of ``rect`` (basis evaluations cached)."""
    f1 = _factors_on_grid(fit.spec1, rect, M)
    if fit.spec1 == fit.spec0:
        return contract_local(fit.spec1, f1, fit.beta1 - fit.beta0)
    f0 = _factors_on_grid(fit.spec0, rect, M)
    return contract_local(fit.spec1, f1, fit.beta1) - contract_local(fit.spec0, f0, fit.beta0)


def _weighted_basis_sum(spec: BasisSpec, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_j w_j psi(x_j)`` in chunks."""
    out = np.zeros(spec.K)
    for s in range(0, x.shape[0], _CHUNK):
        out += w[s:s + _CHUNK] @ design_matrix(spec, x[s:s + _CHUNK], clamp=True)
    return out


# -- point estimates ---------------------------------------------------------

def welfare_known_f(fit: SieveFit, dist: TargetDistribution, M: int = POINT_M) -> float:
    if dist.kind == "uniform":
        return float(np.maximum(cate_on_grid(fit, dist.support, M), 0.0).mean())
    return expect_under(lambda x: np.maximum(fit.cate_values(x), 0.0), dist, M)


def welfare_sample_mean(fit: SieveFit, sample: Sample) -> float:
    return float(np.maximum(fit.cate_values(sample.x), 0.0).mean())


def value_known_f(
    fit: SieveFit, weight: ValueWeight, dist: TargetDistribution, M: int = POINT_M
) -> float:
    if dist.kind == "uniform":
        pts = rect_points(dist.support, M)
        h = cate_on_grid(fit, dist.support, M)
        return float(((h >= 0) * weight.v0(pts)).mean())
    return expect_under(lambda x: (fit.cate_values(x) >= 0) * weight.v0(x), dist, M)


def value_sample_mean(fit: SieveFit, weight: ValueWeight, sample: Sample) -> float:
    h = fit.cate_values(sample.x)
    return float(((h >= 0) * weight.v0(sample.x)).mean())


# -- analytic variance -------------------------------------------------------

def var_welfare_analytic(
    fit: SieveFit,
    pfit: PropensityFit,
    sample: Sample,
    lam: Callable[[np.ndarray], np.ndarray] | None = None,
    mode: str = "known_f",
) -> float:
    """Plug-in asymptotic variance of the welfare estimator.

    Uses the regression residual ``y_i - mu_hat(x_i, d_i)`` and drops rows
    whose fitted propensity is outside (0, 1). With ``mode="sample_f"`` the
    density ratio is 1 and the sample variance of ``[h_hat]_+`` is added.
    """
    if mode not in ("known_f", "sample_f"):
        raise ValueError(f"mode must be 'known_f' or 'sample_f', got {mode!r}")
    keep = propensity_keep_mask(pfit, sample)
    if keep.sum() < 2:
        raise DegenerateTrimError(f"only {int(keep.sum())} rows survive propensity trimming")
    x = sample.x[keep]
    p = pfit.predict(x)
    h = fit.cate_values(sample.x)
    if mode == "sample_f" or lam is None:
        lam2 = np.ones(x.shape[0])
    else:
        lam2 = np.asarray(lam(x), dtype=float) ** 2
    u2 = fit.residuals[keep] ** 2
    sigma2 = float(np.mean((h[keep] >= 0) * lam2 * u2 / (p * (1 - p))))
    if mode == "sample_f":
        sigma2 += float(np.var(np.maximum(h, 0.0)))
    return sigma2


# -- sieve derivatives ---------------------------------------------------------

def _stack(b1: np.ndarray, b0: np.ndarray) -> DerivVector:
    return DerivVector(np.concatenate([b1, -b0]), b1.size)


def deriv_welfare_sieve(fit: SieveFit, dist: TargetDistribution, M: int = POINT_M) -> DerivVector:
    """Sobol estimate of ``(int_{h>=0} psi1 f, -int_{h>=0} psi0 f)``."""
    rect = dist.support
    pts = rect_points(rect, M)
    h = cate_on_grid(fit, rect, M)
    w = (h >= 0).astype(float)
    if dist.kind != "uniform":
        w = w * _check_finite(dist.pdf(pts), pts)
    scale = rect.volume / M if dist.kind != "uniform" else 1.0 / M
    idx = np.flatnonzero(w)
    b1 = scale * _weighted_basis_sum(fit.spec1, pts[idx], w[idx])
    b0 = scale * _weighted_basis_sum(fit.spec0, pts[idx], w[idx])
    return _stack(b1, b0)


def deriv_welfare_sample(fit: SieveFit, sample: Sample) -> DerivVector:
    """Sample-average version of the welfare derivative (``f = f0`` case)."""
    w = (fit.cate_values(sample.x) >= 0).astype(float) / sample.n
    return _stack(
        _weighted_basis_sum(fit.spec1, sample.x, w),
        _weighted_basis_sum(fit.spec0, sample.x, w),
    )


def band_derivative(
    cate_fn: Callable[[np.ndarray], np.ndarray],
    spec1: BasisSpec,
    spec0: BasisSpec,
    v0: Callable[[np.ndarray], np.ndarray],
    density: Callable[[np.ndarray], np.ndarray],
    support: Rect,
    eps: float,
    M: int = BAND_M,
    h_grid: np.ndarray | None = None,
) -> DerivVector:
    """Band approximation of the boundary-integral derivative.

    Each block is ``(1 / 2 eps) * int_{|h| < eps} psi(x) v0(x) density(x) dx``,
    integrated with ``M`` Sobol points on ``support``; the weight and density
    are only evaluated inside the band.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    pts = rect_points(support, M)
    h = cate_fn(pts) if h_grid is None else h_grid
    band = np.flatnonzero((h > -eps) & (h < eps))
    if band.size == 0:
        raise BandEmptyError(
            f"no Sobol point among {M} falls in the band |h| < {eps:g}", hits=0
        )
    xb = pts[band]
    w = _check_finite(np.asarray(v0(xb), dtype=float) * np.asarray(density(xb), dtype=float), xb)
    scale = support.volume / M / (2.0 * eps)
    return _stack(
        scale * _weighted_basis_sum(spec1, xb, w),
        scale * _weighted_basis_sum(spec0, xb, w),
    )


def deriv_value_band(
    fit: SieveFit,
    weight: ValueWeight,
    density: Callable[[np.ndarray], np.ndarray],
    support: Rect,
    eps: float,
    M: int = BAND_M,
) -> DerivVector:
    return band_derivative(
        fit.cate_values, fit.spec1, fit.spec0, weight.v0, density, support, eps, M,
        h_grid=cate_on_grid(fit, support, M),
    )


def var_sieve(delta: DerivVector, omega: RobustCovariance) -> float:
    d = delta.delta
    O = omega.omega
    if O.shape != (d.size, d.size):
        raise ShapeError(f"derivative length {d.size} does not match covariance {O.shape}")
    return max(float(d @ O @ d), 0.0)


def confidence_interval(
    point: float, sigma: float, n: int, critical: float = CRITICAL_95
) -> tuple[float, float]:
    half = critical * sigma / math.sqrt(n)
    return point - half, point + half


def bootstrap_critical_value(
    fit: SieveFit, delta: DerivVector, sigma_v: float, B: int = 1000, seed: int = 0
) -> float:
    """Sieve score (multiplier) bootstrap critical value for ``|t|``.

    Replicate ``b`` draws standard normal multipliers from its own substream
    ``(seed, b)`` and forms
    ``Z_b = sqrt(n) * delta' (B'B)^-1 sum_i b_i u_i w_ib / sigma_v``.
    Returns the ``ceil(0.95 B)``-th order statistic of ``|Z_b|``.
    """
    if B < 100:
        raise ValueError("B must be >= 100")
    d = delta.delta
    if not np.any(d):
        return 0.0
    score = (fit.design @ (fit.gram_inv @ d)) * fit.residuals
    root = np.random.SeedSequence(seed)
    z = np.empty(B)
    for b, child in enumerate(root.spawn(B)):
        w = np.random.default_rng(child).standard_normal(fit.n)
        z[b] = w @ score
    z = np.abs(z) * math.sqrt(fit.n) / sigma_v
    z.sort()
    return float(z[math.ceil(0.95 * B) - 1])


# -- assembled estimators -----------------------------------------------------

def _finish(kind, point, sigma2, n, critical, meta) -> FunctionalEstimate:
    sigma = math.sqrt(max(sigma2, 0.0))
    lo, hi = confidence_interval(point, sigma, n, critical)
    return FunctionalEstimate(kind, point, sigma / math.sqrt(n), lo, hi, n, critical, meta)


def estimate_welfare_known_f(
    fit: SieveFit,
    sample: Sample,
    dist: TargetDistribution,
    variance: str = "analytic",
    pfit: PropensityFit | None = None,
    lam: Callable | None = None,
    M: int = POINT_M,
    critical: float = CRITICAL_95,
) -> FunctionalEstimate:
    point = welfare_known_f(fit, dist, M)
    if variance == "analytic":
        if pfit is None:
            raise ValueError("analytic variance needs a propensity fit")
        sigma2 = var_welfare_analytic(fit, pfit, sample, lam, "known_f")
    elif variance == "sieve":
        sigma2 = var_sieve(deriv_welfare_sieve(fit, dist, M), robust_covariance(fit))
    else:
        raise ValueError(f"unknown variance {variance!r}")
    return _finish("welfare_known_f", point, sigma2, sample.n, critical,
                   {"M": M, "variance": variance})


def estimate_welfare_sample(
    fit: SieveFit,
    sample: Sample,
    variance: str = "analytic",
    pfit: PropensityFit | None = None,
    critical: float = CRITICAL_95,
) -> FunctionalEstimate:
    point = welfare_sample_mean(fit, sample)
    if variance == "analytic":
        if pfit is None:
            raise ValueError("analytic variance needs a propensity fit")
        sigma2 = var_welfare_analytic(fit, pfit, sample, None, "sample_f")
    elif variance == "sieve":
        h = fit.cate_values(sample.x)
        sigma2 = float(np.var(np.maximum(h, 0.0))) + var_sieve(
            deriv_welfare_sample(fit, sample), robust_covariance(fit)
        )
    else:
        raise ValueError(f"unknown variance {variance!r}")
    return _finish("welfare_sample", point, sigma2, sample.n, critical, {"variance": variance})


def estimate_value_known_f(
    fit: SieveFit,
    sample: Sample,
    weight: ValueWeight,
    dist: TargetDistribution,
    eps: float = SIM_EPS,
    M: int = POINT_M,
    band_M: int = BAND_M,
    critical: float = CRITICAL_95,
) -> FunctionalEstimate:
    point = value_known_f(fit, weight, dist, M)
    delta = deriv_value_band(fit, weight, dist.pdf, dist.support, eps, band_M)
    sigma2 = var_sieve(delta, robust_covariance(fit))
    return _finish("value_known_f", point, sigma2, sample.n, critical,
                   {"M": M, "band_M": band_M, "eps": eps, "variance": "sieve"})


def estimate_value_sample(
    fit: SieveFit,
    sample: Sample,
    weight: ValueWeight,
    density: Callable[[np.ndarray], np.ndarray],
    eps: float,
    band_M: int = BAND_M,
    critical: float = CRITICAL_95,
    support: Rect | None = None,
) -> FunctionalEstimate:
    point = value_sample_mean(fit, weight, sample)
    delta = deriv_value_band(fit, weight, density, support or sample.domain, eps, band_M)
    sigma2 = var_sieve(delta, robust_covariance(fit))
    return _finish("value_sample", point, sigma2, sample.n, critical,
                   {"band_M": band_M, "eps": eps, "variance": "sieve"})

