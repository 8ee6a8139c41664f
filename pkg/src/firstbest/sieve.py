"""Treatment-interacted least-squares sieve regression.

The outcome is regressed on the interacted design
``b(x, d) = (d * psi1(x), (1 - d) * psi0(x))`` so that the two arms share one
coefficient vector ``(beta1, beta0)`` and one robust covariance matrix.

Covariance normalisation: ``robust_covariance`` returns the sandwich scaled to
estimate the asymptotic covariance of ``sqrt(n) * (beta_hat - beta)``; the
standard error of a linear functional with derivative vector ``delta`` is
``sqrt(delta' Omega delta / n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bspline import BasisSpec, contract_local, design_matrix, local_factors
from .data import Rect, Sample
from .errors import DegenerateTrimError, DimensionError, SingularDesignError

RANK_RTOL = 1e-10
DEFAULT_DEGREE = 3


def default_interior_knots(n_arm: int, dim: int) -> int:
    """Undersmoothed interior-knot count used when dimensions are not pinned."""
    return max(1, math.floor(n_arm ** (1.0 / (2 * 3 + dim)) + 0.5)) + 1


def default_spec(domain: Rect, n_arm: int, degree: int = DEFAULT_DEGREE) -> BasisSpec:
    return BasisSpec.build(domain, degree, default_interior_knots(n_arm, domain.dim))


def _svd_solve(B: np.ndarray, y: np.ndarray, what: str):
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    if s.size == 0 or s[-1] <= RANK_RTOL * s[0]:
        smin = float(s[-1]) if s.size else 0.0
        raise SingularDesignError(
            f"{what}: design is rank deficient (smallest singular value {smin:.3g}, "
            f"largest {float(s[0]) if s.size else 0.0:.3g})",
            smin,
        )
    coef = Vt.T @ ((U.T @ y) / s)
    gram_inv = (Vt.T / s**2) @ Vt
    return coef, gram_inv


@dataclass(frozen=True, eq=False)
class SieveFit:
    beta1: np.ndarray
    beta0: np.ndarray
    spec1: BasisSpec
    spec0: BasisSpec
    residuals: np.ndarray
    gram: np.ndarray
    gram_inv: np.ndarray
    design: np.ndarray
    n: int

    @property
    def K1(self) -> int:
        return self.beta1.size

    @property
    def K0(self) -> int:
        return self.beta0.size

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([self.beta1, self.beta0])

    def mu(self, x, d: int) -> np.ndarray:
        """Fitted regression ``mu_hat(x, d)`` at the rows of ``x`` (clamped)."""
        spec, beta = (self.spec1, self.beta1) if d == 1 else (self.spec0, self.beta0)
        return contract_local(spec, local_factors(spec, x, clamp=True), beta)

    def cate_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.spec1 == self.spec0:
            return contract_local(self.spec1, local_factors(self.spec1, x, clamp=True), self.beta1 - self.beta0)
        return self.mu(x, 1) - self.mu(x, 0)

    def extrapolated(self, x) -> np.ndarray:
        """True where a point falls outside either arm's basis domain."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return ~(self.spec1.domain.contains(x) & self.spec0.domain.contains(x))

    def to_dict(self) -> dict:
        return {
            "beta1": self.beta1.tolist(),
            "beta0": self.beta0.tolist(),
            "basis1": self.spec1.to_dict(),
            "basis0": self.spec0.to_dict(),
            "n": self.n,
        }


def interacted_design(spec1: BasisSpec, spec0: BasisSpec, x: np.ndarray, d: np.ndarray) -> np.ndarray:
    d = np.asarray(d)
    B = np.zeros((d.size, spec1.K + spec0.K))
    t = d == 1
    if t.any():
        B[t, : spec1.K] = design_matrix(spec1, x[t], clamp=True)
    if (~t).any():
        B[~t, spec1.K:] = design_matrix(spec0, x[~t], clamp=True)
    return B


def fit_sieve(sample: Sample, spec1: BasisSpec, spec0: BasisSpec) -> SieveFit:
    """Least-squares fit of ``y`` on ``(d * psi1(x), (1 - d) * psi0(x))``."""
    sample.require_both_arms()
    if spec1.K >= sample.n_treated:
        raise DimensionError(f"K1={spec1.K} >= treated count {sample.n_treated}")
    if spec0.K >= sample.n_control:
        raise DimensionError(f"K0={spec0.K} >= control count {sample.n_control}")
    B = interacted_design(spec1, spec0, sample.x, sample.d)
    coef, gram_inv = _svd_solve(B, sample.y, "outcome sieve")
    resid = sample.y - B @ coef
    return SieveFit(
        beta1=coef[: spec1.K],
        beta0=coef[spec1.K:],
        spec1=spec1,
        spec0=spec0,
        residuals=resid,
        gram=B.T @ B,
        gram_inv=gram_inv,
        design=B,
        n=sample.n,
    )


def predict_mu(fit: SieveFit, x, d: int) -> float:
    return float(fit.mu(np.atleast_2d(np.asarray(x, dtype=float).ravel()), d)[0])


def cate(fit: SieveFit, x) -> float:
    return float(fit.cate_values(np.atleast_2d(np.asarray(x, dtype=float).ravel()))[0])


@dataclass(frozen=True, eq=False)
class RobustCovariance:
    omega: np.ndarray


def robust_covariance(fit: SieveFit, residuals: np.ndarray | None = None) -> RobustCovariance:
    """Heteroskedasticity-robust sandwich ``n (B'B)^-1 (sum u_i^2 b_i b_i') (B'B)^-1``."""
    u = fit.residuals if residuals is None else np.asarray(residuals, dtype=float)
    Bu = fit.design * u[:, None]
    meat = Bu.T @ Bu
    omega = fit.n * fit.gram_inv @ meat @ fit.gram_inv
    return RobustCovariance(0.5 * (omega + omega.T))


@dataclass(frozen=True, eq=False)
class PropensityFit:
    coefficients: np.ndarray
    spec: BasisSpec

    def predict(self, x) -> np.ndarray:
        return contract_local(self.spec, local_factors(self.spec, x, clamp=True), self.coefficients)


def fit_propensity(sample: Sample, spec: BasisSpec) -> PropensityFit:
    """Linear-probability sieve fit of the treatment indicator."""
    if spec.K >= sample.n:
        raise DimensionError(f"K={spec.K} >= sample size {sample.n}")
    B = design_matrix(spec, sample.x, clamp=True)
    coef, _ = _svd_solve(B, sample.d.astype(float), "propensity sieve")
    return PropensityFit(coef, spec)


def propensity_keep_mask(pfit: PropensityFit, sample: Sample) -> np.ndarray:
    """Rows whose fitted propensity lies strictly inside (0, 1)."""
    p = pfit.predict(sample.x)
    keep = (p > 0.0) & (p < 1.0)
    if not keep.any():
        raise DegenerateTrimError("every fitted propensity lies outside (0, 1)")
    return keep
