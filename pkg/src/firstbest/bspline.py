"""Clamped B-spline bases in one dimension and their tensor products.

Tensor-product ordering: for a point ``x = (x_1, ..., x_d)`` the basis vector
is ``kron(b_d(x_d), ..., b_2(x_2), b_1(x_1))``, so the index of dimension 1
varies fastest. Coefficient vectors, design matrices and derivative vectors
all use this ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import product
from typing import Sequence

import numpy as np

from .data import Rect
from .errors import DomainError, PlacementError, ShapeError


@dataclass(frozen=True, eq=False)
class KnotVector:
    knots: np.ndarray
    degree: int

    def __post_init__(self):
        t = np.array(self.knots, dtype=float)
        p = int(self.degree)
        if p < 0:
            raise ValueError("degree must be >= 0")
        if t.ndim != 1 or t.size < 2 * (p + 1):
            raise ValueError("knot vector too short for the degree")
        if np.any(np.diff(t) < 0):
            raise ValueError("knots must be nondecreasing")
        if not (np.all(t[: p + 1] == t[0]) and np.all(t[-(p + 1):] == t[-1])):
            raise ValueError("knot vector is not clamped")
        inner = t[p + 1: t.size - p - 1]
        if inner.size and not (np.all(inner > t[0]) and np.all(inner < t[-1])):
            raise ValueError("interior knots must lie strictly inside the end knots")
        t.setflags(write=False)
        object.__setattr__(self, "knots", t)
        object.__setattr__(self, "degree", p)

    @property
    def K(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def interior(self) -> np.ndarray:
        p = self.degree
        return self.knots[p + 1: self.knots.size - p - 1]

    @property
    def lo(self) -> float:
        return float(self.knots[0])

    @property
    def hi(self) -> float:
        return float(self.knots[-1])

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))


def make_knots(
    interval: tuple[float, float],
    degree: int,
    interior: int,
    placement: str = "uniform",
    data: np.ndarray | None = None,
) -> KnotVector:
    """Clamped knot vector on ``interval`` with ``interior`` inner knots.

    ``placement="quantile"`` puts the inner knots at empirical quantiles of
    ``data`` (probabilities ``j / (interior + 1)``).
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise DomainError(f"degenerate interval [{lo}, {hi}]")
    if degree < 0 or interior < 0:
        raise ValueError("degree and interior must be nonnegative")
    if placement == "uniform":
        inner = np.linspace(lo, hi, interior + 2)[1:-1]
    elif placement == "quantile":
        if data is None:
            raise PlacementError("quantile placement needs data")
        data = np.asarray(data, dtype=float).ravel()
        data = data[(data > lo) & (data < hi)]
        if interior > 0 and np.unique(data).size < interior:
            raise PlacementError(
                f"{np.unique(data).size} distinct interior data points for {interior} knots"
            )
        inner = np.quantile(data, np.arange(1, interior + 1) / (interior + 1)) if interior else np.empty(0)
        if np.any(np.diff(inner) <= 0):
            raise PlacementError("quantile knots are not distinct; data too discrete")
    else:
        raise ValueError(f"unknown placement {placement!r}")
    knots = np.concatenate([np.full(degree + 1, lo), inner, np.full(degree + 1, hi)])
    return KnotVector(knots, degree)


_CHUNK = 16384


def _span(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    p, K = kv.degree, kv.K
    i = np.searchsorted(kv.knots, x, side="right") - 1
    return np.clip(i, p, K - 1)


def _nonzero_basis(kv: KnotVector, x: np.ndarray, span: np.ndarray) -> np.ndarray:
    """Cox-de Boor triangle: the ``p + 1`` nonzero values at each x, shape ``(p + 1, m)``."""
    t = kv.knots
    p = kv.degree
    # contiguous vectors per column; strided column access dominates otherwise
    N = [np.ones(x.size)]
    left = [None] + [x - t[span + 1 - j] for j in range(1, p + 1)]
    right = [None] + [t[span + j] - x for j in range(1, p + 1)]
    for j in range(1, p + 1):
        saved = np.zeros(x.size)
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N.append(saved)
    return np.stack(N)


def local_basis_1d(kv: KnotVector, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the first nonzero basis function and the nonzero values ``(p + 1, m)``.

    Raises DomainError for points outside the knot range.
    """
    x = np.asarray(x, dtype=float).ravel()
    if np.any((x < kv.lo) | (x > kv.hi)) or not np.all(np.isfinite(x)):
        bad = x[~((x >= kv.lo) & (x <= kv.hi))]
        raise DomainError(f"x={bad[0]!r} outside knot range [{kv.lo}, {kv.hi}]")
    span = _span(kv, x)
    vals = np.empty((kv.degree + 1, x.size))
    # cache-sized chunks roughly halve the cost on large point sets
    for s in range(0, x.size, _CHUNK):
        vals[:, s:s + _CHUNK] = _nonzero_basis(kv, x[s:s + _CHUNK], span[s:s + _CHUNK])
    return span - kv.degree, vals


def basis_matrix_1d(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    """All ``K`` basis values at each entry of ``x``; shape ``(m, K)``.

    Raises DomainError for points outside the knot range.
    """
    start, vals = local_basis_1d(kv, x)
    span = start + kv.degree
    out = np.zeros((vals.shape[1], kv.K))
    rows = np.arange(vals.shape[1])
    for r in range(kv.degree + 1):
        out[rows, span - kv.degree + r] = vals[r]
    return out


def eval_basis_1d(kv: KnotVector, x: float) -> np.ndarray:
    return basis_matrix_1d(kv, np.array([x]))[0]


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Tensor-product B-spline basis on a rectangle."""

    domain: Rect
    knots: tuple[KnotVector, ...]

    def __post_init__(self):
        if len(self.knots) != self.domain.dim:
            raise ShapeError("one knot vector per domain dimension required")
        for j, kv in enumerate(self.knots):
            if kv.lo != self.domain.lower[j] or kv.hi != self.domain.upper[j]:
                raise DomainError(f"knot range of dimension {j} does not match the domain")
        object.__setattr__(self, "knots", tuple(self.knots))

    @classmethod
    def build(
        cls,
        domain: Rect,
        degree: int | Sequence[int] = 3,
        interior: int | Sequence[int] = 0,
        placement: str = "uniform",
        data: np.ndarray | None = None,
    ) -> "BasisSpec":
        dim = domain.dim
        degs = [degree] * dim if np.isscalar(degree) else list(degree)
        ints = [interior] * dim if np.isscalar(interior) else list(interior)
        if len(degs) != dim or len(ints) != dim:
            raise ShapeError("degree/interior length must match the domain dimension")
        data = None if data is None else np.atleast_2d(np.asarray(data, dtype=float))
        kvs = tuple(
            make_knots(
                (domain.lower[j], domain.upper[j]),
                int(degs[j]),
                int(ints[j]),
                placement,
                None if data is None else data[:, j],
            )
            for j in range(dim)
        )
        return cls(domain, kvs)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def degree(self) -> tuple[int, ...]:
        return tuple(kv.degree for kv in self.knots)

    @property
    def interior_knots(self) -> tuple[int, ...]:
        return tuple(kv.interior.size for kv in self.knots)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(kv.K for kv in self.knots)

    @property
    def K(self) -> int:
        return int(np.prod(self.shape))

    def __eq__(self, other):
        if not isinstance(other, BasisSpec):
            return NotImplemented
        return self.domain == other.domain and self.knots == other.knots

    def __hash__(self):
        return hash((self.domain.lower.tobytes(), self.domain.upper.tobytes(), self.knots))

    def to_dict(self) -> dict:
        return {
            "domain": {"lower": self.domain.lower.tolist(), "upper": self.domain.upper.tolist()},
            "degree": list(self.degree),
            "knots": [kv.knots.tolist() for kv in self.knots],
            "K": self.K,
        }


def _as_points(spec: BasisSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if spec.dim > 1 or x.size == 1 else x[:, None]
    if x.ndim != 2 or x.shape[1] != spec.dim:
        raise ShapeError(f"expected points of dimension {spec.dim}, got shape {x.shape}")
    return x


def basis_factors(spec: BasisSpec, x, clamp: bool = False) -> list[np.ndarray]:
    """Per-dimension basis matrices at the points ``x``.

    With ``clamp=True`` points are first projected onto the domain, which is
    the extrapolation rule used at prediction time.
    """
    x = _as_points(spec, x)
    if clamp:
        x = spec.domain.clamp(x)
    return [basis_matrix_1d(kv, x[:, j]) for j, kv in enumerate(spec.knots)]


def local_factors(spec: BasisSpec, x, clamp: bool = False) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-dimension ``(first index, nonzero values)`` pairs at the points ``x``."""
    x = _as_points(spec, x)
    if clamp:
        x = spec.domain.clamp(x)
    return [local_basis_1d(kv, x[:, j]) for j, kv in enumerate(spec.knots)]


def contract_local(spec: BasisSpec, local: Sequence[tuple[np.ndarray, np.ndarray]], coef) -> np.ndarray:
    """``design_matrix @ coef`` from local factors, touching only nonzero terms."""
    c = np.asarray(coef, dtype=float).ravel()
    strides = np.cumprod((1,) + spec.shape[:-1])
    m = local[0][1].shape[1]
    terms = [(int(np.dot(strides, off)), off)
             for off in product(*(range(vals.shape[0]) for _, vals in local))]
    out = np.zeros(m)
    for s in range(0, m, _CHUNK):
        sl = slice(s, s + _CHUNK)
        base = sum(stride * start[sl] for stride, (start, _) in zip(strides, local))
        acc = out[sl]
        for shift, off in terms:
            w = local[0][1][off[0], sl]
            for (_, vals), a in zip(local[1:], off[1:]):
                w = w * vals[a, sl]
            acc += w * c.take(base + shift)
    return out


def row_kron(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise Kronecker product with the first factor varying fastest."""
    def step(acc, b):
        return (b[:, :, None] * acc[:, None, :]).reshape(acc.shape[0], -1)

    return reduce(step, factors[1:], factors[0])


def design_matrix(spec: BasisSpec, x, clamp: bool = False) -> np.ndarray:
    return row_kron(basis_factors(spec, x, clamp=clamp))


def eval_basis(spec: BasisSpec, x) -> np.ndarray:
    """Tensor-product basis vector (length ``K``) at a single point."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != spec.dim:
        raise ShapeError(f"point has dimension {x.size}, basis has {spec.dim}")
    return design_matrix(spec, x[None, :])[0]


def contract(factors: Sequence[np.ndarray], coef: np.ndarray) -> np.ndarray:
    """``design_matrix @ coef`` computed from the per-dimension factors.

    Avoids materialising the full ``(m, K)`` design for large point sets.
    """
    shape = tuple(f.shape[1] for f in factors)
    # coefficient tensor indexed [a_d, ..., a_1] since dimension 1 is fastest
    c = np.asarray(coef).reshape(shape[::-1])
    out = factors[-1] @ c.reshape(shape[-1], -1)
    for f in reversed(factors[:-1]):
        m = out.shape[0]
        out = out.reshape(m, f.shape[1], -1)
        out = np.einsum("mk,mkr->mr", f, out)
    return out.reshape(-1)
