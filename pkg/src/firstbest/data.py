"""Core containers: rectangles, samples, target distributions, CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateSampleError,
    DegenerateSupportError,
    DomainError,
    ParseError,
    SchemaError,
    ShapeError,
)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Rect:
    """Axis-aligned box ``[lower, upper]`` in ``dim`` dimensions."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lower))
        hi = _frozen(np.atleast_1d(self.upper))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ShapeError("lower and upper must be 1-d vectors of equal length >= 1")
        if not np.all(lo < hi):
            raise DomainError(f"degenerate rectangle: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Rect":
        return cls(np.full(dim, lo), np.full(dim, hi))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Row-wise inclusive membership test for an ``(m, dim)`` array."""
        x = np.atleast_2d(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def intersect(self, other: "Rect") -> "Rect":
        lo = np.maximum(self.lower, other.lower)
        hi = np.minimum(self.upper, other.upper)
        if not np.all(lo < hi):
            raise DegenerateSupportError(
                f"empty intersection of {self} and {other}"
            )
        return Rect(lo, hi)

    def is_subset_of(self, other: "Rect") -> bool:
        return bool(np.all(self.lower >= other.lower) and np.all(self.upper <= other.upper))

    def __eq__(self, other):
        if not isinstance(other, Rect):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __repr__(self):
        return f"Rect(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


def bounding_rect(x: np.ndarray) -> Rect:
    x = np.atleast_2d(x)
    lo, hi = x.min(axis=0), x.max(axis=0)
    if not np.all(lo < hi):
        raise DegenerateSupportError("points span a zero-width box in some coordinate")
    return Rect(lo, hi)


@dataclass(frozen=True, eq=False)
class Sample:
    """Training data ``(y, d, x)`` with the covariate domain it lives on."""

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    domain: Rect

    def __post_init__(self):
        y = _frozen(np.ravel(self.y))
        d_raw = np.ravel(self.d)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = _frozen(x)
        n = y.size
        if n < 1 or d_raw.size != n or x.shape[0] != n:
            raise ShapeError(
                f"row counts differ: y={y.size}, d={d_raw.size}, x={x.shape[0]}"
            )
        if not np.all((d_raw == 0) | (d_raw == 1)):
            raise ParseError("treatment must be 0 or 1")
        if x.shape[1] != self.domain.dim:
            raise ShapeError(f"x has {x.shape[1]} columns, domain has dim {self.domain.dim}")
        if not np.all(self.domain.contains(x)):
            bad = int(np.flatnonzero(~self.domain.contains(x))[0])
            raise DomainError(f"row {bad} lies outside the domain {self.domain}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", _frozen(d_raw, dtype=np.int8))
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.d.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, idx, domain: Rect | None = None) -> "Sample":
        return Sample(self.y[idx], self.d[idx], self.x[idx], domain or self.domain)

    def require_both_arms(self) -> None:
        if self.n_treated == 0 or self.n_control == 0:
            raise DegenerateSampleError(
                f"need treated and control rows (treated={self.n_treated}, "
                f"control={self.n_control})"
            )


@dataclass(frozen=True)
class TargetDistribution:
    """Density of the target covariate population on a rectangle."""

    support: Rect
    pdf: Callable[[np.ndarray], np.ndarray]
    kind: str = "external"

    @classmethod
    def uniform(cls, support: Rect) -> "TargetDistribution":
        dens = 1.0 / support.volume

        def pdf(x):
            x = np.atleast_2d(x)
            return np.where(support.contains(x), dens, 0.0)

        return cls(support, pdf, "uniform")

    @classmethod
    def from_kde(cls, kde, support: Rect) -> "TargetDistribution":
        return cls(support, kde.pdf, "kde")


@dataclass(frozen=True)
class ValueWeight:
    """Per-type weight ``v0`` of the value functional."""

    v0: Callable[[np.ndarray], np.ndarray]
    label: str = "v0"

    @classmethod
    def constant(cls, c: float = 1.0, label: str | None = None) -> "ValueWeight":
        def v0(x):
            return np.full(np.atleast_2d(x).shape[0], float(c))

        return cls(v0, label or f"constant({c:g})")


def read_csv_sample(
    path: str | Path,
    outcome_col: str,
    treat_col: str,
    covar_cols: Sequence[str],
    domain: Rect | None = None,
) -> Sample:
    """Read a CSV file into a :class:`Sample`.

    Row indices in error messages are 1-based data rows (the header is row 0).
    If ``domain`` is omitted it becomes the componentwise covariate min/max.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row expected") from None
        cols = [outcome_col, treat_col, *covar_cols]
        missing = [c for c in cols if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        pos = [header.index(c) for c in cols]
        rows = []
        for i, rec in enumerate(reader, start=1):
            if not rec or all(not s.strip() for s in rec):
                continue
            vals = []
            for c, j in zip(cols, pos):
                cell = rec[j].strip() if j < len(rec) else ""
                if cell == "":
                    raise ParseError(f"{path}: row {i}: missing value in column {c!r}")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {i}: non-numeric value {cell!r} in column {c!r}"
                    ) from None
            if vals[1] not in (0.0, 1.0):
                raise ParseError(
                    f"{path}: row {i}: treatment column {treat_col!r} must be 0 or 1, got {vals[1]!r}"
                )
            rows.append(vals)
    if not rows:
        raise DegenerateSampleError(f"{path}: no data rows")
    arr = np.array(rows)
    x = arr[:, 2:]
    sample = Sample(arr[:, 0], arr[:, 1].astype(np.int8), x, domain or bounding_rect(x))
    sample.require_both_arms()
    return sample


def write_csv_sample(
    sample: Sample,
    path: str | Path,
    outcome_col: str = "Y",
    treat_col: str = "D",
    covar_cols: Sequence[str] | None = None,
) -> None:
    """Write a sample with full float precision (round-trips bit-exactly)."""
    covar_cols = list(covar_cols or [f"X{j + 1}" for j in range(sample.dim)])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([outcome_col, treat_col, *covar_cols])
        for yi, di, xi in zip(sample.y, sample.d, sample.x):
            w.writerow([repr(float(yi)), int(di), *(repr(float(v)) for v in xi)])


def trim_common_support(sample: Sample) -> tuple[Sample, np.ndarray]:
    """Keep rows inside the overlap of the treated and control bounding boxes.

    A single pass: the boxes come from the untrimmed arms. Returns the trimmed
    sample (domain reset to the overlap box) and the kept row indices into
    the original sample.
    """
    sample.require_both_arms()
    x, d = sample.x, sample.d
    box = bounding_rect(x[d == 1]).intersect(bounding_rect(x[d == 0]))
    keep = np.flatnonzero(box.contains(x))
    if np.unique(d[keep]).size < 2:
        raise DegenerateSupportError("no treated or no control rows inside the overlap box")
    return sample.subset(keep, box), keep
