"""Sobol points and quasi-Monte Carlo integration over rectangles.

Unscrambled Sobol sequence with the Joe-Kuo "new-joe-kuo-6.21201" direction
numbers for the first 16 dimensions. The all-zero first point is skipped, so
the first emitted point is ``(0.5, ..., 0.5)``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

from .data import Rect, TargetDistribution
from .errors import IntegrandError, UnsupportedDimensionError

MAX_DIM = 16
_BITS = 32

# (s, a, m_1..m_s) per dimension 2..16; dimension 1 is van der Corput.
_JOE_KUO = (
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
    (4, 4, (1, 3, 5, 13)),
    (5, 2, (1, 1, 5, 5, 17)),
    (5, 4, (1, 1, 5, 5, 5)),
    (5, 7, (1, 1, 7, 11, 19)),
    (5, 11, (1, 1, 5, 1, 1)),
    (5, 13, (1, 1, 1, 3, 11)),
    (5, 14, (1, 3, 5, 5, 31)),
    (6, 1, (1, 3, 3, 9, 7, 49)),
    (6, 13, (1, 1, 1, 15, 21, 21)),
    (6, 16, (1, 3, 1, 13, 27, 49)),
)


@lru_cache(maxsize=None)
def _direction_table() -> np.ndarray:
    """``(MAX_DIM, _BITS)`` direction integers ``v_k = m_k << (BITS - k)``."""
    v = np.zeros((MAX_DIM, _BITS), dtype=np.uint64)
    for k in range(_BITS):
        v[0, k] = 1 << (_BITS - 1 - k)
    for j, (s, a, m_init) in enumerate(_JOE_KUO, start=1):
        m = list(m_init)
        for k in range(s, _BITS):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    new ^= m[k - i] << i
            m.append(new)
        for k in range(_BITS):
            v[j, k] = m[k] << (_BITS - 1 - k)
    v.setflags(write=False)
    return v


class SobolStream:
    """Stateful Sobol generator; ``(dim, index)`` determines the next point."""

    def __init__(self, dim: int, index: int = 1):
        if not 1 <= dim <= MAX_DIM:
            raise UnsupportedDimensionError(f"Sobol dimension must be in 1..{MAX_DIM}, got {dim}")
        self.dim = dim
        self.index = index
        self.direction_numbers = _direction_table()[:dim]

    def draw(self, count: int) -> np.ndarray:
        idx = np.arange(self.index, self.index + count, dtype=np.uint64)
        if count and int(idx[-1]) >= 1 << _BITS:
            raise OverflowError("Sobol index exhausted")
        gray = idx ^ (idx >> np.uint64(1))
        out = np.zeros((count, self.dim), dtype=np.uint64)
        for k in range(int(gray.max()).bit_length() if count else 0):
            bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
            out[bit] ^= self.direction_numbers[:, k]
        self.index += count
        return out.astype(np.float64) / float(1 << _BITS)


def sobol_points(dim: int, count: int) -> np.ndarray:
    """First ``count`` Sobol points in ``(0, 1)^dim`` after the zero skip."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return SobolStream(dim).draw(count)


@lru_cache(maxsize=8)
def _cached_points(dim: int, count: int) -> np.ndarray:
    pts = sobol_points(dim, count)
    pts.setflags(write=False)
    return pts


def rect_points(rect: Rect, count: int) -> np.ndarray:
    """Sobol points mapped affinely into ``rect`` (cached, read-only)."""
    u = _cached_points(rect.dim, count)
    return rect.lower + u * (rect.upper - rect.lower)


def _check_finite(vals: np.ndarray, pts: np.ndarray) -> np.ndarray:
    vals = np.asarray(vals, dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        j = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise IntegrandError(f"non-finite integrand value at {pts[j].tolist()}", pts[j])
    return vals


def integrate_rect(fn: Callable[[np.ndarray], np.ndarray], rect: Rect, count: int) -> float:
    """``volume(rect) * mean(fn)`` over ``count`` Sobol points in ``rect``.

    ``fn`` receives an ``(count, dim)`` array and returns ``count`` values.
    """
    pts = rect_points(rect, count)
    vals = _check_finite(fn(pts), pts)
    return rect.volume * float(vals.mean())


def expect_under(
    fn: Callable[[np.ndarray], np.ndarray], dist: TargetDistribution, count: int
) -> float:
    """Sobol estimate of ``integral fn(x) f(x) dx`` over the support of ``dist``."""
    if dist.kind == "uniform":
        pts = rect_points(dist.support, count)
        return float(_check_finite(fn(pts), pts).mean())
    return integrate_rect(lambda x: np.asarray(fn(x)) * dist.pdf(x), dist.support, count)
