"""Product-Gaussian kernel density estimator with a scaled Silverman bandwidth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BandwidthError

DEFAULT_SCALE = 3.0
_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class KDE:
    points: np.ndarray
    bandwidths: np.ndarray
    scale: float

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def pdf(self, x) -> np.ndarray:
        """Density at each row of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :] if x.size == self.dim else x[:, None]
        h = self.bandwidths
        pts = self.points / h
        norm = 1.0 / (self.points.shape[0] * np.prod(h) * (2 * math.pi) ** (self.dim / 2))
        out = np.empty(x.shape[0])
        for s in range(0, x.shape[0], _CHUNK):
            q = x[s:s + _CHUNK] / h
            # squared scaled distances, accumulated per dimension to avoid cancellation
            d2 = np.zeros((q.shape[0], pts.shape[0]))
            for j in range(self.dim):
                d2 += (q[:, j, None] - pts[None, :, j]) ** 2
            out[s:s + _CHUNK] = np.exp(-0.5 * d2).sum(axis=1) * norm
        return out


def silverman_bandwidths(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    sd = x.std(axis=0, ddof=1)
    for j, s in enumerate(sd):
        if not s > 0:
            raise BandwidthError(f"covariate {j} has zero variance; bandwidth undefined")
    return 1.06 * sd * n ** (-1.0 / (4 + dim))


def fit_kde(x: np.ndarray, scale: float = DEFAULT_SCALE) -> KDE:
    """Diagonal-bandwidth Gaussian KDE, ``h_j = scale * 1.06 * sd_j * n^(-1/(4+dim))``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise BandwidthError("need at least two points")
    if not scale > 0:
        raise BandwidthError("scale must be positive")
    pts = x.copy()
    pts.setflags(write=False)
    return KDE(pts, scale * silverman_bandwidths(x), float(scale))


def kde_pdf(kde: KDE, x) -> float:
    return float(kde.pdf(np.asarray(x, dtype=float).reshape(1, -1))[0])
