"""Catalog of the simulation designs M1-M15 and their true functionals."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .data import Rect, Sample, TargetDistribution
from .errors import UnknownModelError
from .qmc import expect_under

TRUE_M = 5000


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def _col(x, j):
    return np.atleast_2d(x)[:, j]


@dataclass(frozen=True)
class DGPSpec:
    """One row of the design tables.

    ``mu0(x, d)`` and ``p0(x)`` take an ``(m, dim)`` array; ``d`` may be a
    scalar or a length-``m`` vector.
    """

    id: str
    f0: Rect
    f: Rect
    mu0: Callable
    p0: Callable
    noise_sd: float = 1.0
    v0: Callable | None = None
    scale: float = 1.0
    kind: str = "welfare_known_f"
    baseline_text: str = ""
    cate_text: str = ""
    p0_text: str = ""
    note: str = ""

    @property
    def dim(self) -> int:
        return self.f0.dim

    def cate(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.mu0(x, 1) - self.mu0(x, 0)

    def target(self) -> TargetDistribution:
        return TargetDistribution.uniform(self.f)

    def lam(self, x) -> np.ndarray:
        """Density ratio f / f0 for the two uniform designs."""
        x = np.atleast_2d(x)
        ratio = self.f0.volume / self.f.volume
        return np.where(self.f.contains(x), ratio, 0.0)

    def with_noise(self, sd: float) -> "DGPSpec":
        return replace(self, noise_sd=sd)


def _model(id, f0, f, base, eff, p0, kind, texts, **kw):
    def mu0(x, d):
        x = np.atleast_2d(x)
        return base(x) + np.asarray(d) * eff(x)

    return DGPSpec(id=id, f0=f0, f=f, mu0=mu0, p0=p0, kind=kind,
                   baseline_text=texts[0], cate_text=texts[1], p0_text=texts[2], **kw)


def _base_m1(x):
    x = _col(x, 0)
    return 5 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * x)


def _base_m2(x):
    return 0.5 * np.abs(_col(x, 0))


def _base_m3(x):
    return _col(x, 0) ** 2


def _base_m4(x):
    x1, x2 = _col(x, 0), _col(x, 1)
    # "sin x1 x2" read as sin(x1) * x2, matching the M15 row
    return (1 - x1**2 - x2**2) * (4 + np.sin(x1) * x2 + np.cos(x2))


def _base_m5(x):
    x1, x2 = _col(x, 0), _col(x, 1)
    return (1 - x1 * x2) * (3 + np.sin(np.pi * x1) * np.cos(np.pi * x2))


def _base_m6(x):
    return np.log(1 + _col(x, 0) + _col(x, 1))


def _base_m7(x):
    x1, x2 = _col(x, 0), _col(x, 1)
    return (x1**2 + x2**2) * np.exp(-(x1 + x2))


_ONE_D = {
    "M1": (_base_m1, lambda x: -0.4 + 2 * _col(x, 0) ** 2, lambda x: _logistic(1 - 2 * _col(x, 0)),
           ("5 sin(2 pi x) cos(2 pi x)", "-0.4 + 2 x^2", "logistic(1 - 2x)")),
    "M2": (_base_m2, lambda x: 0.5 - _col(x, 0) ** 2, lambda x: _logistic(-0.5 + _col(x, 0)),
           ("0.5 abs(x)", "0.5 - x^2", "logistic(-0.5 + x)")),
    "M3": (_base_m3, lambda x: 1 - _col(x, 0), lambda x: _logistic(0.5 - _col(x, 0)),
           ("x^2", "1 - x", "logistic(0.5 - x)")),
}
_TWO_D = {
    "M4": (_base_m4, lambda x: 0.5 * _col(x, 0) - 0.4 * _col(x, 1),
           lambda x: _logistic(_col(x, 0) - _col(x, 1)),
           ("(1 - x1^2 - x2^2)(4 + sin(x1) x2 + cos(x2))", "0.5 x1 - 0.4 x2", "logistic(x1 - x2)")),
    "M5": (_base_m5, lambda x: 0.3 * _col(x, 0) - 0.3 * _col(x, 1),
           lambda x: _logistic(_col(x, 0) - _col(x, 1)),
           ("(1 - x1 x2)(3 + sin(pi x1) cos(pi x2))", "0.3 x1 - 0.3 x2", "logistic(x1 - x2)")),
    "M6": (_base_m6, lambda x: _col(x, 0) - 0.7 * _col(x, 1),
           lambda x: _logistic(1.5 * _col(x, 0) - 0.5 * _col(x, 1)),
           ("log(1 + x1 + x2)", "x1 - 0.7 x2", "logistic(1.5 x1 - 0.5 x2)")),
    "M7": (_base_m7, lambda x: 0.5 - _col(x, 1),
           lambda x: _logistic(-0.5 + _col(x, 0) + 2 * _col(x, 1)),
           ("(x1^2 + x2^2) exp(-(x1 + x2))", "0.5 - x2", "logistic(-0.5 + x1 + 2 x2)")),
}
_M4_NOTE = "source writes 'sin x1x2'; implemented as sin(x1)*x2 (affects the baseline only)"


def _m15() -> DGPSpec:
    def mu0(x, d):
        x = np.atleast_2d(x)
        x1, x2 = x[:, 0], x[:, 1]
        return np.asarray(d) * (1 - x1**2 - x2**2) * (4 + np.sin(x1) * x2 + np.cos(x2))

    return DGPSpec(
        id="M15",
        f0=Rect.cube(-2.0, 2.0, 2),
        f=Rect.cube(-1.5, 1.5, 2),
        mu0=mu0,
        p0=lambda x: _logistic(_col(x, 0) - _col(x, 1)),
        v0=lambda x: np.ones(np.atleast_2d(x).shape[0]),
        scale=9.0,
        kind="value_known_f",
        baseline_text="0",
        cate_text="(1 - x1^2 - x2^2)(4 + sin(x1) x2 + cos(x2))",
        p0_text="logistic(x1 - x2)",
        note="value functional scaled by 3^2 so the truth is pi",
    )


def _build_catalog() -> dict[str, DGPSpec]:
    cat: dict[str, DGPSpec] = {}
    wide1, unit1 = Rect.cube(-0.2, 1.2, 1), Rect.cube(0.0, 1.0, 1)
    wide2, unit2 = Rect.cube(-0.2, 1.2, 2), Rect.cube(0.0, 1.0, 2)
    for i, key in enumerate(["M1", "M2", "M3"]):
        base, eff, p0, texts = _ONE_D[key]
        cat[key] = _model(key, wide1, unit1, base, eff, p0, "welfare_known_f", texts)
        twin = f"M{8 + i}"
        cat[twin] = _model(twin, unit1, unit1, base, eff, p0, "welfare_sample", texts)
    for i, key in enumerate(["M4", "M5", "M6", "M7"]):
        base, eff, p0, texts = _TWO_D[key]
        note = _M4_NOTE if key == "M4" else ""
        cat[key] = _model(key, wide2, unit2, base, eff, p0, "welfare_known_f", texts, note=note)
        twin = f"M{11 + i}"
        cat[twin] = _model(twin, unit2, unit2, base, eff, p0, "welfare_sample", texts,
                           note=note if key == "M4" else "")
    cat["M15"] = _m15()
    return cat


CATALOG: dict[str, DGPSpec] = _build_catalog()
MODEL_IDS: tuple[str, ...] = tuple(f"M{i}" for i in range(1, 16))


def make_dgp(model_id: str) -> DGPSpec:
    try:
        return CATALOG[model_id.upper()]
    except (KeyError, AttributeError):
        raise UnknownModelError(
            f"unknown model {model_id!r}; valid ids: {', '.join(MODEL_IDS)}"
        ) from None


def simulate_sample(dgp: DGPSpec, n: int, seed) -> Sample:
    """Draw ``n`` observations; ``seed`` is an int or a ``np.random.SeedSequence``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = dgp.f0.lower, dgp.f0.upper
    x = lo + rng.random((n, dgp.dim)) * (hi - lo)
    d = (rng.random(n) < dgp.p0(x)).astype(np.int8)
    eps = rng.standard_normal(n)
    y = dgp.mu0(x, d) + dgp.noise_sd * eps
    return Sample(y, d, x, dgp.f0)


def true_functional(dgp: DGPSpec, kind: str, M: int = TRUE_M) -> float:
    """Sobol integral of the true welfare or value functional under ``F``."""
    dist = dgp.target()
    if kind == "welfare":
        return expect_under(lambda x: np.maximum(dgp.cate(x), 0.0), dist, M)
    if kind == "value":
        v0 = dgp.v0 or (lambda x: np.ones(np.atleast_2d(x).shape[0]))
        return expect_under(lambda x: dgp.scale * (dgp.cate(x) >= 0) * v0(x), dist, M)
    raise ValueError(f"kind must be 'welfare' or 'value', got {kind!r}")


def catalog_table() -> str:
    """Markdown table of the catalog, generated from the model definitions."""
    def fmt(r: Rect) -> str:
        lo, hi = r.lower[0], r.upper[0]
        return f"U[{lo:g},{hi:g}]" + (f"^{r.dim}" if r.dim > 1 else "")

    lines = [
        "| model | kind | F0 | F | baseline mu0(x,0) | CATE | p0(x) | sigma | scale | note |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for mid in MODEL_IDS:
        g = CATALOG[mid]
        lines.append(
            f"| {mid} | {g.kind} | {fmt(g.f0)} | {fmt(g.f)} | {g.baseline_text} | {g.cate_text} "
            f"| {g.p0_text} | {g.noise_sd:g} | {g.scale:g} | {g.note} |"
        )
    return "\n".join(lines)
