import numpy as np
import pytest

from firstbest.bspline import BasisSpec
from firstbest.data import Rect, Sample
from firstbest.sieve import fit_sieve


def make_sample(n, dim=1, seed=0, noise=0.5):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n, dim))
    d = rng.integers(0, 2, n)
    d[:2] = [0, 1]
    y = np.sin(3 * x[:, 0]) + d * (x[:, 0] - 0.4) + noise * rng.normal(size=n)
    return Sample(y, d, x, Rect.cube(0, 1, dim))


@pytest.fixture
def small_sample():
    return make_sample(400, dim=1, seed=4)


JTPA_SEED = 20240601


def write_jtpa_like(path, n=1200, seed=JTPA_SEED, effect=1500.0):
    """Synthetic data shaped like the job-training sample: earnings, assignment, two covariates."""
    rng = np.random.default_rng(seed)
    pre = np.round(rng.uniform(0, 8000, n), 2)
    edu = rng.integers(7, 19, n)
    d = (rng.uniform(size=n) < 2 / 3).astype(int)
    h = effect - 0.1 * pre + 150 * (edu - 12)
    y = np.round(9000 + 0.9 * pre + 400 * (edu - 12) + d * h + rng.normal(0, 6000, n), 2)
    lines = ["earnings,assignment,pre_earnings,education"]
    lines += [f"{a!r},{b},{c!r},{e}" for a, b, c, e in zip(y.tolist(), d, pre.tolist(), edu)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def jtpa_like_fit(n=9000, seed=0):
    """Job-training-scale sieve fit (cubic, two interior knots per covariate)."""
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.uniform(0.0, 8000.0, n), rng.integers(7, 19, n).astype(float)])
    d = (rng.uniform(size=n) < 2 / 3).astype(int)
    mu = 9000 + 0.9 * x[:, 0] + 400 * (x[:, 1] - 12)
    h = 1500 - 0.1 * x[:, 0] + 150 * (x[:, 1] - 12)
    y = mu + d * h + rng.normal(0, 9000, n)
    s = Sample(y, d, x, Rect(x.min(0), x.max(0)))
    spec = BasisSpec.build(s.domain, 3, 2)
    return fit_sieve(s, spec, spec), s
