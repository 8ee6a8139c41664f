import numpy as np
import pytest
from scipy.interpolate import BSpline

from firstbest.bspline import (
    BasisSpec,
    basis_factors,
    basis_matrix_1d,
    contract,
    design_matrix,
    eval_basis,
    eval_basis_1d,
    make_knots,
)
from firstbest.data import Rect
from firstbest.errors import DomainError, PlacementError, ShapeError


def cox_de_boor(t, p, i, x):
    """Textbook recursion, one basis function at a time (right endpoint closed)."""
    if p == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        last = np.flatnonzero(t < t[-1])[-1]
        return 1.0 if (x == t[-1] and i == last) else 0.0
    out = 0.0
    if t[i + p] > t[i]:
        out += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, p - 1, i, x)
    if t[i + p + 1] > t[i + 1]:
        out += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, p - 1, i + 1, x)
    return out


def test_knots_bezier_case():
    kv = make_knots((0, 1), 3, 0)
    np.testing.assert_array_equal(kv.knots, [0, 0, 0, 0, 1, 1, 1, 1])
    assert kv.K == 4


def test_knots_linear_midpoint():
    kv = make_knots((0, 1), 1, 1)
    np.testing.assert_array_equal(kv.knots, [0, 0, 0.5, 1, 1])
    assert kv.K == 3


def test_knots_even_spacing():
    kv = make_knots((0, 2), 2, 3)
    np.testing.assert_allclose(kv.interior, [0.5, 1.0, 1.5])


def test_quantile_knots_need_distinct_data():
    with pytest.raises(PlacementError):
        make_knots((0, 1), 3, 4, "quantile", data=np.array([0.5, 0.5, 0.5, 0.25]))
    kv = make_knots((0, 1), 3, 1, "quantile", data=np.linspace(0, 1, 101) ** 2)
    np.testing.assert_allclose(kv.interior, [0.25])


def test_cubic_bernstein_midpoint():
    kv = make_knots((0, 1), 3, 0)
    expected = [cox_de_boor(kv.knots, 3, i, 0.5) for i in range(4)]
    np.testing.assert_allclose(expected, [0.125, 0.375, 0.375, 0.125])
    np.testing.assert_allclose(eval_basis_1d(kv, 0.5), expected, atol=1e-15)


@pytest.mark.parametrize("p,interior", [(0, 3), (1, 2), (2, 4), (3, 5), (5, 3)])
def test_matches_recursive_oracle_and_scipy(p, interior):
    kv = make_knots((-0.2, 1.2), p, interior)
    xs = np.linspace(-0.2, 1.2, 37)
    B = basis_matrix_1d(kv, xs)
    oracle = np.array([[cox_de_boor(kv.knots, p, i, x) for i in range(kv.K)] for x in xs])
    np.testing.assert_allclose(B, oracle, atol=1e-13)
    np.testing.assert_allclose(B, BSpline.design_matrix(xs, kv.knots, p).toarray(), atol=1e-13)


def test_endpoints():
    kv = make_knots((0, 1), 3, 4)
    left = eval_basis_1d(kv, 0.0)
    right = eval_basis_1d(kv, 1.0)
    assert left[0] == 1.0 and np.all(left[1:] == 0)
    assert right[-1] == 1.0 and np.all(right[:-1] == 0)


def test_indicator_basis():
    kv = make_knots((0, 1), 0, 1)
    np.testing.assert_array_equal(eval_basis_1d(kv, 0.25), [1, 0])


def test_outside_range_raises():
    kv = make_knots((0, 1), 3, 2)
    with pytest.raises(DomainError):
        eval_basis_1d(kv, 1.0 + 1e-12)


def test_tensor_indicator_product():
    spec = BasisSpec.build(Rect.cube(0, 1, 2), 0, 1)
    v = eval_basis(spec, [0.25, 0.75])
    # cell (1, 2) in 1-based (dim-1, dim-2) coordinates; dimension 1 varies fastest
    np.testing.assert_array_equal(v, [0, 0, 1, 0])


def test_tensor_one_dim_reduces():
    spec = BasisSpec.build(Rect([0.0], [1.0]), 3, 2)
    np.testing.assert_array_equal(eval_basis(spec, [0.3]), eval_basis_1d(spec.knots[0], 0.3))


def test_tensor_cubic_outer_product():
    spec = BasisSpec.build(Rect.cube(0, 1, 2), 3, 0)
    b = np.array([0.125, 0.375, 0.375, 0.125])
    np.testing.assert_allclose(eval_basis(spec, [0.5, 0.5]), np.outer(b, b).ravel(), atol=1e-15)


def test_tensor_ordering_dim1_fastest():
    spec = BasisSpec.build(Rect.cube(0, 1, 2), 1, [0, 1])
    x = np.array([0.3, 0.8])
    b1 = eval_basis_1d(spec.knots[0], 0.3)
    b2 = eval_basis_1d(spec.knots[1], 0.8)
    np.testing.assert_allclose(eval_basis(spec, x), np.kron(b2, b1))


def test_shape_error():
    spec = BasisSpec.build(Rect.cube(0, 1, 2), 3, 1)
    with pytest.raises(ShapeError):
        eval_basis(spec, [0.5])


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("p", [0, 1, 2, 3, 4, 5])
@pytest.mark.parametrize("interior", [0, 1, 7, 20])
def test_partition_of_unity_nonnegative_local(dim, p, interior):
    spec = BasisSpec.build(Rect.cube(-1.0, 2.0, dim), p, interior)
    if dim == 1:
        x = np.linspace(-1, 2, 1000)[:, None]
    else:
        g = np.linspace(-1, 2, 32)
        x = np.array(np.meshgrid(g, g)).reshape(2, -1).T[:1000]
    B = design_matrix(spec, x)
    assert np.max(np.abs(B.sum(axis=1) - 1)) < 1e-10
    assert B.min() >= 0
    assert np.max((B > 0).sum(axis=1)) <= (p + 1) ** dim


@pytest.mark.parametrize("p", [1, 2, 3])
def test_continuity_at_knots(p):
    kv = make_knots((0, 1), p, 4)
    for t in kv.interior:
        lo = eval_basis_1d(kv, t - 1e-9)
        hi = eval_basis_1d(kv, t + 1e-9)
        assert np.max(np.abs(lo - hi)) < 1e-6


def test_contract_matches_dense_product():
    spec = BasisSpec.build(Rect([0, 0, 0], [1, 2, 3]), [3, 2, 1], [2, 1, 3])
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (200, 3)) * [1, 2, 3]
    c = rng.normal(size=spec.K)
    np.testing.assert_allclose(contract(basis_factors(spec, x), c), design_matrix(spec, x) @ c, atol=1e-12)


def test_clamped_prediction():
    spec = BasisSpec.build(Rect([0.0], [1.0]), 3, 2)
    B = design_matrix(spec, np.array([[1.7]]), clamp=True)
    np.testing.assert_array_equal(B, design_matrix(spec, np.array([[1.0]])))
