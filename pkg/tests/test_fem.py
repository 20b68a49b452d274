import math

import numpy as np
import pytest
import sympy as sym

from dgfem import fem
from dgfem.errors import IncompatibleOperandsError, InvalidDataError, SolverError
from dgfem.fem import CoefficientField, FeFunction, LoadData
from dgfem.mesh import Triangulation, kuhn_triangulate

RIGHT = Triangulation(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
IDENTITY = CoefficientField.identity()
STIFF_RIGHT = np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])


def test_right_triangle_stiffness():
    sys_ = fem.assemble(RIGHT, IDENTITY, LoadData())
    np.testing.assert_allclose(sys_.local[0], STIFF_RIGHT, atol=1e-12)
    np.testing.assert_allclose(sys_.K.toarray(), STIFF_RIGHT, atol=1e-12)


def test_stiffness_linear_in_coefficient():
    k1 = fem.assemble(RIGHT, IDENTITY, LoadData()).local
    k2 = fem.assemble(RIGHT, CoefficientField.constant(2.0), LoadData()).local
    np.testing.assert_array_equal(k2, 2 * k1)


def test_unit_source_load():
    b = fem.assemble(RIGHT, IDENTITY, LoadData(f=1.0)).b
    np.testing.assert_allclose(b, [1 / 6] * 3, rtol=1e-14)


def test_divergence_load_of_constant_field_sums_to_zero():
    m = kuhn_triangulate(2, 4)
    b = fem.load_vector(m, LoadData(F=lambda x: np.tile([1.0, 2.0], (len(x), 1))))
    assert abs(b.sum()) < 1e-13
    assert np.abs(b[m.interior_nodes]).max() < 1e-13


def test_non_finite_source_reports_element():
    def f(x):
        out = np.ones(len(x))
        out[(x[:, 0] > 0.75) & (x[:, 1] > 0.75)] = np.nan
        return out
    m = kuhn_triangulate(2, 2)
    with pytest.raises(InvalidDataError) as exc:
        fem.assemble(m, IDENTITY, LoadData(f=f))
    assert exc.value.element_id is not None
    assert (m.barycenters[exc.value.element_id] > 0.5).all()


def test_non_symmetric_coefficient_rejected():
    A = CoefficientField.constant([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(InvalidDataError):
        fem.assemble(kuhn_triangulate(2, 1), A, LoadData())


def test_zero_load_gives_zero_solution():
    u = fem.solve(kuhn_triangulate(2, 6), IDENTITY, LoadData())
    assert not u.values.any()


def test_solver_failure_carries_history():
    with pytest.raises(SolverError) as exc:
        fem.solve(kuhn_triangulate(2, 16), IDENTITY, LoadData(f=1.0), maxiter=2)
    assert len(exc.value.history) >= 2


def test_solution_vanishes_on_boundary_and_satisfies_galerkin():
    m = kuhn_triangulate(3, 4)
    s = fem.assemble(m, IDENTITY, LoadData(f=1.0))
    u = fem.solve_dirichlet(s)
    assert u.is_zero_on_boundary()
    assert s.galerkin_defect(u) < 1e-9


def _sympy_source(A):
    x, y = sym.symbols("x y")
    u = x * (1 - x) * y * (1 - y)
    f = -(A[0] * sym.diff(u, x, 2) + A[1] * sym.diff(u, y, 2))
    return sym.lambdify((x, y), sym.expand(f), "numpy"), sym.lambdify((x, y), u, "numpy")


def test_l2_convergence_order():
    f, ex = _sympy_source((1, 1))
    errs = []
    for level in range(2, 6):
        m = kuhn_triangulate(2, 2 ** level)
        u = fem.solve(m, IDENTITY, LoadData(f=lambda X: f(X[:, 0], X[:, 1])))
        errs.append(fem.l2_error(u, lambda X: ex(X[:, 0], X[:, 1])))
    orders = -np.diff(np.log2(errs))
    assert orders.min() >= 1.9


def test_interpolation():
    m = kuhn_triangulate(2, 3)
    assert np.all(fem.interpolate(m, 1.0).values == 1)
    g = lambda X: 2 * X[:, 0] - X[:, 1] + 0.5  # noqa: E731
    u = fem.interpolate(m, g)
    pts = np.random.default_rng(0).random((50, 2))
    np.testing.assert_allclose(u(pts), g(pts), atol=1e-13)


def test_interpolation_of_square_on_edge_nodes():
    m = kuhn_triangulate(2, 2)
    u = fem.interpolate(m, lambda X: X[:, 0] ** 2)
    bottom = np.isclose(m.points[:, 1], 0)
    order = np.argsort(m.points[bottom, 0])
    np.testing.assert_allclose(u.values[bottom][order], [0, 0.25, 1])


def test_interpolation_non_finite():
    with pytest.raises(InvalidDataError):
        fem.interpolate(kuhn_triangulate(2, 1), lambda X: np.where(X[:, 0] > 0, 1.0, np.inf))


def test_nodal_max_and_positive_part():
    m = Triangulation(RIGHT.points, RIGHT.cells)
    u, v = FeFunction(m, np.array([-1.0, 2, 0])), FeFunction(m, np.array([0.0, 1, 3]))
    np.testing.assert_array_equal(fem.nodal_max(u, v).values, [0, 2, 3])
    np.testing.assert_array_equal(fem.nodal_positive_part(u, 0.5).values, [0, 1.5, 0])
    assert not fem.nodal_positive_part(u, 2.0).values.any()


def test_mesh_mismatch():
    a = fem.zero(kuhn_triangulate(2, 1))
    b = fem.zero(kuhn_triangulate(2, 1))
    with pytest.raises(IncompatibleOperandsError):
        fem.nodal_max(a, b)


def test_commutator_defect_vanishes_for_constant_factor():
    m = kuhn_triangulate(2, 4)
    u = fem.interpolate(m, lambda X: np.sin(3 * X[:, 0]) + X[:, 1] ** 2)
    d = fem.product_commutator_defect(u, fem.interpolate(m, 2.5))
    assert not d.value.any() and not d.gradient.any()


def test_commutator_defect_of_squared_hat():
    m = kuhn_triangulate(2, 4)
    node = int(m.interior_nodes[0])
    hat = FeFunction(m, np.eye(m.num_nodes)[node])
    d = fem.product_commutator_defect(hat, hat)
    touching = (m.cells == node).any(axis=1)
    np.testing.assert_allclose(d.value[touching], 0.25, rtol=1e-12)
    assert not d.value[~touching].any()


def test_lp_norm_of_constant():
    m = kuhn_triangulate(2, 2, [[0, 2], [0, 1]])
    assert fem.norm_lp(m, lambda X: np.full(len(X), 3.0), 4) == pytest.approx(3 * 2 ** 0.25)
    assert LoadData.two_star(2) == 8 and LoadData.two_star(3) == 6


def test_dominated_requires_field():
    load = LoadData(f=-1.0, F=lambda X: X)
    with pytest.raises(InvalidDataError):
        load.dominated()
    assert LoadData(f=-2.0).dominated().f == 2.0


def test_cell_energy_sums_to_quadratic_form():
    m = kuhn_triangulate(2, 4)
    s = fem.assemble(m, CoefficientField.scalar_field(lambda X: 1 + X[:, 0]), LoadData(f=1.0))
    u = fem.solve_dirichlet(s)
    assert fem.cell_energy(u, s.Acell).sum() == pytest.approx(u.values @ (s.K @ u.values), rel=1e-12)
