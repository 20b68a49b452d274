import math

import numpy as np
import pytest

from dgfem import degiorgi as D
from dgfem import fem
from dgfem.errors import FixedPointError, GeometryError, InvalidDataError, UndefinedOscillationError
from dgfem.fem import CoefficientField, FeFunction, LoadData
from dgfem.mesh import Ball, kuhn_triangulate
from dgfem.conditions import verify_subsolution
from dgfem.problems import checkerboard
from dgfem.inequalities import uniformity

IDENTITY = CoefficientField.identity()


# --- iteration lemmas

def test_fast_geometric_closed_form():
    k = np.arange(12)
    bounds = 2.0 ** -(1 + k)
    a = [0.5]
    for i in range(11):
        a.append(2.0 ** i * a[-1] ** 2)
    res = D.fast_geometric_bound(a, 1.0, 2.0, 1.0)
    np.testing.assert_allclose(res.bounds, bounds, rtol=1e-15)
    assert res.converges and res.within_bounds and res.threshold == 0.5


def test_fast_geometric_zero_sequence():
    res = D.fast_geometric_bound(np.zeros(8), 3.0, 4.0, 0.5)
    assert res.converges and res.within_bounds


def test_fast_geometric_reports_first_violation():
    res = D.fast_geometric_bound([0.1, 0.1, 0.5], 1.0, 2.0, 1.0)
    assert not res.hypothesis_ok and res.first_violation == 0


def test_telescoping_envelope_for_unit_constants():
    res = D.telescoping_bound(np.ones(10), np.r_[1.0, np.zeros(9)])
    np.testing.assert_allclose(res.envelope, 1 / np.sqrt(np.arange(1, 10)))
    assert res.hypothesis_ok and res.within


def test_telescoping_equality_rollout():
    a = [1.0]
    for _ in range(40):
        a.append((-1 + math.sqrt(1 + 4 * a[-1])) / 2)
    res = D.telescoping_bound(np.ones(41), np.array(a))
    assert res.hypothesis_ok and res.within
    assert res.first_violation is None


def test_telescoping_zero_sequence():
    assert D.telescoping_bound(np.ones(5), np.zeros(5)).within


def test_calpha_linear_phi_has_zero_constant():
    fit = D.calpha_iteration_fit(lambda r: r, 1.0, D.IterationParams(sigma=0.5, alpha1=1.0, alpha2=0.5))
    assert fit.C == 0.0 and fit.hypothesis_ok and fit.envelope_ok


def test_calpha_zero_phi():
    fit = D.calpha_iteration_fit(lambda r: 0.0, 1.0, D.IterationParams())
    assert fit.envelope_ok and fit.c_measured == 0.0


def test_calpha_power_phi():
    p = D.IterationParams(sigma=0.5, alpha1=1.0, alpha2=0.5)
    fit = D.calpha_iteration_fit(lambda r: r ** 0.5, 1.0, p)
    assert fit.C == pytest.approx(math.sqrt(0.5) - 0.5)
    assert 0.8 <= fit.c_measured <= 1.0
    assert fit.envelope_ok


def test_calpha_rejects_increasing_samples():
    with pytest.raises(InvalidDataError):
        D.calpha_iteration_fit(lambda r: 1 / r, 1.0, D.IterationParams())


def test_kappa0_keeps_contraction():
    p = D.IterationParams(sigma=0.5, alpha1=1.0, alpha2=0.5)
    q = D.IterationParams(sigma=0.5, alpha1=1.0, alpha2=0.5, kappa=p.kappa0)
    assert (q.sigma ** q.alpha1 + q.kappa) / q.sigma ** q.alpha2 < 1


# --- cutoffs

def test_cutoff_plateau_and_support():
    m = kuhn_triangulate(2, 32)
    x0, R = np.array([0.5, 0.5]), 0.2
    for k in range(4):
        eta = D.build_cutoff(m, x0, R, k)
        d = np.linalg.norm(m.points - x0, axis=1)
        plateau, support = D.cutoff_radii(R, k)
        assert np.all(eta.values[d <= R] == 1.0)
        assert np.all(eta.values[d <= plateau] == 1.0)
        assert np.all(eta.values[d >= support] == 0.0)


def test_cutoffs_coincide_at_nodes_for_thin_annulus():
    m = kuhn_triangulate(2, 8)
    e6 = D.build_cutoff(m, [0.5, 0.5], 0.25, 6)
    e7 = D.build_cutoff(m, [0.5, 0.5], 0.25, 7)
    np.testing.assert_array_equal(e6.values, e7.values)


def test_cutoff_gradient_constant_on_fine_mesh():
    m = kuhn_triangulate(2, 64)
    consts = []
    for k in range(6):
        rep = D.check_cutoff(m, [0.5, 0.5], 0.25, k)
        assert rep.nested and rep.values_in_range
        consts.append(rep.gradient_constant)
    assert max(consts) <= 4.0
    assert max(consts) == pytest.approx(3.775, abs=0.01)


def test_cutoff_leaving_domain():
    m = kuhn_triangulate(2, 16)
    with pytest.raises(GeometryError):
        D.build_cutoff(m, [0.2, 0.5], 0.15, 0)
    with pytest.raises(GeometryError):
        D.build_cutoff(m, [0.5, 0.5], 0.01, 0)
    D.build_cutoff(m, [0.2, 0.5], 0.15, 0, interior=False)


# --- local bounds

def test_local_sup_below_level():
    m = kuhn_triangulate(2, 16)
    u = fem.solve(m, IDENTITY, LoadData(f=1.0))
    rec = D.local_sup_bound_check(u, [0.5, 0.5], 0.2, float(u.values.max()))
    assert rec.lhs == 0 and rec.ok


@pytest.fixture(scope="module")
def checkerboard_solutions():
    prob = checkerboard(5.0)
    return prob, {L: fem.solve(prob.level_mesh(L), prob.A, prob.load) for L in range(3, 8)}


def test_local_sup_envelope_on_checkerboard(checkerboard_solutions):
    prob, sols = checkerboard_solutions
    centers = [(x, y) for x in (-0.25, 0.0, 0.25) for y in (-0.25, 0.0, 0.25)]
    per_level = []
    for L, u in sols.items():
        per_level.append(max(D.local_sup_bound_check(u, x0, 0.25, 0.0, prob.load, level=L).ratio for x0 in centers))
    holds, top, first = uniformity(per_level)
    assert holds
    assert top / first < 1.1


def test_de_giorgi_state_is_monotone(checkerboard_solutions):
    prob, sols = checkerboard_solutions
    st = D.de_giorgi_state(sols[5], [0.0, 0.0], 0.25, 0.0, prob.load)
    assert np.all(np.diff(st.set_measures) <= 1e-15)
    assert np.all(np.diff(st.energies) <= 1e-15)
    assert np.all(np.diff(st.levels) > 0)


def test_neighbor_value_trivial_when_start_is_one():
    m = kuhn_triangulate(2, 16)
    u = fem.solve(m, IDENTITY, LoadData(f=1.0))
    v = u * (1 / u.values.max())
    i = int(np.argmax(v.values))
    load = LoadData(f=1.0 / u.values.max())
    for t in m.cells_of_node(i):
        for j in m.cells[t]:
            rec = D.neighbor_value_bound_check(v, int(t), i, int(j), IDENTITY, load)
            assert rec.status == "ok" and rec.rhs >= 1


def test_neighbor_value_on_subsolution():
    m = kuhn_triangulate(2, 16)
    u = fem.solve(m, IDENTITY, LoadData(f=lambda X: np.sin(7 * X[:, 0])))
    v = fem.nodal_positive_part(u) * (1 / u.values.max())
    load = LoadData(f=lambda X: np.abs(np.sin(7 * X[:, 0])) / u.values.max())
    interior = np.nonzero(~m.boundary_mask[m.cells].any(axis=1))[0]
    for t in interior[::7]:
        a, b = (int(x) for x in m.cells[t][:2])
        rec = D.neighbor_value_bound_check(v, int(t), a, b, IDENTITY, load)
        assert rec.ok


# --- oscillation and Hölder

def test_oscillation_of_constant():
    m = kuhn_triangulate(2, 8)
    rep = D.oscillation_decay_study(fem.interpolate(m, 2.0), [0.5, 0.5], 0.25)
    assert not rep.osc.any() and rep.alpha is None


def test_oscillation_of_affine_function():
    m = kuhn_triangulate(2, 32)
    u = fem.interpolate(m, lambda X: X[:, 0])
    for r in (0.3, 0.1, 0.02):
        assert D.oscillation(u, Ball((0.5, 0.45), r)) == pytest.approx(2 * r, rel=1e-12)
    rep = D.oscillation_decay_study(fem.interpolate(kuhn_triangulate(2, 64), lambda X: X[:, 0]), [0.5, 0.5], 0.4)
    assert (rep.radii >= rep.window[0]).sum() >= 3
    assert rep.alpha == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(rep.osc, 2 * rep.radii, rtol=1e-12)


def test_oscillation_empty_region():
    m = kuhn_triangulate(2, 4)
    with pytest.raises(UndefinedOscillationError):
        D.oscillation(fem.zero(m), [])
    with pytest.raises(UndefinedOscillationError):
        D.oscillation(fem.zero(m), Ball((5.0, 5.0), 0.1))


def test_holder_seminorm_constant_and_affine():
    m = kuhn_triangulate(2, 8)
    assert D.holder_seminorm(fem.interpolate(m, 3.0), 0.5) == 0
    u = fem.interpolate(m, lambda X: 0.6 * X[:, 0] - 0.8 * X[:, 1])
    assert D.holder_seminorm(u, 1.0) == pytest.approx(1.0, rel=1e-12)


def brute_holder(P, V, alpha):
    d = np.linalg.norm(P[:, None] - P[None], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(V[:, None] - V[None]) / d ** alpha
    return float(np.nanmax(np.where(d > 0, r, 0)))


@pytest.mark.parametrize("alpha", [0.3, 0.5, 1.0])
def test_holder_seminorm_matches_brute_force(alpha):
    m = kuhn_triangulate(2, 12)
    rng = np.random.default_rng(int(alpha * 10))
    u = FeFunction(m, rng.normal(size=m.num_nodes))
    P = np.concatenate([m.points, m.barycenters])
    V = np.concatenate([u.values, u.cell_values.mean(axis=1)])
    assert D.holder_seminorm(u, alpha) == pytest.approx(brute_holder(P, V, alpha), rel=1e-12)


def test_holder_interior_mode_is_smaller():
    m = kuhn_triangulate(2, 8)
    u = fem.interpolate(m, lambda X: np.sqrt(X[:, 0]))
    assert D.holder_seminorm(u, 0.5, "interior") <= D.holder_seminorm(u, 0.5)


# --- quasilinear driver

def test_unit_coefficient_reduces_to_linear():
    m = kuhn_triangulate(2, 16)
    load = LoadData(f=1.0)
    res = D.solve_quasilinear(m, lambda x, u, g: np.ones(len(x)), load)
    ref = fem.solve(m, IDENTITY, load)
    np.testing.assert_allclose(res.u.values, ref.values, atol=1e-12)
    assert res.iterations == 1


def test_space_dependent_coefficient_is_one_linear_solve():
    m = kuhn_triangulate(2, 16)
    load = LoadData(f=1.0)
    a = lambda x, u, g: 1 + x[:, 0] ** 2  # noqa: E731
    res = D.solve_quasilinear(m, a, load)
    ref = fem.solve(m, CoefficientField.scalar_field(lambda X: 1 + X[:, 0] ** 2), load)
    np.testing.assert_allclose(res.u.values, ref.values, atol=1e-12)


def test_gradient_dependent_coefficient_converges_and_truncations_are_subsolutions():
    m = kuhn_triangulate(2, 16)
    load = LoadData(f=1.0)
    a = lambda x, u, g: 1 + 1 / (1 + np.sum(g ** 2, axis=1))  # noqa: E731
    res = D.solve_quasilinear(m, a, load, bounds=(1.0, 2.0))
    assert res.iterations < 200 and res.changes[-1] <= 1e-8
    assert D.nonlinear_defect(res.u, a, load) < 1e-8
    for c in np.quantile(res.u.values, [0.0, 0.3, 0.6, 0.9]):
        rep = verify_subsolution(fem.nodal_positive_part(res.u, c), res.coefficient, load.dominated())
        assert rep.passed


def test_fixed_point_failure_keeps_history():
    m = kuhn_triangulate(2, 8)
    a = lambda x, u, g: 1 + 1 / (1 + np.sum(g ** 2, axis=1))  # noqa: E731
    with pytest.raises(FixedPointError) as exc:
        D.solve_quasilinear(m, a, LoadData(f=10.0), maxiter=2)
    assert len(exc.value.history) == 2


def test_coefficient_outside_bounds():
    m = kuhn_triangulate(2, 4)
    with pytest.raises(InvalidDataError):
        D.solve_quasilinear(m, lambda x, u, g: np.full(len(x), 5.0), LoadData(f=1.0), bounds=(1.0, 3.0))
