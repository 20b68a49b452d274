"""Randomized invariants checked with hypothesis."""
import itertools

import numpy as np
from hypothesis import given, settings, strategies as st

from dgfem import conditions, fem
from dgfem.degiorgi import bump, pairwise_holder_sup
from dgfem.fem import CoefficientField, FeFunction, LoadData
from dgfem.mesh import Triangulation, bisect, kuhn_triangulate, validate_conformity

FAST = settings(max_examples=40, deadline=None)


def jittered(seed: int, dim: int, cells: int, jitter: float = 0.25) -> Triangulation:
    rng = np.random.default_rng(seed)
    m = kuhn_triangulate(dim, cells)
    pts = m.points.copy()
    pts[m.interior_nodes] += rng.uniform(-jitter, jitter, (m.interior_nodes.size, dim)) / cells
    return Triangulation(pts, m.cells, m.nvb_order, m.nvb_tag)


@FAST
@given(dim=st.sampled_from([2, 3]), cells=st.integers(1, 4))
def test_kuhn_cells_fill_the_box(dim, cells):
    m = kuhn_triangulate(dim, cells)
    assert np.isclose(m.volumes.sum(), 1.0)
    assert np.all(m.signed_volumes > 0)


@FAST
@given(seed=st.integers(0, 10_000), dim=st.sampled_from([2, 3]))
def test_hat_gradients_sum_to_zero(seed, dim):
    m = jittered(seed, dim, 2)
    np.testing.assert_allclose(m.gradients.sum(axis=1), 0.0, atol=1e-10)


@FAST
@given(seed=st.integers(0, 10_000), dim=st.sampled_from([2, 3]))
def test_stiffness_is_symmetric_with_zero_row_sums(seed, dim):
    K = fem.assemble(jittered(seed, dim, 3), CoefficientField.identity(), LoadData()).K
    assert abs(K - K.T).max() < 1e-12
    assert np.abs(K.sum(axis=1)).max() < 1e-10


@FAST
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100.0))
def test_acuteness_margin_is_scale_invariant(seed, scale):
    m = jittered(seed, 2, 3, 0.15)
    g1 = conditions.check_uniform_acute(m, CoefficientField.identity()).gamma
    g2 = conditions.check_uniform_acute(m, CoefficientField.constant(scale)).gamma
    assert np.isclose(g1, g2, rtol=1e-9, atol=1e-12)


@FAST
@given(seed=st.integers(0, 10_000), c=st.floats(-1.0, 1.0))
def test_nodal_operations_are_nodewise(seed, c):
    rng = np.random.default_rng(seed)
    m = kuhn_triangulate(2, 3)
    u, v = FeFunction(m, rng.normal(size=m.num_nodes)), FeFunction(m, rng.normal(size=m.num_nodes))
    w = fem.nodal_max(u, v)
    np.testing.assert_array_equal(w.values, fem.nodal_max(v, u).values)
    assert np.all(w.values >= u.values) and np.all(w.values >= v.values)
    p = fem.nodal_positive_part(u, c)
    assert np.all(p.values >= 0)
    np.testing.assert_allclose(p.values - fem.nodal_positive_part(-(u - c), 0).values, u.values - c)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), rounds=st.integers(1, 5))
def test_bisection_keeps_conformity_and_area(seed, rounds):
    rng = np.random.default_rng(seed)
    m = kuhn_triangulate(2, 2)
    for _ in range(rounds):
        m = bisect(m, rng.choice(m.num_cells, size=max(1, m.num_cells // 5), replace=False))
    assert validate_conformity(m).ok
    assert np.isclose(m.volumes.sum(), 1.0)


@FAST
@given(seed=st.integers(0, 10_000), alpha=st.floats(0.1, 1.0), n=st.integers(2, 60))
def test_holder_sup_matches_brute_force(seed, alpha, n):
    rng = np.random.default_rng(seed)
    P, V = rng.uniform(-1, 1, (n, 2)), rng.normal(size=n)
    brute = max(abs(V[i] - V[j]) / np.linalg.norm(P[i] - P[j]) ** alpha
                for i, j in itertools.combinations(range(n), 2))
    assert np.isclose(pairwise_holder_sup(P, V, alpha), brute, rtol=1e-12)


@FAST
@given(seed=st.integers(0, 10_000), R=st.floats(0.05, 1.0), k=st.integers(0, 6))
def test_bump_is_a_cutoff(seed, R, k):
    x = np.random.default_rng(seed).uniform(-3, 3, (200, 2))
    vals = bump(x, [0.0, 0.0], R, k)
    assert np.all((vals >= 0) & (vals <= 1))
    d = np.linalg.norm(x, axis=1)
    assert np.all(vals[d <= R] == 1.0)
    assert np.all(vals[d >= 2 * R] == 0.0)
