import math

import numpy as np
import pytest

from dgfem import mesh as M
from dgfem.errors import DegenerateElementError, UnsupportedDimensionError
from oracles import kuhn_counts, nvb_similarity_classes


@pytest.mark.parametrize("dim, cells, simplices, nodes", [(2, 1, 2, 4), (3, 1, 6, 8), (2, 2, 8, 9)])
def test_kuhn_counts(dim, cells, simplices, nodes):
    m = M.kuhn_triangulate(dim, cells)
    assert (m.num_cells, m.num_nodes) == (simplices, nodes)


@pytest.mark.parametrize("dim, cells", [(2, 5), (3, 3)])
def test_kuhn_volume_and_orientation(dim, cells):
    m = M.kuhn_triangulate(dim, cells, [[-1, 1]] * dim)
    assert (m.num_cells, m.num_nodes) == kuhn_counts(dim, cells)
    assert np.all(m.signed_volumes > 0)
    assert m.volumes.sum() == pytest.approx(2.0 ** dim)
    assert M.validate_conformity(m).ok


def test_kuhn_rejects_dimension_four():
    with pytest.raises(UnsupportedDimensionError):
        M.kuhn_triangulate(4, 1)


def test_kuhn_rejects_degenerate_box():
    with pytest.raises(ValueError):
        M.kuhn_triangulate(2, 2, [[0, 0], [0, 1]])


def test_bisect_both_triangles():
    m = M.bisect(M.kuhn_triangulate(2, 1), {0, 1})
    assert m.num_cells == 4 and m.num_nodes == 5
    assert M.validate_conformity(m).ok


def test_bisect_empty_marking_is_identity():
    m = M.kuhn_triangulate(2, 2)
    assert M.bisect(m, set()) is m


def test_bisect_closure_keeps_conformity():
    m = M.kuhn_triangulate(2, 2)
    for _ in range(6):
        m = M.bisect(m, m.locate([0.3, 0.3]))
        rep = M.validate_conformity(m)
        assert rep.ok, rep.violations()
    assert m.volumes.sum() == pytest.approx(1.0)


def test_bisect_3d_conforming():
    m = M.kuhn_triangulate(3, 1)
    for _ in range(5):
        m = M.bisect(m, m.locate([0.1, 0.2, 0.3]))
    assert M.validate_conformity(m).ok
    assert m.volumes.sum() == pytest.approx(1.0)


def test_uniform_refinement_counts():
    m = M.refine_uniform(M.kuhn_triangulate(2, 1), 2)
    assert (m.num_cells, m.num_nodes) == (8, 9)
    m3 = M.refine_uniform(M.kuhn_triangulate(3, 1), 3)
    assert m3.num_cells == 48 and M.validate_conformity(m3).ok


def test_bisect_rejects_out_of_range_ids():
    with pytest.raises(ValueError):
        M.bisect(M.kuhn_triangulate(2, 1), {5})


def test_shape_regularity_of_right_triangle():
    per, gamma = M.shape_regularity(M.kuhn_triangulate(2, 1))
    np.testing.assert_allclose(per, 2 + 2 * math.sqrt(2))
    assert gamma == pytest.approx(4.828427124746, rel=1e-12)


def test_shape_regularity_degenerate():
    m = M.Triangulation(np.array([[0, 0], [1, 0], [2, 0.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(DegenerateElementError):
        M.shape_regularity(m)


def test_generic_seed_matches_class_enumeration():
    # longest-edge first seed with four NVB similarity classes
    p, q, r = (0.0, 0.0), (1.0, 0.0), (0.3, 0.7)
    classes, gmax = nvb_similarity_classes(p, q, r)
    assert len(classes) <= 4
    m = M.Triangulation(np.array([p, q, r]), np.array([[0, 1, 2]]))
    best = 0.0
    for _ in range(6):
        m = M.refine_uniform(m)
        best = max(best, M.shape_regularity(m)[1])
    assert best == pytest.approx(gmax, rel=1e-10)


def test_patch_of_corners():
    m = M.kuhn_triangulate(2, 1)
    sizes = sorted(len(M.patch(m, i)) for i in range(4))
    assert sizes == [1, 1, 2, 2]


def test_ball_covering_mesh_gives_all_cells():
    m = M.kuhn_triangulate(2, 4)
    got = M.neighborhood(m, M.Ball((0.5, 0.5), math.sqrt(2)))
    np.testing.assert_array_equal(got, np.arange(m.num_cells))


def test_neighborhood_of_empty_set():
    assert M.neighborhood(M.kuhn_triangulate(2, 2), []).size == 0


def test_prime_neighborhood_inside_neighborhood():
    m = M.kuhn_triangulate(2, 8)
    ball = M.Ball((0.41, 0.52), 0.2)
    prime = M.prime_neighborhood(m, ball)
    assert set(prime) <= set(M.neighborhood(m, ball)) | set(M.neighborhood(m, prime))
    far = M.Ball((0.01, 0.013), 0.001)
    assert M.prime_neighborhood(m, far).size == 0


def test_neighborhood_constants_on_uniform_mesh():
    nc = M.neighborhood_constants(M.kuhn_triangulate(2, 8), samples=16)
    assert 1.0 <= nc.Q < 3.0
    assert 0.0 < nc.kappa <= 1.0


def test_hanging_node_detected():
    # node 3 is the midpoint of the long edge of cell 0 but not one of its vertices
    pts = np.array([[0, 0], [2, 0], [0, 2], [1, 1], [2, 2.0]])
    cells = np.array([[0, 1, 2], [1, 4, 3], [3, 4, 2]])
    rep = M.validate_conformity(M.Triangulation(pts, cells))
    assert (3, 0) in rep.hanging_nodes and not rep.ok


def test_vertex_moved_off_shared_edge():
    # cell 1 gets its own copy of the shared corner, pushed along the shared edge
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
    cells = np.array([[0, 1, 2], [4, 2, 3]])
    rep = M.validate_conformity(M.Triangulation(pts, cells))
    assert (4, 0) in rep.hanging_nodes


def test_duplicate_nodes_detected():
    m = M.kuhn_triangulate(2, 2)
    pts = np.vstack([m.points, m.points[4]])
    cells = m.cells.copy()
    cells[0][cells[0] == 4] = len(pts) - 1
    rep = M.validate_conformity(M.Triangulation(pts, cells))
    assert rep.duplicate_nodes == [(4, 9)]


def test_reversed_orientation_detected():
    m = M.kuhn_triangulate(2, 2)
    cells = m.cells.copy()
    cells[3] = cells[3][::-1]
    rep = M.validate_conformity(M.Triangulation(m.points, cells))
    assert rep.inverted == [3]
    assert any("inverted" in v for v in rep.violations())


def test_locate_points():
    m = M.kuhn_triangulate(2, 4)
    x = np.array([[0.1, 0.05], [0.9, 0.95]])
    t = m.locate(x)
    from dgfem.geometry import barycentric_coordinates
    lam = barycentric_coordinates(x, m.coords[t])
    assert (lam > -1e-12).all()


def test_comparability_and_separation():
    m = M.kuhn_triangulate(2, 4)
    assert M.comparability_ratio(m) == pytest.approx(1.0)
    assert M.patch_separation(m) > 0
