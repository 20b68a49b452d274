import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgfem import meshio
from dgfem.errors import MeshFormatError, UnsupportedDimensionError
from dgfem.mesh import kuhn_triangulate

GOOD = """dgfem-mesh 1
dim 2
nodes 3
0 0 0
1 1 0
2 0 1
elements 1
0 0 1 2
"""


def test_round_trip_single_square(tmp_path):
    m = kuhn_triangulate(2, 1)
    path = tmp_path / "m.txt"
    meshio.write_mesh(m, path)
    text = path.read_text()
    assert "nodes 4" in text and "elements 2" in text
    back = meshio.read_mesh(path)
    np.testing.assert_array_equal(back.points, m.points)
    np.testing.assert_array_equal(back.cells, m.cells)


@settings(max_examples=25, deadline=None)
@given(dim=st.sampled_from([2, 3]), cells=st.integers(1, 3), scale=st.floats(1e-3, 1e3))
def test_round_trip_is_exact(dim, cells, scale):
    m = kuhn_triangulate(dim, cells, [[0.1, 0.1 + scale]] * dim)
    back = meshio.parse_mesh(meshio.format_mesh(m))
    np.testing.assert_array_equal(back.points, m.points)
    np.testing.assert_array_equal(back.cells, m.cells)


def test_parse_good_file_with_comments():
    m = meshio.parse_mesh("# comment\n" + GOOD)
    assert m.num_cells == 1 and m.dim == 2


def test_dimension_four_rejected():
    with pytest.raises(UnsupportedDimensionError):
        meshio.parse_mesh(GOOD.replace("dim 2", "dim 4"))


def test_out_of_range_vertex_names_line():
    bad = GOOD.replace("0 0 1 2", "0 0 1 3")
    with pytest.raises(MeshFormatError) as exc:
        meshio.parse_mesh(bad)
    assert exc.value.line == 8
    assert "8" in str(exc.value)


@pytest.mark.parametrize("mutate, line", [
    (lambda t: t.replace("dgfem-mesh 1", "dgfem-mesh 2"), 1),
    (lambda t: t.replace("1 1 0", "1 1"), 5),
    (lambda t: t.replace("2 0 1", "2 0 nan"), 6),
    (lambda t: t.replace("0 0 1 2", "0 0 1"), 8),
    (lambda t: t.replace("0 0 1 2", "0 0 1 1"), 8),
    (lambda t: t + "junk\n", 9),
    (lambda t: t.replace("elements 1\n0 0 1 2\n", "elements 1\n"), 7),
])
def test_malformed_files(mutate, line):
    with pytest.raises(MeshFormatError) as exc:
        meshio.parse_mesh(mutate(GOOD))
    assert exc.value.line == line


def test_function_round_trip(tmp_path):
    v = np.array([0.1, -2.5e-17, 3.0])
    meshio.write_function(v, tmp_path / "u.txt")
    np.testing.assert_array_equal(meshio.read_function(tmp_path / "u.txt"), v)


def test_function_bad_header():
    with pytest.raises(MeshFormatError):
        meshio.parse_function("nope\nnodes 0\n")
