"""P1 finite elements on simplicial meshes with discrete De Giorgi diagnostics."""
from .errors import DgfemError
from .fem import CoefficientField, FeFunction, LoadData, assemble, solve
from .mesh import Triangulation, bisect, kuhn_triangulate, refine_uniform
from .meshio import read_mesh, write_mesh

__version__ = "0.1.0"

__all__ = [
    "CoefficientField", "DgfemError", "FeFunction", "LoadData", "Triangulation", "assemble", "bisect",
    "kuhn_triangulate", "read_mesh", "refine_uniform", "solve", "write_mesh",
]
