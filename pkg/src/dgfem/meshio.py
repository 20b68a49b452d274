"""Text formats: ``dgfem-mesh 1`` meshes and ``dgfem-fun v1`` nodal functions."""
from __future__ import annotations

import os

import numpy as np

from .errors import MeshFormatError, UnsupportedDimensionError
from .mesh import Triangulation

MESH_HEADER = "dgfem-mesh 1"
FUN_HEADER = "dgfem-fun v1"


def format_mesh(mesh: Triangulation) -> str:
    lines = [MESH_HEADER, f"dim {mesh.dim}", f"nodes {mesh.num_nodes}"]
    for i, p in enumerate(mesh.points):
        lines.append(" ".join([str(i), *(repr(float(c)) for c in p)]))
    lines.append(f"elements {mesh.num_cells}")
    for t, verts in enumerate(mesh.cells):
        lines.append(" ".join(str(int(v)) for v in (t, *verts)))
    return "\n".join(lines) + "\n"


def write_mesh(mesh: Triangulation, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_mesh(mesh))


class _Lines:
    def __init__(self, text):
        self.rows = [(k + 1, ln.split()) for k, ln in enumerate(text.splitlines())]
        self.rows = [(k, tok) for k, tok in self.rows if tok and not tok[0].startswith("#")]
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.rows):
            last = self.rows[-1][0] if self.rows else 1
            raise MeshFormatError(f"unexpected end of file, expected {what}", last)
        row = self.rows[self.pos]
        self.pos += 1
        return row

    def keyword(self, word):
        line, tok = self.next(f"'{word} <count>'")
        if len(tok) != 2 or tok[0] != word:
            raise MeshFormatError(f"expected '{word} <count>'", line)
        return line, _int(tok[1], line)


def _int(s, line):
    try:
        return int(s)
    except ValueError:
        raise MeshFormatError(f"expected integer, got {s!r}", line) from None


def _float(s, line):
    try:
        v = float(s)
    except ValueError:
        raise MeshFormatError(f"expected number, got {s!r}", line) from None
    if not np.isfinite(v):
        raise MeshFormatError(f"non-finite coordinate {s!r}", line)
    return v


def parse_mesh(text: str) -> Triangulation:
    rows = _Lines(text)
    line, tok = rows.next("header")
    if tok != MESH_HEADER.split():
        raise MeshFormatError(f"bad header {' '.join(tok)!r}, expected {MESH_HEADER!r}", line)
    line, dim = rows.keyword("dim")
    if dim not in (2, 3):
        raise UnsupportedDimensionError(f"line {line}: dimension {dim} not supported (use 2 or 3)")
    line, N = rows.keyword("nodes")
    points = np.empty((N, dim))
    for i in range(N):
        line, tok = rows.next("node line")
        if len(tok) != dim + 1:
            raise MeshFormatError(f"node line needs id and {dim} coordinates", line)
        if _int(tok[0], line) != i:
            raise MeshFormatError(f"node ids must be dense and ordered, expected {i}", line)
        points[i] = [_float(s, line) for s in tok[1:]]
    line, M = rows.keyword("elements")
    cells = np.empty((M, dim + 1), dtype=np.int64)
    for t in range(M):
        line, tok = rows.next("element line")
        if len(tok) != dim + 2:
            raise MeshFormatError(f"element line needs id and {dim + 1} vertex ids", line)
        if _int(tok[0], line) != t:
            raise MeshFormatError(f"element ids must be dense and ordered, expected {t}", line)
        verts = [_int(s, line) for s in tok[1:]]
        for v in verts:
            if not 0 <= v < N:
                raise MeshFormatError(f"vertex id {v} out of range 0..{N - 1}", line)
        if len(set(verts)) != len(verts):
            raise MeshFormatError("repeated vertex id in element", line)
        cells[t] = verts
    if rows.pos < len(rows.rows):
        raise MeshFormatError("trailing content", rows.rows[rows.pos][0])
    return Triangulation(points, cells)


def read_mesh(path) -> Triangulation:
    with open(path, encoding="ascii") as fh:
        return parse_mesh(fh.read())


def format_function(values) -> str:
    values = np.asarray(values, dtype=float)
    lines = [FUN_HEADER, f"nodes {len(values)}"]
    lines += [f"{i} {float(v)!r}" for i, v in enumerate(values)]
    return "\n".join(lines) + "\n"


def write_function(values, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_function(getattr(values, "values", values)))


def parse_function(text: str) -> np.ndarray:
    rows = _Lines(text)
    line, tok = rows.next("header")
    if tok != FUN_HEADER.split():
        raise MeshFormatError(f"bad header, expected {FUN_HEADER!r}", line)
    line, N = rows.keyword("nodes")
    out = np.empty(N)
    for i in range(N):
        line, tok = rows.next("value line")
        if len(tok) != 2 or _int(tok[0], line) != i:
            raise MeshFormatError(f"expected '{i} <value>'", line)
        out[i] = _float(tok[1], line)
    return out


def read_function(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        return parse_function(fh.read())


def write_triplets(matrix, path) -> None:
    """Coordinate-triplet dump of a sparse matrix (debug aid)."""
    coo = matrix.tocoo()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}{os.linesep}")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}{os.linesep}")
