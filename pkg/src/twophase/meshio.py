"""Plain-text mesh files.

Grammar (blank lines and ``#`` comments ignored)::

    vertices N
    x y                      (N lines)
    cells M
    k v_1 ... v_k            (M lines, counter-clockwise; k = 3 for CVFE)
    boundary_edges B
    a b D|N                  (B lines; unlisted boundary edges are Neumann)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMesh

__all__ = ["MeshText", "read_mesh", "write_mesh", "mesh_text_from"]


@dataclass
class MeshText:
    vertices: np.ndarray
    cells: list
    boundary: dict    # {(a, b) sorted: is_dirichlet}

    def dirichlet_map(self):
        return dict(self.boundary)


def _tokens(text):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_mesh(text):
    lines = list(_tokens(text))
    pos = 0

    def header(name):
        nonlocal pos
        if pos >= len(lines) or lines[pos][1][0] != name or len(lines[pos][1]) != 2:
            where = lines[pos][0] if pos < len(lines) else "end of file"
            raise InvalidMesh(f"line {where}: expected '{name} <count>'")
        count = int(lines[pos][1][1])
        pos += 1
        if pos + count > len(lines):
            raise InvalidMesh(f"section '{name}' truncated")
        block = lines[pos:pos + count]
        pos += count
        return block

    try:
        verts = np.array([[float(t) for t in tok] for _, tok in header("vertices")], dtype=float)
        cells = []
        for lineno, tok in header("cells"):
            k = int(tok[0])
            if len(tok) != k + 1 or k < 3:
                raise InvalidMesh(f"line {lineno}: malformed cell")
            cells.append([int(t) for t in tok[1:]])
        boundary = {}
        for lineno, tok in header("boundary_edges"):
            if len(tok) != 3 or tok[2] not in ("D", "N"):
                raise InvalidMesh(f"line {lineno}: expected 'a b D|N'")
            a, b = int(tok[0]), int(tok[1])
            boundary[(min(a, b), max(a, b))] = tok[2] == "D"
    except ValueError as err:
        raise InvalidMesh(f"malformed number: {err}") from err
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise InvalidMesh("vertices need two coordinates")
    if pos != len(lines):
        raise InvalidMesh(f"line {lines[pos][0]}: trailing content")
    nv = len(verts)
    if any(v < 0 or v >= nv for c in cells for v in c):
        raise InvalidMesh("cell refers to a missing vertex")
    return MeshText(verts, cells, boundary)


def read_mesh(path):
    with open(path, encoding="utf-8") as fh:
        return parse_mesh(fh.read())


def format_mesh(mesh_text):
    out = [f"vertices {len(mesh_text.vertices)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh_text.vertices]
    out.append(f"cells {len(mesh_text.cells)}")
    out += [" ".join(map(str, [len(c), *c])) for c in mesh_text.cells]
    out.append(f"boundary_edges {len(mesh_text.boundary)}")
    out += [f"{a} {b} {'D' if d else 'N'}" for (a, b), d in sorted(mesh_text.boundary.items())]
    return "\n".join(out) + "\n"


def write_mesh(path, mesh_text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_mesh(mesh_text))


def mesh_text_from(mesh):
    """:class:`MeshText` of a built DDFV or CVFE mesh."""
    if hasattr(mesh, "triangles"):
        cells = [list(map(int, t)) for t in mesh.triangles]
        bedges = mesh.boundary_edges
        flags = list(mesh.boundary_dirichlet)
    else:
        cells = [list(map(int, c)) for c in mesh.cells]
        bedges = mesh.bedge_vertices
        flags = list(mesh.node_dirichlet[mesh.n_cells:mesh.n_cells + mesh.n_bedges])
    boundary = {(int(min(a, b)), int(max(a, b))): bool(f) for (a, b), f in zip(bedges, flags)}
    return MeshText(np.asarray(mesh.vertices, dtype=float), cells, boundary)
