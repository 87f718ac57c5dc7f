"""Polytopal mesh model, grid generators, and quadrature.

Entities follow the codimension convention: faces are codim-1 (segments in
2D, planar polygons in 3D) and edges are codim-2 (vertices in 2D, straight
segments in 3D).  Each face stores one fixed global unit normal; a cell
reaches its outward normal through the per-face orientation sign.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadRule",
    "Face",
    "Cell",
    "PolytopalMesh",
    "gen_square_grid",
    "gen_triangle_grid",
    "gen_polygon_grid",
    "gen_cube_grid",
    "quad_cell",
    "quad_face",
    "quad_edge",
    "gauss_segment",
    "polygon_rule",
    "write_mesh",
    "read_mesh",
]


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray   # (n, d)
    weights: np.ndarray  # (n,)


@dataclass
class Face:
    vertices: tuple[int, ...]          # 2D: (a, b); 3D: loop, ccw wrt normal
    normal: np.ndarray                 # fixed global unit normal N_F
    tangents: np.ndarray               # (1, d) in 2D, (2, d) in 3D; frame with normal
    origin: np.ndarray                 # area centroid (frame origin)
    measure: float
    diameter: float
    boundary_edges: tuple[tuple[int, int], ...]  # (edge id, traversal sign)
    cells: list[tuple[int, int]] = field(default_factory=list)  # (cell id, sign)
    boundary: bool = False

    def local_coords(self, points) -> np.ndarray:
        """In-plane coordinates of points relative to the face frame."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - self.origin) @ self.tangents.T


@dataclass
class Cell:
    faces: tuple[int, ...]
    signs: tuple[int, ...]
    vertices: tuple[int, ...]
    edges: tuple[int, ...]
    centroid: np.ndarray
    h: float      # mesh-size parameter: grid spacing for generated grids,
                  # cell diameter for meshes built from raw connectivity


@dataclass
class PolytopalMesh:
    dim: int
    vertices: np.ndarray                 # (nv, dim)
    edges: list[tuple[int, ...]]         # 2D: (v,); 3D: (v0, v1), v0 < v1
    faces: list[Face]
    cells: list[Cell]
    edge_boundary: np.ndarray = field(default=None)

    @property
    def h(self) -> float:
        return max(c.h for c in self.cells)

    def edge_length(self, eid: int) -> float:
        e = self.edges[eid]
        if len(e) == 1:
            return 0.0
        return float(np.linalg.norm(self.vertices[e[1]] - self.vertices[e[0]]))

    def edge_midpoint(self, eid: int) -> np.ndarray:
        e = self.edges[eid]
        return self.vertices[list(e)].mean(axis=0)

    def edge_direction(self, eid: int) -> np.ndarray:
        e = self.edges[eid]
        d = self.vertices[e[1]] - self.vertices[e[0]]
        return d / np.linalg.norm(d)


# ---------------------------------------------------------------------------
# quadrature

@functools.lru_cache(maxsize=None)
def _gauss_1d(degree: int) -> tuple[np.ndarray, np.ndarray]:
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_segment(p0, p1, degree: int) -> QuadRule:
    """Gauss rule on the segment p0 -> p1, exact for 1D degree `degree`."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    x, w = _gauss_1d(degree)
    t = 0.5 * (x + 1.0)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    length = np.linalg.norm(p1 - p0)
    return QuadRule(pts, 0.5 * length * w)


@functools.lru_cache(maxsize=None)
def _duffy_reference(degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Duffy transform of a tensor Gauss rule on the reference triangle
    # (0,0)-(1,0)-(0,1); the collapse raises the per-variable degree by
    # one, hence degree + 1 on each axis.
    x, w = _gauss_1d(degree + 1)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    r = (U * (1.0 - V)).ravel()
    s = V.ravel()
    wts = (WU * WV * (1.0 - V)).ravel()
    for a in (r, s, wts):
        a.flags.writeable = False
    return r, s, wts


def _triangle_rule(v0, v1, v2, degree: int) -> QuadRule:
    r, s, wts = _duffy_reference(degree)
    v0 = np.asarray(v0, dtype=float)
    e1 = np.asarray(v1, dtype=float) - v0
    e2 = np.asarray(v2, dtype=float) - v0
    pts = v0[None, :] + r[:, None] * e1[None, :] + s[:, None] * e2[None, :]
    area2 = abs(e1[0] * e2[1] - e1[1] * e2[0]) if len(e1) == 2 else \
        np.linalg.norm(np.cross(e1, e2))
    return QuadRule(pts, wts * area2)


def polygon_rule(verts: np.ndarray, degree: int) -> QuadRule:
    """Rule on a (convex or star-shaped) polygon via centroid fan."""
    verts = np.asarray(verts, dtype=float)
    c = _polygon_centroid(verts)
    pts, wts = [], []
    n = len(verts)
    for i in range(n):
        rule = _triangle_rule(c, verts[i], verts[(i + 1) % n], degree)
        pts.append(rule.points)
        wts.append(rule.weights)
    return QuadRule(np.vstack(pts), np.concatenate(wts))


def _polygon_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _polygon_centroid(verts: np.ndarray) -> np.ndarray:
    x, y = verts[:, 0], verts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def quad_cell(mesh: PolytopalMesh, cid: int, degree: int) -> QuadRule:
    """Volume rule on a cell, exact to `degree`."""
    cell = mesh.cells[cid]
    verts = mesh.vertices[list(cell.vertices)]
    if mesh.dim == 2:
        loop = mesh.vertices[list(cell.vertices)]
        if abs(_polygon_area(loop)) < 1e-14:
            raise ValueError(f"degenerate cell {cid}")
        return polygon_rule(loop, degree)
    # 3D cells in the generated grids are axis-aligned boxes
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    if np.any(hi - lo < 1e-14):
        raise ValueError(f"degenerate cell {cid}")
    x, w = _gauss_1d(degree)
    axes = [lo[i] + 0.5 * (x + 1.0) * (hi[i] - lo[i]) for i in range(3)]
    wts = [0.5 * (hi[i] - lo[i]) * w for i in range(3)]
    P = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=-1)
    W = np.multiply.outer(np.multiply.outer(wts[0], wts[1]), wts[2]).ravel()
    return QuadRule(P, W)


def quad_face(mesh: PolytopalMesh, fid: int, degree: int) -> QuadRule:
    """Surface rule on a face, exact to `degree` for in-plane polynomials."""
    face = mesh.faces[fid]
    if mesh.dim == 2:
        a, b = face.vertices
        return gauss_segment(mesh.vertices[a], mesh.vertices[b], degree)
    loc = face.local_coords(mesh.vertices[list(face.vertices)])
    rule = polygon_rule(loc, degree)
    pts = face.origin[None, :] + rule.points @ face.tangents
    return QuadRule(pts, rule.weights)


def quad_edge(mesh: PolytopalMesh, eid: int, degree: int) -> QuadRule:
    """Rule on a codim-2 edge; in 2D a vertex carries the counting measure."""
    e = mesh.edges[eid]
    if len(e) == 1:
        return QuadRule(mesh.vertices[[e[0]]], np.array([1.0]))
    return gauss_segment(mesh.vertices[e[0]], mesh.vertices[e[1]], degree)


# ---------------------------------------------------------------------------
# mesh builders

def _build_mesh_2d(vertices: np.ndarray, loops: list[list[int]]) -> PolytopalMesh:
    vertices = np.asarray(vertices, dtype=float)
    nv = len(vertices)
    edges = [(v,) for v in range(nv)]

    face_index: dict[tuple[int, int], int] = {}
    faces: list[Face] = []
    cells: list[Cell] = []

    for cid, loop in enumerate(loops):
        if _polygon_area(vertices[loop]) < 0:
            raise ValueError("cell loops must be counterclockwise")
        face_ids, signs = [], []
        for i in range(len(loop)):
            a, b = loop[i], loop[(i + 1) % len(loop)]
            key = (min(a, b), max(a, b))
            fid = face_index.get(key)
            if fid is None:
                fid = len(faces)
                face_index[key] = fid
                pa, pb = vertices[a], vertices[b]
                length = float(np.linalg.norm(pb - pa))
                t = (pb - pa) / length
                # rotate -90deg: outward for the ccw-traversing cell
                normal = np.array([t[1], -t[0]])
                faces.append(Face(
                    vertices=(a, b), normal=normal, tangents=t[None, :],
                    origin=0.5 * (pa + pb), measure=length, diameter=length,
                    boundary_edges=((a, -1), (b, +1))))
                sign = +1
            else:
                sign = -1
            faces[fid].cells.append((cid, sign))
            face_ids.append(fid)
            signs.append(sign)
        h = _diameter(vertices[loop])
        cells.append(Cell(
            faces=tuple(face_ids), signs=tuple(signs), vertices=tuple(loop),
            edges=tuple(sorted(set(loop))),
            centroid=_polygon_centroid(vertices[loop]), h=h))

    edge_boundary = np.zeros(nv, dtype=bool)
    for f in faces:
        f.boundary = len(f.cells) == 1
        if f.boundary:
            edge_boundary[list(f.vertices)] = True
    return PolytopalMesh(2, vertices, edges, faces, cells, edge_boundary)


def _diameter(pts: np.ndarray) -> float:
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d * d).sum(axis=-1)).max())


def _newell_normal(pts: np.ndarray) -> np.ndarray:
    n = np.zeros(3)
    for i in range(len(pts)):
        p, q = pts[i], pts[(i + 1) % len(pts)]
        n += np.cross(p, q)
    return n / np.linalg.norm(n)


def _build_mesh_3d(vertices: np.ndarray, cell_face_loops: list[list[list[int]]]) -> PolytopalMesh:
    vertices = np.asarray(vertices, dtype=float)
    face_index: dict[tuple[int, ...], int] = {}
    edge_index: dict[tuple[int, int], int] = {}
    edges: list[tuple[int, ...]] = []
    faces: list[Face] = []
    cells: list[Cell] = []

    def edge_id(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        eid = edge_index.get(key)
        if eid is None:
            eid = len(edges)
            edge_index[key] = eid
            edges.append(key)
        return eid

    for cid, face_loops in enumerate(cell_face_loops):
        face_ids, signs = [], []
        for loop in face_loops:
            key = tuple(sorted(loop))
            fid = face_index.get(key)
            if fid is None:
                fid = len(faces)
                face_index[key] = fid
                pts = vertices[loop]
                normal = _newell_normal(pts)
                bedges = []
                for i in range(len(loop)):
                    a, b = loop[i], loop[(i + 1) % len(loop)]
                    eid = edge_id(a, b)
                    sign = +1 if edges[eid] == (a, b) else -1
                    bedges.append((eid, sign))
                t1 = pts[1] - pts[0]
                t1 = t1 / np.linalg.norm(t1)
                t2 = np.cross(normal, t1)
                origin0 = pts.mean(axis=0)
                loc = (pts - origin0) @ np.stack([t1, t2]).T
                area = abs(_polygon_area(loc))
                origin = origin0 + _polygon_centroid(loc) @ np.stack([t1, t2])
                faces.append(Face(
                    vertices=tuple(loop), normal=normal,
                    tangents=np.stack([t1, t2]), origin=origin,
                    measure=area, diameter=_diameter(pts),
                    boundary_edges=tuple(bedges)))
                sign = +1
            else:
                sign = -1
            faces[fid].cells.append((cid, sign))
            face_ids.append(fid)
            signs.append(sign)
        vset = sorted({v for loop in face_loops for v in loop})
        eset = sorted({e for fid in face_ids for e, _ in faces[fid].boundary_edges})
        pts = vertices[vset]
        cells.append(Cell(
            faces=tuple(face_ids), signs=tuple(signs), vertices=tuple(vset),
            edges=tuple(eset), centroid=pts.mean(axis=0), h=_diameter(pts)))

    edge_boundary = np.zeros(len(edges), dtype=bool)
    for f in faces:
        f.boundary = len(f.cells) == 1
        if f.boundary:
            for eid, _ in f.boundary_edges:
                edge_boundary[eid] = True
    return PolytopalMesh(3, vertices, edges, faces, cells, edge_boundary)


# ---------------------------------------------------------------------------
# grid families on the unit box

def _set_mesh_size(mesh: PolytopalMesh, h: float) -> PolytopalMesh:
    # the penalty weights of the discretization are calibrated to the grid
    # spacing, not the cell diameter
    for c in mesh.cells:
        c.h = h
    return mesh


def gen_square_grid(level: int) -> PolytopalMesh:
    """Uniform n x n squares on (0,1)^2 with n = 2^(level-1)."""
    if level < 1:
        raise ValueError("level must be >= 1")
    n = 2 ** (level - 1)
    xs = np.linspace(0.0, 1.0, n + 1)
    vid = lambda i, j: i * (n + 1) + j
    verts = np.array([[xs[i], xs[j]] for i in range(n + 1) for j in range(n + 1)])
    loops = []
    for i in range(n):
        for j in range(n):
            loops.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
    return _set_mesh_size(_build_mesh_2d(verts, loops), 1.0 / n)


def gen_triangle_grid(level: int) -> PolytopalMesh:
    """Each square split by its NW-SE diagonal into two triangles."""
    if level < 1:
        raise ValueError("level must be >= 1")
    n = 2 ** (level - 1)
    xs = np.linspace(0.0, 1.0, n + 1)
    vid = lambda i, j: i * (n + 1) + j
    verts = np.array([[xs[i], xs[j]] for i in range(n + 1) for j in range(n + 1)])
    loops = []
    for i in range(n):
        for j in range(n):
            # diagonal from (i, j+1) to (i+1, j)
            loops.append([vid(i, j), vid(i + 1, j), vid(i, j + 1)])
            loops.append([vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
    return _set_mesh_size(_build_mesh_2d(verts, loops), 1.0 / n)


# unit macro-cell pattern: one hexagon, two pentagons, two quadrilaterals
_POLY_HEX = [(0.3, 0.2), (0.7, 0.2), (0.8, 0.5), (0.7, 0.8), (0.3, 0.8), (0.2, 0.5)]
_POLY_CELLS = [
    _POLY_HEX,
    [(0.0, 0.0), (1.0, 0.0), (0.7, 0.2), (0.3, 0.2)],                  # bottom quad
    [(1.0, 1.0), (0.0, 1.0), (0.3, 0.8), (0.7, 0.8)],                  # top quad
    [(0.0, 0.0), (0.3, 0.2), (0.2, 0.5), (0.3, 0.8), (0.0, 1.0)],      # left pentagon
    [(1.0, 0.0), (1.0, 1.0), (0.7, 0.8), (0.8, 0.5), (0.7, 0.2)],      # right pentagon
]


def gen_polygon_grid(level: int) -> PolytopalMesh:
    """Quadrilateral-pentagon-hexagon pattern, five cells per macro square."""
    if level < 1:
        raise ValueError("level must be >= 1")
    n = 2 ** (level - 1)
    vkey: dict[tuple[int, int], int] = {}
    verts: list[list[float]] = []
    loops = []

    def vid(x: float, y: float) -> int:
        key = (round(x * n * 10), round(y * n * 10))
        i = vkey.get(key)
        if i is None:
            i = len(verts)
            vkey[key] = i
            verts.append([key[0] / (10.0 * n), key[1] / (10.0 * n)])
        return i

    for i in range(n):
        for j in range(n):
            for pattern in _POLY_CELLS:
                loops.append([vid((i + x) / n, (j + y) / n) for x, y in pattern])
    return _set_mesh_size(_build_mesh_2d(np.asarray(verts), loops), 1.0 / n)


def gen_cube_grid(level: int) -> PolytopalMesh:
    """Uniform n^3 axis-aligned cubes on (0,1)^3 with n = 2^(level-1)."""
    if level < 1:
        raise ValueError("level must be >= 1")
    n = 2 ** (level - 1)
    xs = np.linspace(0.0, 1.0, n + 1)
    m = n + 1
    vid = lambda i, j, k: (i * m + j) * m + k
    verts = np.array([[xs[i], xs[j], xs[k]]
                      for i in range(m) for j in range(m) for k in range(m)])
    cell_faces = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                v = lambda a, b, c: vid(i + a, j + b, k + c)
                cell_faces.append([
                    [v(0, 0, 0), v(0, 0, 1), v(0, 1, 1), v(0, 1, 0)],  # -x
                    [v(1, 0, 0), v(1, 1, 0), v(1, 1, 1), v(1, 0, 1)],  # +x
                    [v(0, 0, 0), v(1, 0, 0), v(1, 0, 1), v(0, 0, 1)],  # -y
                    [v(0, 1, 0), v(0, 1, 1), v(1, 1, 1), v(1, 1, 0)],  # +y
                    [v(0, 0, 0), v(0, 1, 0), v(1, 1, 0), v(1, 0, 0)],  # -z
                    [v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1)],  # +z
                ])
    return _set_mesh_size(_build_mesh_3d(verts, cell_faces), 1.0 / n)


# ---------------------------------------------------------------------------
# text format

def write_mesh(mesh: PolytopalMesh, path: str) -> None:
    """Line-oriented dump: header, vertices, edges, faces, cells."""
    with open(path, "w") as fh:
        fh.write("wgmesh 1\n")
        fh.write(f"dim {mesh.dim}\n")
        fh.write(f"vertices {len(mesh.vertices)}\n")
        for v in mesh.vertices:
            fh.write(" ".join(f"{x:.17g}" for x in v) + "\n")
        fh.write(f"edges {len(mesh.edges)}\n")
        for e in mesh.edges:
            fh.write(" ".join(str(v) for v in e) + "\n")
        fh.write(f"faces {len(mesh.faces)}\n")
        for f in mesh.faces:
            fh.write(str(len(f.vertices)) + " " +
                     " ".join(str(v) for v in f.vertices) + "\n")
        fh.write(f"cells {len(mesh.cells)}\n")
        for c in mesh.cells:
            rec = []
            for fid, s in zip(c.faces, c.signs):
                rec.append(str(fid))
                rec.append(str(s))
            fh.write(str(len(c.faces)) + " " + " ".join(rec) + "\n")
        fh.write("meshsize\n")
        for c in mesh.cells:
            fh.write(f"{c.h:.17g}\n")


def read_mesh(path: str) -> PolytopalMesh:
    with open(path) as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    if next(it) != "wgmesh" or next(it) != "1":
        raise ValueError("not a wgmesh file")
    if next(it) != "dim":
        raise ValueError("malformed header")
    dim = int(next(it))
    if next(it) != "vertices":
        raise ValueError("malformed header")
    nv = int(next(it))
    verts = np.array([[float(next(it)) for _ in range(dim)] for _ in range(nv)])
    if next(it) != "edges":
        raise ValueError("malformed header")
    ne = int(next(it))
    width = 1 if dim == 2 else 2
    _ = [[int(next(it)) for _ in range(width)] for _ in range(ne)]
    if next(it) != "faces":
        raise ValueError("malformed header")
    nf = int(next(it))
    face_loops = []
    for _ in range(nf):
        n = int(next(it))
        face_loops.append([int(next(it)) for _ in range(n)])
    if next(it) != "cells":
        raise ValueError("malformed header")
    nc = int(next(it))
    cell_faces = []
    for _ in range(nc):
        n = int(next(it))
        rec = [(int(next(it)), int(next(it))) for _ in range(n)]
        cell_faces.append(rec)
    sizes = None
    if next(it, None) == "meshsize":
        sizes = [float(next(it)) for _ in range(nc)]
    if dim == 2:
        loops = []
        for rec in cell_faces:
            loop = []
            for fid, s in rec:
                a, b = face_loops[fid]
                loop.append(a if s > 0 else b)
            loops.append(loop)
        mesh = _build_mesh_2d(verts, loops)
    else:
        cfl = [[face_loops[fid] if s > 0 else face_loops[fid][::-1]
                for fid, s in rec] for rec in cell_faces]
        mesh = _build_mesh_3d(verts, cfl)
    if sizes is not None:
        for c, h in zip(mesh.cells, sizes):
            c.h = h
    return mesh
