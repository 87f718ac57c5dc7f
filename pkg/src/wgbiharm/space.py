"""Degree-of-freedom layout and L2 projections.

A weak function carries four kinds of coefficients: an interior polynomial
per cell, a trace polynomial per codim-2 edge, a trace polynomial per face,
and a normal-derivative polynomial per face.  Normal-derivative unknowns are
stored along the fixed global face normal; cells apply their orientation
sign where the outward normal enters a formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PolytopalMesh, QuadRule, quad_cell, quad_edge, quad_face
from .polyalg import MultiPoly, ScaledMonomialBasis, poly_space_dim

__all__ = [
    "DofLayout",
    "WeakFunction",
    "EntityBasis",
    "cell_basis",
    "face_basis",
    "edge_basis",
    "l2_project",
    "project_cell",
    "project_cell_low",
    "project_face_f",
    "project_face_n",
    "project_edge",
    "interpolate",
]


class EntityBasis:
    """Scaled monomial basis on a mesh entity, evaluated at physical points."""

    def __init__(self, smb: ScaledMonomialBasis, tolocal=None):
        self.smb = smb
        self.tolocal = tolocal
        self.size = smb.size
        self.degree = smb.degree

    def _loc(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts if self.tolocal is None else self.tolocal(pts)

    def eval(self, points) -> np.ndarray:
        if self.smb.domain_dim == 0:
            pts = np.atleast_2d(np.asarray(points, dtype=float))
            return np.ones((pts.shape[0], 1))
        return self.smb.eval(self._loc(points))

    def eval_diff(self, points, orders) -> np.ndarray:
        """Derivative wrt the entity's own (orthonormal) coordinates."""
        return self.smb.eval_diff(self._loc(points), tuple(orders))


def cell_basis(mesh: PolytopalMesh, cid: int, degree: int) -> EntityBasis:
    c = mesh.cells[cid]
    return EntityBasis(ScaledMonomialBasis(mesh.dim, degree, c.centroid, c.h))


def face_basis(mesh: PolytopalMesh, fid: int, degree: int) -> EntityBasis:
    f = mesh.faces[fid]
    smb = ScaledMonomialBasis(mesh.dim - 1, degree,
                              np.zeros(mesh.dim - 1), f.diameter)
    return EntityBasis(smb, tolocal=f.local_coords)


def edge_basis(mesh: PolytopalMesh, eid: int, degree: int) -> EntityBasis:
    if mesh.dim == 2:
        return EntityBasis(ScaledMonomialBasis(0, degree, [], 1.0))
    mid = mesh.edge_midpoint(eid)
    direction = mesh.edge_direction(eid)
    length = mesh.edge_length(eid)
    smb = ScaledMonomialBasis(1, degree, [0.0], length)

    def tolocal(pts):
        return (np.atleast_2d(pts) - mid) @ direction[:, None]

    return EntityBasis(smb, tolocal=tolocal)


@dataclass
class DofLayout:
    """Global numbering: all cell-interior blocks first, then edge blocks,
    then per-face trace blocks, then per-face normal blocks."""

    mesh: PolytopalMesh
    k: int

    def __post_init__(self):
        if self.k < 3:
            raise ValueError("k must be >= 3")
        mesh, k = self.mesh, self.k
        d = mesh.dim
        self.n0 = poly_space_dim(d, k)
        self.nbe = poly_space_dim(d - 2, k - 2)
        self.nbf = poly_space_dim(d - 1, k - 3)
        self.nn = poly_space_dim(d - 1, k - 2)
        nc, ne, nf = len(mesh.cells), len(mesh.edges), len(mesh.faces)
        self.interior_count = nc * self.n0
        self.edge_base = self.interior_count
        self.face_bf_base = self.edge_base + ne * self.nbe
        self.face_n_base = self.face_bf_base + nf * self.nbf
        self.total = self.face_n_base + nf * self.nn

        mask = np.zeros(self.total, dtype=bool)
        for eid in range(ne):
            if mesh.edge_boundary[eid]:
                mask[self.edge_dofs(eid)] = True
        for fid, f in enumerate(mesh.faces):
            if f.boundary:
                mask[self.face_bf_dofs(fid)] = True
                mask[self.face_n_dofs(fid)] = True
        self.boundary_mask = mask

    def cell_dofs(self, cid: int) -> np.ndarray:
        return np.arange(cid * self.n0, (cid + 1) * self.n0)

    def edge_dofs(self, eid: int) -> np.ndarray:
        base = self.edge_base + eid * self.nbe
        return np.arange(base, base + self.nbe)

    def face_bf_dofs(self, fid: int) -> np.ndarray:
        base = self.face_bf_base + fid * self.nbf
        return np.arange(base, base + self.nbf)

    def face_n_dofs(self, fid: int) -> np.ndarray:
        base = self.face_n_base + fid * self.nn
        return np.arange(base, base + self.nn)

    def skeleton_dofs(self) -> np.ndarray:
        return np.arange(self.interior_count, self.total)


@dataclass
class WeakFunction:
    layout: DofLayout
    coeffs: np.ndarray

    @classmethod
    def zeros(cls, layout: DofLayout) -> "WeakFunction":
        return cls(layout, np.zeros(layout.total))

    def interior(self, cid: int) -> np.ndarray:
        return self.coeffs[self.layout.cell_dofs(cid)]


# ---------------------------------------------------------------------------
# projections

def _values(f, points, extra=None):
    if isinstance(f, MultiPoly):
        return f(points)
    return f(points) if extra is None else f(points, extra)


def l2_project(basis: EntityBasis, rule: QuadRule, values: np.ndarray) -> np.ndarray:
    """Coefficients of the L2-orthogonal projection onto `basis`."""
    B = basis.eval(rule.points)
    W = rule.weights
    gram = B.T @ (B * W[:, None])
    rhs = B.T @ (W * values)
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular Gram matrix (degenerate entity)") from exc


def _quad_degree(basis_degree: int, data_degree: int | None, k: int) -> int:
    if data_degree is None:
        data_degree = k
    return max(2 * basis_degree, basis_degree + data_degree)


def project_cell(mesh, cid, k, f, data_degree=None) -> np.ndarray:
    basis = cell_basis(mesh, cid, k)
    rule = quad_cell(mesh, cid, _quad_degree(k, data_degree, k) + 2)
    return l2_project(basis, rule, _values(f, rule.points))


def project_cell_low(mesh, cid, k, f, data_degree=None) -> np.ndarray:
    basis = cell_basis(mesh, cid, k - 2)
    rule = quad_cell(mesh, cid, _quad_degree(k - 2, data_degree, k) + 2)
    return l2_project(basis, rule, _values(f, rule.points))


def project_face_f(mesh, fid, k, f, data_degree=None) -> np.ndarray:
    basis = face_basis(mesh, fid, k - 3)
    rule = quad_face(mesh, fid, _quad_degree(k - 3, data_degree, k))
    return l2_project(basis, rule, _values(f, rule.points))


def project_face_n(mesh, fid, k, f, data_degree=None) -> np.ndarray:
    basis = face_basis(mesh, fid, k - 2)
    rule = quad_face(mesh, fid, _quad_degree(k - 2, data_degree, k))
    return l2_project(basis, rule, _values(f, rule.points))


def project_edge(mesh, eid, k, f, data_degree=None) -> np.ndarray:
    if mesh.dim == 2:
        # point entity: the projection is evaluation
        pt = mesh.vertices[mesh.edges[eid][0]]
        return np.atleast_1d(np.asarray(_values(f, pt[None, :])))
    basis = edge_basis(mesh, eid, k - 2)
    rule = quad_edge(mesh, eid, _quad_degree(k - 2, data_degree, k))
    return l2_project(basis, rule, _values(f, rule.points))


def interpolate(layout: DofLayout, u: MultiPoly) -> WeakFunction:
    """Componentwise projection of a smooth function into the weak space."""
    mesh, k = layout.mesh, layout.k
    grad = u.grad()
    deg = max(u.degree, 0)
    w = WeakFunction.zeros(layout)
    for cid in range(len(mesh.cells)):
        w.coeffs[layout.cell_dofs(cid)] = project_cell(mesh, cid, k, u, deg)
    for eid in range(len(mesh.edges)):
        w.coeffs[layout.edge_dofs(eid)] = project_edge(mesh, eid, k, u, deg)
    for fid, face in enumerate(mesh.faces):
        w.coeffs[layout.face_bf_dofs(fid)] = project_face_f(mesh, fid, k, u, deg)

        def dudn(pts, n=face.normal):
            out = np.zeros(np.atleast_2d(pts).shape[0])
            for i in range(mesh.dim):
                if n[i]:
                    out += n[i] * grad[i](pts)
            return out

        w.coeffs[layout.face_n_dofs(fid)] = project_face_n(
            mesh, fid, k, dudn, max(deg - 1, 0))
    return w
