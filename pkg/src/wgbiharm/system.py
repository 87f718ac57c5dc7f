"""Global assembly and linear solves.

The bilinear form couples interior unknowns only within their own cell, so
the interior block of the global matrix is block diagonal and static
condensation reduces the solve to the skeleton unknowns cell by cell.
Assembly is sequential in cell order, which makes the matrices run-to-run
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import PolytopalMesh
from .polyalg import MultiPoly
from .space import (DofLayout, WeakFunction, project_edge, project_face_f,
                    project_face_n)
from .weakops import CellOps, FaceOps

__all__ = ["Discretization", "SpdSystem", "solve_full", "solve_schur", "dump_system"]


class Discretization:
    """Mesh + degree bundle: face maps, per-cell local operators, scatter."""

    def __init__(self, mesh: PolytopalMesh, k: int):
        self.mesh = mesh
        self.layout = DofLayout(mesh, k)
        self.face_ops = {fid: FaceOps(mesh, fid, k)
                         for fid in range(len(mesh.faces))}
        self.cell_ops = [CellOps(mesh, self.layout, cid, self.face_ops)
                         for cid in range(len(mesh.cells))]

    def assemble_matrix(self, which: str = "full") -> sp.csr_matrix:
        """Assemble `full` (stiffness + stabilizer), `stiffness`, or
        `stabilizer` over the complete unknown vector."""
        rows, cols, vals = [], [], []
        for co in self.cell_ops:
            if which == "full":
                A = co.local_matrix
            elif which == "stiffness":
                A = co.stiffness
            elif which == "stabilizer":
                A = co.stabilizer
            else:
                raise ValueError(which)
            g = co.global_dofs
            rows.append(np.repeat(g, len(g)))
            cols.append(np.tile(g, len(g)))
            vals.append(A.ravel())
        n = self.layout.total
        M = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        return M.tocsr()

    def assemble_load(self, g, g_degree: int) -> np.ndarray:
        b = np.zeros(self.layout.total)
        for co in self.cell_ops:
            b[co.global_dofs] += co.load_vector(g, g_degree)
        return b

    def energy_product(self, v: np.ndarray, w: np.ndarray) -> float:
        """a_s(v, w) evaluated cellwise (no global matrix needed)."""
        out = 0.0
        for co in self.cell_ops:
            g = co.global_dofs
            out += float(v[g] @ (co.local_matrix @ w[g]))
        return out

    def energy_sum_of_squares(self, v: np.ndarray) -> float:
        """a_s(v, v) accumulated as a sum of squared residuals.

        Exactly nonnegative; on functions the form annihilates (interpolants
        of affine functions) it vanishes to the square of round-off instead
        of the round-off of the matrix quadratic form.
        """
        return sum(co.energy_sum_of_squares(v[co.global_dofs])
                   for co in self.cell_ops)


@dataclass
class SpdSystem:
    disc: Discretization
    matrix: sp.csr_matrix            # over all unknowns, before elimination
    rhs: np.ndarray
    constrained: np.ndarray          # bool mask
    constrained_values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.constrained_values is None:
            self.constrained_values = np.zeros(self.disc.layout.total)


def build_system(disc: Discretization, g, g_degree: int,
                 dirichlet=None, neumann=None,
                 dirichlet_degree: int | None = None) -> SpdSystem:
    """Assemble the scheme and fix boundary unknowns to projected data.

    `dirichlet(points)` supplies the trace value, `neumann(points, normal)`
    the outward normal derivative; omitted data defaults to zero.
    """
    layout = disc.layout
    mesh = disc.mesh
    A = disc.assemble_matrix("full")
    b = disc.assemble_load(g, g_degree)
    values = np.zeros(layout.total)
    if dirichlet is not None:
        dd = dirichlet_degree
        for eid in range(len(mesh.edges)):
            if mesh.edge_boundary[eid]:
                values[layout.edge_dofs(eid)] = project_edge(
                    mesh, eid, layout.k, dirichlet, dd)
        for fid, face in enumerate(mesh.faces):
            if face.boundary:
                values[layout.face_bf_dofs(fid)] = project_face_f(
                    mesh, fid, layout.k, dirichlet, dd)
    if neumann is not None:
        for fid, face in enumerate(mesh.faces):
            if face.boundary:
                # boundary faces were created by their only cell, so the
                # stored normal is outward from the domain
                values[layout.face_n_dofs(fid)] = project_face_n(
                    mesh, fid, layout.k,
                    lambda pts, n=face.normal: neumann(pts, n),
                    dirichlet_degree)
    return SpdSystem(disc, A, b, layout.boundary_mask.copy(), values)


def _backward_error(A, x, b) -> float:
    scale = spla.norm(A, 1) * np.linalg.norm(x) + np.linalg.norm(b)
    if scale == 0.0:
        return 0.0
    return np.linalg.norm(A @ x - b) / scale


def _check_residual(A, x, b, tol, what):
    r = _backward_error(A, x, b)
    if r > tol:
        raise RuntimeError(f"{what}: relative residual {r:.3e} exceeds {tol:.1e}")


def _reduced_solve(A: sp.csr_matrix, b: np.ndarray, free: np.ndarray,
                   values: np.ndarray, tol: float) -> np.ndarray:
    x = values.copy()
    Aff = A[free][:, free].tocsc()
    bf = b[free] - A[free] @ values
    try:
        lu = spla.splu(Aff)
    except RuntimeError as exc:
        raise RuntimeError("factorization breakdown: system not SPD "
                           "(assembly bug?)") from exc
    xf = lu.solve(bf)
    for _ in range(5):
        if _backward_error(Aff, xf, bf) <= tol:
            break
        xf = xf + lu.solve(bf - Aff @ xf)
    _check_residual(Aff, xf, bf, tol, "linear solve")
    x[free] = xf
    return x


def solve_full(system: SpdSystem, tol: float = 1e-12) -> WeakFunction:
    """Direct solve of the complete system after boundary elimination."""
    free = ~system.constrained
    x = _reduced_solve(system.matrix, system.rhs, free,
                       system.constrained_values, tol)
    return WeakFunction(system.disc.layout, x)


def solve_schur(system: SpdSystem, tol: float = 1e-12) -> WeakFunction:
    """Cellwise elimination of interior unknowns, skeleton solve, and
    back-substitution; algebraically equivalent to the full solve."""
    disc = system.disc
    layout = disc.layout
    n0 = layout.n0
    nsk = layout.total - layout.interior_count
    base = layout.interior_count

    rows, cols, vals = [], [], []
    bs = np.zeros(nsk)
    interior_factor = []
    for co in disc.cell_ops:
        A = co.local_matrix
        gi = co.global_dofs[:n0]
        gs = co.global_dofs[n0:] - base
        Aii = A[:n0, :n0]
        Ais = A[:n0, n0:]
        Ass = A[n0:, n0:]
        try:
            cho = sla.cho_factor(Aii, lower=True)
        except sla.LinAlgError as exc:
            raise RuntimeError("interior block not SPD (assembly bug?)") from exc
        X = sla.cho_solve(cho, Ais)
        Sc = Ass - Ais.T @ X
        bi = system.rhs[gi]
        bs[gs] += -Ais.T @ sla.cho_solve(cho, bi)
        rows.append(np.repeat(gs, len(gs)))
        cols.append(np.tile(gs, len(gs)))
        vals.append(Sc.ravel())
        interior_factor.append((cho, Ais, gi, gs, bi))
    bs += system.rhs[base:]
    K = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nsk, nsk)).tocsr()

    cons = system.constrained[base:]
    x = np.zeros(layout.total)
    xs = _reduced_solve(K, bs, ~cons, system.constrained_values[base:], tol)
    x[base:] = xs
    for cho, Ais, gi, gs, bi in interior_factor:
        x[gi] = sla.cho_solve(cho, bi - Ais @ xs[gs])
    return WeakFunction(layout, x)


def dump_system(system: SpdSystem, path: str) -> None:
    """Triplet-list text dump of the assembled matrix and right-hand side."""
    M = system.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"wgsystem 1\nsize {M.shape[0]} nnz {M.nnz}\n")
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{i} {j} {v:.17g}\n")
        fh.write("rhs\n")
        for v in system.rhs:
            fh.write(f"{v:.17g}\n")
