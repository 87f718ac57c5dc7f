"""Discrete weak differential operators.

Each face carries a tangential-derivative map: a small mass-matrix solve
that recovers a tangential polynomial field of degree k-2 from the face and
edge traces via a Stokes-type identity.  Each cell then carries, for every
index pair (i, j), a matrix sending its local unknowns to the coefficients
of the weak second-order partial in the degree k-2 cell basis.

The face computation is orientation-invariant, so it is done once per face
with the fixed global normal; only the cell-level formulas apply the
per-cell orientation sign.
"""

from __future__ import annotations

import numpy as np

from .geometry import PolytopalMesh, quad_cell, quad_edge, quad_face
from .space import DofLayout, cell_basis, edge_basis, face_basis

__all__ = ["FaceOps", "CellOps", "verify_ibp_identity"]


class FaceOps:
    """Per-face bases, quadrature, and the weak tangential derivative map.

    Trace columns are ordered [face trace block, edge blocks in boundary
    order]; `tmap[c]` sends them to the c-th tangential component in the
    face's degree k-2 basis.
    """

    def __init__(self, mesh: PolytopalMesh, fid: int, k: int):
        self.fid = fid
        self.face = face = mesh.faces[fid]
        self.k = k
        self.basis_n = face_basis(mesh, fid, k - 2)
        self.basis_bf = face_basis(mesh, fid, k - 3)
        self.nn = self.basis_n.size
        self.nbf = self.basis_bf.size
        self.rule = quad_face(mesh, fid, 2 * k)
        W = self.rule.weights
        self.Bn = self.basis_n.eval(self.rule.points)
        self.Bbf = self.basis_bf.eval(self.rule.points)
        self.mass_n = self.Bn.T @ (self.Bn * W[:, None])
        self.mass_bf = self.Bbf.T @ (self.Bbf * W[:, None])

        self.edge_ids = [eid for eid, _ in face.boundary_edges]
        nbe = 1 if mesh.dim == 2 else k - 1
        self.nbe = nbe
        self.ntr = self.nbf + nbe * len(self.edge_ids)
        ncomp = mesh.dim - 1
        rhs = np.zeros((ncomp, self.nn, self.ntr))

        if mesh.dim == 2:
            dBn = self.basis_n.eval_diff(self.rule.points, (1,))
            # -<v_bf, q'> over the face
            rhs[0, :, :self.nbf] = -dBn.T @ (self.Bbf * W[:, None])
            # signed endpoint values of q
            for i, (eid, sgn) in enumerate(face.boundary_edges):
                pt = mesh.vertices[mesh.edges[eid][0]][None, :]
                rhs[0, :, self.nbf + i] = sgn * self.basis_n.eval(pt)[0]
        else:
            d1 = self.basis_n.eval_diff(self.rule.points, (1, 0))
            d2 = self.basis_n.eval_diff(self.rule.points, (0, 1))
            rhs[0, :, :self.nbf] = -d1.T @ (self.Bbf * W[:, None])
            rhs[1, :, :self.nbf] = -d2.T @ (self.Bbf * W[:, None])
            t1, t2 = face.tangents
            col = self.nbf
            for eid, sgn in face.boundary_edges:
                tau = sgn * mesh.edge_direction(eid)
                erule = quad_edge(mesh, eid, 2 * k)
                Eb = edge_basis(mesh, eid, k - 2).eval(erule.points)
                Pn = self.basis_n.eval(erule.points)
                block = Pn.T @ (Eb * erule.weights[:, None])
                rhs[0, :, col:col + nbe] = block * float(tau @ t2)
                rhs[1, :, col:col + nbe] = -block * float(tau @ t1)
                col += nbe

        self.tmap = np.linalg.solve(self.mass_n[None, :, :], rhs)

    def weak_gradient_map(self, dim: int) -> np.ndarray:
        """Map [v_n block, trace blocks] -> Cartesian components of the weak
        gradient, each in the face's degree k-2 basis.

        Returns an array of shape (dim, nn, nn + ntr).
        """
        out = np.zeros((dim, self.nn, self.nn + self.ntr))
        eye = np.eye(self.nn)
        for i in range(dim):
            out[i, :, :self.nn] = self.face.normal[i] * eye
            for c in range(dim - 1):
                out[i, :, self.nn:] += self.face.tangents[c][i] * self.tmap[c]
        return out


class CellOps:
    """Local weak second-order partials, stiffness, and stabilizer.

    Local unknown order: interior block, then per face (cell order) the face
    trace block and normal block, then per cell edge the edge block.
    """

    def __init__(self, mesh: PolytopalMesh, layout: DofLayout, cid: int,
                 face_ops: dict[int, FaceOps]):
        self.cid = cid
        self.mesh = mesh
        self.layout = layout
        cell = mesh.cells[cid]
        k, d = layout.k, mesh.dim
        n0, nbf, nn, nbe = layout.n0, layout.nbf, layout.nn, layout.nbe

        # local dof bookkeeping
        self.off_bf, self.off_n = {}, {}
        pos = n0
        gmap = [layout.cell_dofs(cid)]
        for f_local, fid in enumerate(cell.faces):
            self.off_bf[fid] = pos
            gmap.append(layout.face_bf_dofs(fid))
            pos += nbf
            self.off_n[fid] = pos
            gmap.append(layout.face_n_dofs(fid))
            pos += nn
        self.off_be = {}
        for eid in cell.edges:
            self.off_be[eid] = pos
            gmap.append(layout.edge_dofs(eid))
            pos += nbe
        self.nloc = pos
        self.global_dofs = np.concatenate(gmap)

        self.basis_k = cell_basis(mesh, cid, k)
        self.basis_low = cell_basis(mesh, cid, k - 2)
        crule = quad_cell(mesh, cid, 2 * k + 2)
        Wc = crule.weights
        Bk = self.basis_k.eval(crule.points)
        Blow = self.basis_low.eval(crule.points)
        self.mass_low = Blow.T @ (Blow * Wc[:, None])
        self.cell_rule = crule
        self.Bk_cell = Bk

        m = self.basis_low.size
        # second derivatives of the low basis at cell points
        d2low = {}
        for i in range(d):
            for j in range(i, d):
                o = [0] * d
                o[i] += 1
                o[j] += 1
                d2low[(i, j)] = self.basis_low.eval_diff(crule.points, tuple(o))
                d2low[(j, i)] = d2low[(i, j)]

        B = np.zeros((d, d, m, self.nloc))
        for i in range(d):
            for j in range(d):
                # (v_0, d2_ji phi)_T
                B[i, j, :, :n0] = d2low[(j, i)].T @ (Bk * Wc[:, None])

        # face contributions
        ident = np.eye(nn)
        for fid, sigma in zip(cell.faces, cell.signs):
            fo = face_ops[fid]
            face = fo.face
            W = fo.rule.weights
            pts = fo.rule.points
            Bk_f = self.basis_k.eval(pts)
            # grad of low basis on the face
            dlow = []
            for j in range(d):
                o = [0] * d
                o[j] = 1
                dlow.append(self.basis_low.eval_diff(pts, tuple(o)))
            Blow_f = self.basis_low.eval(pts)
            # <., .>_F pairings with the face bases
            G_bf = [dl.T @ (fo.Bbf * W[:, None]) for dl in dlow]   # (m, nbf)
            F_n = Blow_f.T @ (fo.Bn * W[:, None])                  # (m, nn)
            vg = fo.weak_gradient_map(d)                           # (d, nn, nn+ntr)
            cols_n = slice(self.off_n[fid], self.off_n[fid] + nn)
            cols_bf = slice(self.off_bf[fid], self.off_bf[fid] + nbf)
            n_out = sigma * face.normal
            for i in range(d):
                for j in range(d):
                    # -<v_bf n_i, d_j phi>_dT
                    B[i, j, :, cols_bf] += -n_out[i] * G_bf[j]
                    # +<v_gi, phi n_j>_dT
                    FV = n_out[j] * (F_n @ vg[i])   # (m, nn+ntr)
                    B[i, j, :, cols_n] += FV[:, :nn]
                    tr = FV[:, nn:]
                    B[i, j, :, cols_bf] += tr[:, :nbf]
                    col = nbf
                    for eid in fo.edge_ids:
                        o = self.off_be[eid]
                        B[i, j, :, o:o + nbe] += tr[:, col:col + nbe]
                        col += nbe

        self.D = np.linalg.solve(self.mass_low[None, None, :, :], B)
        K = np.zeros((self.nloc, self.nloc))
        for i in range(d):
            for j in range(d):
                K += self.D[i, j].T @ (self.mass_low @ self.D[i, j])
        self.stiffness = K
        self.stabilizer = self._build_stabilizer(mesh, layout, cid, face_ops)
        self.local_matrix = self.stiffness + self.stabilizer

    def _build_stabilizer(self, mesh, layout, cid, face_ops) -> np.ndarray:
        cell = mesh.cells[cid]
        k, d = layout.k, mesh.dim
        n0, nbf, nn, nbe = layout.n0, layout.nbf, layout.nn, layout.nbe
        h = cell.h
        # (weight, residual map, residual mass matrix) triples; kept for the
        # sum-of-squares energy evaluation
        self.penalty_parts = []
        S = np.zeros((self.nloc, self.nloc))

        for fid in cell.faces:
            fo = face_ops[fid]
            face = fo.face
            W = fo.rule.weights
            pts = fo.rule.points
            Bk_f = self.basis_k.eval(pts)
            dk = []
            for j in range(d):
                o = [0] * d
                o[j] = 1
                dk.append(self.basis_k.eval_diff(pts, tuple(o)))

            # edge glue term, weight h^-2; every codim-2 entity of the cell
            # lies on exactly two of its faces, so halving the per-face
            # contributions counts each entity once
            for eid, _ in face.boundary_edges:
                oe = self.off_be[eid]
                if d == 2:
                    pt = mesh.vertices[mesh.edges[eid][0]][None, :]
                    r = np.zeros((1, self.nloc))
                    r[0, :n0] = self.basis_k.eval(pt)[0]
                    r[0, oe] = -1.0
                    self.penalty_parts.append((0.5 / h ** 2, r, np.eye(1)))
                    S += 0.5 * (r.T @ r) / h ** 2
                else:
                    erule = quad_edge(mesh, eid, 2 * k)
                    Eb = edge_basis(mesh, eid, k - 2).eval(erule.points)
                    Me = Eb.T @ (Eb * erule.weights[:, None])
                    Bk_e = self.basis_k.eval(erule.points)
                    P = np.linalg.solve(Me, Eb.T @ (Bk_e * erule.weights[:, None]))
                    R = np.zeros((nbe, self.nloc))
                    R[:, :n0] = P
                    R[:, oe:oe + nbe] = -np.eye(nbe)
                    self.penalty_parts.append((0.5 / h ** 2, R, Me))
                    S += 0.5 * (R.T @ (Me @ R)) / h ** 2

            # face trace term, weight h^-3
            Pbf = np.linalg.solve(fo.mass_bf, fo.Bbf.T @ (Bk_f * W[:, None]))
            R = np.zeros((nbf, self.nloc))
            R[:, :n0] = Pbf
            obf = self.off_bf[fid]
            R[:, obf:obf + nbf] = -np.eye(nbf)
            self.penalty_parts.append((1.0 / h ** 3, R, fo.mass_bf))
            S += (R.T @ (fo.mass_bf @ R)) / h ** 3

            # normal derivative term, weight h^-1 (global normal; sign squares out)
            dn = sum(face.normal[j] * dk[j] for j in range(d))
            Pn = np.linalg.solve(fo.mass_n, fo.Bn.T @ (dn * W[:, None]))
            R = np.zeros((nn, self.nloc))
            R[:, :n0] = Pn
            on = self.off_n[fid]
            R[:, on:on + nn] = -np.eye(nn)
            self.penalty_parts.append((1.0 / h, R, fo.mass_n))
            S += (R.T @ (fo.mass_n @ R)) / h

            # tangential glue term, weight h^-1
            for c in range(d - 1):
                tc = face.tangents[c]
                dt = sum(tc[j] * dk[j] for j in range(d))
                Pt = np.linalg.solve(fo.mass_n, fo.Bn.T @ (dt * W[:, None]))
                R = np.zeros((nn, self.nloc))
                R[:, :n0] = Pt
                R[:, obf:obf + nbf] = -fo.tmap[c][:, :nbf]
                col = nbf
                for eid in fo.edge_ids:
                    oe = self.off_be[eid]
                    R[:, oe:oe + nbe] -= fo.tmap[c][:, col:col + nbe]
                    col += nbe
                self.penalty_parts.append((1.0 / h, R, fo.mass_n))
                S += (R.T @ (fo.mass_n @ R)) / h
        return S

    def energy_sum_of_squares(self, vloc: np.ndarray) -> float:
        """a_s(v, v) on this cell accumulated residual by residual.

        Algebraically equal to vloc @ local_matrix @ vloc, but exactly
        nonnegative and accurate to the square of round-off on functions
        the bilinear form annihilates, where the matrix quadratic form is
        dominated by cancellation error.
        """
        d = self.mesh.dim
        Dw = self.apply_weak_hessian(vloc)
        out = 0.0
        for i in range(d):
            for j in range(d):
                out += float(Dw[i, j] @ (self.mass_low @ Dw[i, j]))
        for w, R, M in self.penalty_parts:
            r = R @ vloc
            out += w * float(r @ (M @ r))
        return out

    def load_vector(self, g, g_degree: int) -> np.ndarray:
        """Local right-hand side (g, v_0)_T on the interior block."""
        mesh, k = self.mesh, self.layout.k
        rule = quad_cell(mesh, self.cid, k + g_degree)
        Bk = self.basis_k.eval(rule.points)
        b = np.zeros(self.nloc)
        b[:self.layout.n0] = Bk.T @ (rule.weights * g(rule.points))
        return b

    def apply_weak_hessian(self, vloc: np.ndarray) -> np.ndarray:
        """Coefficients of every weak second partial: shape (d, d, m)."""
        return np.einsum("ijmn,n->ijm", self.D, vloc)


def verify_ibp_identity(cell_ops: CellOps, face_ops: dict[int, FaceOps],
                        vloc: np.ndarray, phi: np.ndarray,
                        quad_degree: int | None = None) -> float:
    """Residual of the integration-by-parts identity for all index pairs.

    `phi` holds coefficients in the cell's degree k-2 basis.  A deliberately
    low `quad_degree` breaks the identity; the default is exact.
    """
    mesh = cell_ops.mesh
    layout = cell_ops.layout
    cell = mesh.cells[cell_ops.cid]
    k, d = layout.k, mesh.dim
    n0, nbf, nn, nbe = layout.n0, layout.nbf, layout.nn, layout.nbe
    deg = 2 * k + 2 if quad_degree is None else quad_degree
    crule = quad_cell(mesh, cell_ops.cid, deg)
    Wc = crule.weights
    Blow = cell_ops.basis_low.eval(crule.points)
    phi_vals = Blow @ phi
    Dw = cell_ops.apply_weak_hessian(vloc)
    v0 = vloc[:n0]
    res = 0.0
    for i in range(d):
        for j in range(d):
            lhs = float(np.sum(Wc * (Blow @ Dw[i, j]) * phi_vals))
            oi = [0] * d
            oi[i] += 1
            oj = list(oi)
            oj[j] += 1
            d2v0 = cell_ops.basis_k.eval_diff(crule.points, tuple(oj)) @ v0
            rhs = float(np.sum(Wc * d2v0 * phi_vals))
            for fid, sigma in zip(cell.faces, cell.signs):
                fo = face_ops[fid]
                frule = quad_face(mesh, fid, deg)
                Wf = frule.weights
                n_out = sigma * fo.face.normal
                v0_f = cell_ops.basis_k.eval(frule.points) @ v0
                vbf = fo.basis_bf.eval(frule.points) @ \
                    vloc[cell_ops.off_bf[fid]:cell_ops.off_bf[fid] + nbf]
                ojj = [0] * d
                ojj[j] = 1
                dphi_j = cell_ops.basis_low.eval_diff(frule.points, tuple(ojj)) @ phi
                rhs += n_out[i] * float(np.sum(Wf * (v0_f - vbf) * dphi_j))
                oii = [0] * d
                oii[i] = 1
                div0 = cell_ops.basis_k.eval_diff(frule.points, tuple(oii)) @ v0
                # face dof slice for the weak gradient map
                fdofs = np.concatenate([
                    vloc[cell_ops.off_n[fid]:cell_ops.off_n[fid] + nn],
                    vloc[cell_ops.off_bf[fid]:cell_ops.off_bf[fid] + nbf],
                    np.concatenate([
                        vloc[cell_ops.off_be[eid]:cell_ops.off_be[eid] + nbe]
                        for eid in fo.edge_ids]) if fo.edge_ids else np.zeros(0),
                ])
                vg = fo.weak_gradient_map(d)
                vgi = fo.basis_n.eval(frule.points) @ (vg[i] @ fdofs)
                phi_f = cell_ops.basis_low.eval(frule.points) @ phi
                rhs -= n_out[j] * float(np.sum(Wf * (div0 - vgi) * phi_f))
            res = max(res, abs(lhs - rhs))
    return res
