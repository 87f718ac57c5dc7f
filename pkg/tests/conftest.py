"""Shared helpers for the test suite."""

import numpy as np

from wgbiharm.polyalg import MultiPoly, monomial_basis
from wgbiharm.space import interpolate, project_cell_low, project_face_n


def random_poly(dim: int, degree: int, rng: np.random.Generator) -> MultiPoly:
    """Random polynomial of total degree <= degree with O(1) coefficients."""
    out = MultiPoly(dim)
    for mono in monomial_basis(dim, degree):
        out = out + float(rng.uniform(-1.0, 1.0)) * mono
    return out


def hessian_commutation_error(disc, u: MultiPoly) -> float:
    """Max coefficient gap between the weak second partials of the
    interpolant of `u` and the cellwise projection of the exact second
    partials.  Vanishes (to round-off) for every smooth `u`."""
    mesh, layout = disc.mesh, disc.layout
    k, d = layout.k, mesh.dim
    deg = max(u.degree, 0)
    qh = interpolate(layout, u)
    d2u = {(i, j): u.diff(i).diff(j) for i in range(d) for j in range(d)}
    worst = 0.0
    for co in disc.cell_ops:
        Dw = co.apply_weak_hessian(qh.coeffs[co.global_dofs])
        for i in range(d):
            for j in range(d):
                ref = project_cell_low(mesh, co.cid, k, d2u[(i, j)],
                                       max(deg - 2, 0))
                worst = max(worst, float(np.max(np.abs(Dw[i, j] - ref))))
    return worst


def gradient_commutation_error(disc, u: MultiPoly) -> float:
    """Max coefficient gap between the facewise weak gradient of the
    interpolant of `u` and the face projection of the exact gradient."""
    mesh, layout = disc.mesh, disc.layout
    k, d = layout.k, mesh.dim
    deg = max(u.degree, 0)
    qh = interpolate(layout, u)
    grad = u.grad()
    worst = 0.0
    for fid, fo in disc.face_ops.items():
        fdofs = np.concatenate(
            [qh.coeffs[layout.face_n_dofs(fid)],
             qh.coeffs[layout.face_bf_dofs(fid)]] +
            [qh.coeffs[layout.edge_dofs(eid)] for eid in fo.edge_ids])
        vg = fo.weak_gradient_map(d)
        for i in range(d):
            ref = project_face_n(mesh, fid, k, grad[i], max(deg - 1, 0))
            worst = max(worst, float(np.max(np.abs(vg[i] @ fdofs - ref))))
    return worst
