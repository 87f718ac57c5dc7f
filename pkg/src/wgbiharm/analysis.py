"""Error measures, convergence studies, and a consistency diagnostic.

The reported "l2" error is the interior component ||Q_0 u - u_0||; "triple"
is the energy norm a_s(e, e)^(1/2) of the coefficient difference between the
componentwise interpolant of the exact solution and the discrete solution.
Boundary measures weight the skeleton components of the same difference with
mesh-size powers (h^2 for the codim-2 term, h for the two face terms).
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (gen_cube_grid, gen_polygon_grid, gen_square_grid,
                       gen_triangle_grid, quad_edge, quad_face)
from .polyalg import ManufacturedCase, MultiPoly, manufactured_case
from .space import WeakFunction, edge_basis, interpolate, project_cell_low
from .system import Discretization, build_system, solve_full, solve_schur

__all__ = [
    "ErrorReport",
    "error_l2",
    "error_triple_bar",
    "boundary_measures",
    "residual_consistency",
    "convergence_study",
    "GRID_FAMILIES",
]

GRID_FAMILIES = {
    "square": gen_square_grid,
    "triangle": gen_triangle_grid,
    "polygon": gen_polygon_grid,
    "cube": gen_cube_grid,
}

CSV_HEADER = "level,h,dofs,l2,l2_rate,triple,triple_rate,ebe,ebf,en"


def error_l2(disc: Discretization, u: MultiPoly, uh: WeakFunction,
             qh: WeakFunction | None = None) -> float:
    """||Q_0 u - u_0|| over the domain.

    `qh` is the componentwise interpolant of `u`; pass it in to avoid
    recomputing it when several error measures share one solve.
    """
    if qh is None:
        qh = interpolate(disc.layout, u)
    return _interior_l2(disc, qh.coeffs - uh.coeffs)


def _interior_l2(disc: Discretization, e: np.ndarray) -> float:
    n0 = disc.layout.n0
    total = 0.0
    for co in disc.cell_ops:
        ei = e[co.global_dofs[:n0]]
        vals = co.Bk_cell @ ei
        total += float(np.sum(co.cell_rule.weights * vals * vals))
    return math.sqrt(total)


def error_triple_bar(disc: Discretization, u: MultiPoly, uh: WeakFunction,
                     qh: WeakFunction | None = None) -> float:
    """Energy norm a_s(e, e)^(1/2) of e = Q_h u - u_h."""
    if qh is None:
        qh = interpolate(disc.layout, u)
    e = qh.coeffs - uh.coeffs
    # summing squared residuals keeps the value meaningful down to the
    # square of round-off, where the matrix quadratic form bottoms out
    return math.sqrt(disc.energy_sum_of_squares(e))


def boundary_measures(disc: Discretization, u: MultiPoly, uh: WeakFunction,
                      qh: WeakFunction | None = None
                      ) -> tuple[float, float, float]:
    """Weighted skeleton error norms (codim-2 trace, face trace, normal).

    Per cell: h^2 times the squared codim-2 trace error (each entity of the
    cell counted once; point evaluation in 2D), and h times the squared face
    trace and normal-component errors summed over the cell's faces.
    """
    mesh, layout = disc.mesh, disc.layout
    k = layout.k
    if qh is None:
        qh = interpolate(layout, u)
    e = qh.coeffs - uh.coeffs
    sbe = sbf = sn = 0.0
    for cid, cell in enumerate(mesh.cells):
        h = cell.h
        for eid in cell.edges:
            ce = e[layout.edge_dofs(eid)]
            if mesh.dim == 2:
                sbe += h ** 2 * float(ce[0] ** 2)
            else:
                rule = quad_edge(mesh, eid, 2 * (k - 2))
                vals = edge_basis(mesh, eid, k - 2).eval(rule.points) @ ce
                sbe += h ** 2 * float(np.sum(rule.weights * vals * vals))
        for fid in cell.faces:
            fo = disc.face_ops[fid]
            W = fo.rule.weights
            vbf = fo.Bbf @ e[layout.face_bf_dofs(fid)]
            vn = fo.Bn @ e[layout.face_n_dofs(fid)]
            sbf += h * float(np.sum(W * vbf * vbf))
            sn += h * float(np.sum(W * vn * vn))
    return math.sqrt(sbe), math.sqrt(sbf), math.sqrt(sn)


def residual_consistency(disc: Discretization, case: ManufacturedCase,
                         uh: WeakFunction, trials: int = 5, seed: int = 0,
                         include_penalty: bool = True) -> float:
    """Max over random test functions v of |a_s(e, v) - z(v)|.

    z(v) is the residual functional of the interpolant: the penalty form
    evaluated against the interpolant plus the two face defect sums that
    measure how far the projected second derivatives are from the exact
    ones.  For exact solutions of degree <= k it vanishes identically.
    Test functions vanish on the boundary and are normalized to unit energy.
    `include_penalty=False` drops the penalty term (negative control).
    """
    mesh, layout = disc.mesh, disc.layout
    k, d = layout.k, mesh.dim
    n0, nbf, nn, nbe = layout.n0, layout.nbf, layout.nn, layout.nbe
    u = case.u
    udeg = max(u.degree, 0)
    qh = interpolate(layout, u)
    e = qh.coeffs - uh.coeffs

    d2u = {}
    for i in range(d):
        for j in range(d):
            d2u[(i, j)] = u.diff(i).diff(j)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(layout.total)
        v[layout.boundary_mask] = 0.0
        en = math.sqrt(max(disc.energy_product(v, v), 1e-300))
        v /= en

        lhs = disc.energy_product(e, v)
        rhs = 0.0
        if include_penalty:
            for co in disc.cell_ops:
                g = co.global_dofs
                rhs += float(qh.coeffs[g] @ (co.stabilizer @ v[g]))
        for co in disc.cell_ops:
            cid = co.cid
            cell = mesh.cells[cid]
            vloc = v[co.global_dofs]
            # projected second derivatives of u in the degree k-2 cell basis
            proj = {}
            for i in range(d):
                for j in range(d):
                    proj[(i, j)] = project_cell_low(
                        mesh, cid, k, d2u[(i, j)], max(udeg - 2, 0))
            for fid, sigma in zip(cell.faces, cell.signs):
                fo = disc.face_ops[fid]
                rule = quad_face(mesh, fid, k + udeg)
                W = rule.weights
                pts = rule.points
                n_out = sigma * fo.face.normal
                Bk = co.basis_k.eval(pts)
                v0 = Bk @ vloc[:n0]
                vbf = fo.basis_bf.eval(pts) @ \
                    vloc[co.off_bf[fid]:co.off_bf[fid] + nbf]
                fdofs = np.concatenate(
                    [vloc[co.off_n[fid]:co.off_n[fid] + nn],
                     vloc[co.off_bf[fid]:co.off_bf[fid] + nbf]] +
                    [vloc[co.off_be[eid]:co.off_be[eid] + nbe]
                     for eid in fo.edge_ids])
                vg = fo.weak_gradient_map(d)
                Bn_pts = fo.basis_n.eval(pts)
                for i in range(d):
                    oi = tuple(1 if a == i else 0 for a in range(d))
                    div0 = co.basis_k.eval_diff(pts, oi) @ vloc[:n0]
                    vgi = Bn_pts @ (vg[i] @ fdofs)
                    for j in range(d):
                        oj = tuple(1 if a == j else 0 for a in range(d))
                        # defect between projected and exact second partials
                        ddef = co.basis_low.eval_diff(pts, oj) @ proj[(i, j)] \
                            - d2u[(i, j)].diff(j)(pts)
                        rhs += n_out[i] * float(np.sum(W * (v0 - vbf) * ddef))
                        sdef = co.basis_low.eval(pts) @ proj[(i, j)] \
                            - d2u[(i, j)](pts)
                        rhs -= n_out[j] * float(np.sum(W * (div0 - vgi) * sdef))
        worst = max(worst, abs(lhs - rhs))
    return worst


@dataclass
class ErrorReport:
    """Per-level error records of a refinement study with observed rates."""

    family: str
    k: int
    levels: list[int] = field(default_factory=list)
    h: list[float] = field(default_factory=list)
    dofs: list[int] = field(default_factory=list)
    l2: list[float] = field(default_factory=list)
    triple: list[float] = field(default_factory=list)
    ebe: list[float] = field(default_factory=list)
    ebf: list[float] = field(default_factory=list)
    en: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def rates(self, key: str) -> list[float]:
        """Observed orders log2(coarse/fine) for consecutive levels; the
        first entry is 0 by convention."""
        vals = getattr(self, key)
        out = [0.0]
        for a, b in zip(vals, vals[1:]):
            out.append(math.log2(a / b) if a > 0 and b > 0 else 0.0)
        return out

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        rl2 = self.rates("l2")
        rtb = self.rates("triple")
        for i in range(len(self.levels)):
            lines.append(",".join([
                str(self.levels[i]), f"{self.h[i]:.10g}", str(self.dofs[i]),
                f"{self.l2[i]:.6e}", f"{rl2[i]:.4f}",
                f"{self.triple[i]:.6e}", f"{rtb[i]:.4f}",
                f"{self.ebe[i]:.6e}", f"{self.ebf[i]:.6e}",
                f"{self.en[i]:.6e}"]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, family: str = "", k: int = 0) -> "ErrorReport":
        rows = [r.strip() for r in text.strip().splitlines()]
        if not rows or rows[0] != CSV_HEADER:
            raise ValueError("unrecognized report header")
        rep = cls(family=family, k=k)
        for row in rows[1:]:
            f = row.split(",")
            rep.levels.append(int(f[0]))
            rep.h.append(float(f[1]))
            rep.dofs.append(int(f[2]))
            rep.l2.append(float(f[3]))
            rep.triple.append(float(f[5]))
            rep.ebe.append(float(f[7]))
            rep.ebf.append(float(f[8]))
            rep.en.append(float(f[9]))
        return rep

    def to_markdown(self) -> str:
        head = ["level", "h", "dofs", "l2", "rate", "triple", "rate",
                "ebe", "ebf", "en"]
        rl2 = self.rates("l2")
        rtb = self.rates("triple")
        rows = []
        for i in range(len(self.levels)):
            rows.append([
                str(self.levels[i]), f"{self.h[i]:.4g}", str(self.dofs[i]),
                f"{self.l2[i]:.4e}", f"{rl2[i]:.2f}",
                f"{self.triple[i]:.4e}", f"{rtb[i]:.2f}",
                f"{self.ebe[i]:.4e}", f"{self.ebf[i]:.4e}",
                f"{self.en[i]:.4e}"])
        widths = [max(len(head[c]), max((len(r[c]) for r in rows), default=0))
                  for c in range(len(head))]
        out = io.StringIO()
        out.write("| " + " | ".join(h.rjust(w) for h, w in zip(head, widths)) + " |\n")
        out.write("|" + "|".join("-" * (w + 2) for w in widths) + "|\n")
        for r in rows:
            out.write("| " + " | ".join(c.rjust(w) for c, w in zip(r, widths)) + " |\n")
        return out.getvalue()


def convergence_study(family: str, k: int, levels, case: ManufacturedCase | None = None,
                      solver: str = "schur", tol: float = 1e-12,
                      on_level=None) -> ErrorReport:
    """Run mesh -> assemble -> solve -> error measures for each level."""
    if family not in GRID_FAMILIES:
        raise ValueError(f"unknown grid family {family!r}")
    levels = list(levels)
    if levels != sorted(levels):
        raise ValueError("levels must be increasing")
    dim = 3 if family == "cube" else 2
    if case is None:
        case = manufactured_case(dim)
    if case.u.dim != dim:
        raise ValueError("solution dimension does not match the grid family")
    solve = {"schur": solve_schur, "full": solve_full}[solver]
    rep = ErrorReport(family=family, k=k)
    for lvl in levels:
        t0 = time.perf_counter()
        mesh = GRID_FAMILIES[family](lvl)
        disc = Discretization(mesh, k)
        system = build_system(disc, case.g, max(case.g.degree, 0),
                              dirichlet=case.dirichlet, neumann=case.neumann,
                              dirichlet_degree=max(case.u.degree, 0))
        uh = solve(system, tol=tol)
        qh = interpolate(disc.layout, case.u)
        l2 = error_l2(disc, case.u, uh, qh=qh)
        tb = error_triple_bar(disc, case.u, uh, qh=qh)
        ebe, ebf, en = boundary_measures(disc, case.u, uh, qh=qh)
        dt = time.perf_counter() - t0
        rep.levels.append(lvl)
        rep.h.append(mesh.h)
        rep.dofs.append(disc.layout.total)
        rep.l2.append(l2)
        rep.triple.append(tb)
        rep.ebe.append(ebe)
        rep.ebf.append(ebf)
        rep.en.append(en)
        rep.seconds.append(dt)
        if on_level is not None:
            on_level(rep)
    return rep
