"""End-to-end acceptance suite.

Each test pins one contract item: reproduction of the reference error
tables for the four grid families, the commutation and exactness properties
of the weak operators, solver equivalence, positive definiteness, and the
asymptotic convergence orders.

Three checks encode known, measured gaps and fail with the numbers in the
message rather than being skipped: the cube reference values
(test_cube_reference_values), the coarse-level polygon k=5 energy norms
(test_polygon_reference_table[5]), and the k=5 boundary-measure rate
window (test_rate_windows[5]).  Everything else is expected green.
"""

import math
import time

import numpy as np
import pytest

from wgbiharm.analysis import (boundary_measures, convergence_study, error_l2,
                               error_triple_bar)
from wgbiharm.geometry import (gen_cube_grid, gen_polygon_grid,
                               gen_square_grid, gen_triangle_grid, quad_edge)
from wgbiharm.polyalg import (ManufacturedCase, MultiPoly, biharmonic_apply,
                              monomial_basis)
from wgbiharm.space import edge_basis, interpolate
from wgbiharm.system import (Discretization, build_system, solve_full,
                             solve_schur)

from conftest import random_poly

GENS = {"square": gen_square_grid, "triangle": gen_triangle_grid,
        "polygon": gen_polygon_grid, "cube": gen_cube_grid}

# family, k -> (levels, reference interior L2 errors, reference energy norms)
REFERENCE = {
    ("square", 3): ([5, 6, 7],
                    [1.486e-3, 9.595e-5, 6.092e-6],
                    [0.9339, 0.2373, 0.05981]),
    ("triangle", 3): ([5, 6, 7],
                      [8.263e-4, 5.190e-5, 3.252e-6],
                      [0.7030, 0.1764, 0.04414]),
    ("triangle", 4): ([4, 5, 6],
                      [6.526e-4, 2.088e-5, 6.563e-7],
                      [0.2874, 0.03666, 4.606e-3]),
    ("triangle", 5): ([3, 4, 5],
                      [2.622e-3, 4.362e-5, 6.929e-7],
                      [0.3941, 0.02601, 1.649e-3]),
    ("polygon", 3): ([4, 5, 6],
                     [5.052e-3, 3.207e-4, 1.999e-5],
                     [1.724, 0.4355, 0.1092]),
    ("polygon", 4): ([3, 4, 5],
                     [4.732e-3, 1.473e-4, 4.974e-6],
                     [0.9861, 0.1213, 0.01510]),
    ("polygon", 5): ([1, 2, 3],
                     [1.201, 1.468e-2, 2.705e-4],
                     [38.57, 1.683, 0.09122]),
    ("cube", 3): ([2, 3, 4],
                  [8.474e-2, 2.583e-3, 2.063e-4],
                  [1.633, 0.1846, 0.04861]),
}

_STUDIES = {}


def run_study(family, k, levels):
    key = (family, k, tuple(levels))
    if key not in _STUDIES:
        _STUDIES[key] = convergence_study(family, k, list(levels))
    return _STUDIES[key]


def _ref_rates(vals):
    return [math.log2(a / b) for a, b in zip(vals, vals[1:])]


def _check_against_reference(family, k, value_rtol, rate_tol):
    levels, ref_l2, ref_tb = REFERENCE[(family, k)]
    rep = run_study(family, k, levels)
    problems = []
    for i, lvl in enumerate(levels):
        for name, ours, ref in (("l2", rep.l2[i], ref_l2[i]),
                                ("triple", rep.triple[i], ref_tb[i])):
            if abs(ours - ref) > value_rtol * ref:
                problems.append(
                    f"level {lvl} {name}: {ours:.4e} vs reference {ref:.4e} "
                    f"(ratio {ours / ref:.4g}, tolerance {value_rtol:.0%})")
    for name, ours, ref in (("l2", rep.rates("l2")[1:], _ref_rates(ref_l2)),
                            ("triple", rep.rates("triple")[1:],
                             _ref_rates(ref_tb))):
        for o, r in zip(ours, ref):
            if abs(o - r) > rate_tol:
                problems.append(f"{name} rate: {o:.3f} vs reference {r:.3f} "
                                f"(tolerance {rate_tol})")
    return rep, problems


def test_square_reference_table():
    rep, problems = _check_against_reference("square", 3,
                                             value_rtol=0.02, rate_tol=0.05)
    assert not problems, "\n".join(problems)
    assert all(s < 60.0 for s in rep.seconds), \
        f"per-level runtime exceeded 60 s: {rep.seconds}"


@pytest.mark.parametrize("k", [3, 4, 5])
def test_triangle_reference_table(k):
    _, problems = _check_against_reference("triangle", k,
                                           value_rtol=0.02, rate_tol=0.05)
    assert not problems, "\n".join(problems)


@pytest.mark.parametrize("k", [3, 4, 5])
def test_polygon_reference_table(k):
    """Polygon-grid reference tables at factor-2 / ±0.2 tolerances.

    Known gap at k=5: its reference rows start at the completely
    unresolved level 1 (interior L2 error exceeds the solution norm).
    Our interior L2 errors match the reference within 4-6% on all three
    levels, but the coarse-level energy norms sit below the reference --
    2.64x at level 1, 1.32x at level 2 -- with the gap closing under
    refinement (0.91x at level 3, observed order 3.98 -> the expected 4
    at level 4).  The level-1 reference value matches no identifiable
    energy quantity of this scheme, whose conventions reproduce every
    other 2D reference row to 0.1-6%.  The energy-norm checks touching
    levels 1-2 therefore fail honestly for k=5; k=3 and k=4 pass.
    """
    levels, ref_l2, ref_tb = REFERENCE[("polygon", k)]
    rep = run_study("polygon", k, levels)
    problems = []
    for i, lvl in enumerate(levels):
        for name, ours, ref in (("l2", rep.l2[i], ref_l2[i]),
                                ("triple", rep.triple[i], ref_tb[i])):
            if not 0.5 <= ours / ref <= 2.0:
                problems.append(f"level {lvl} {name}: {ours:.4e} vs "
                                f"reference {ref:.4e} (outside factor 2)")
    for name, ours, ref in (("l2", rep.rates("l2")[1:], _ref_rates(ref_l2)),
                            ("triple", rep.rates("triple")[1:],
                             _ref_rates(ref_tb))):
        for o, r in zip(ours, ref):
            if abs(o - r) > 0.2:
                problems.append(f"{name} rate: {o:.3f} vs reference {r:.3f}")
    assert not problems, "\n".join(problems)


def test_cube_reference_values():
    """Known gap: the cube reference errors are not reproduced.

    The same code path reproduces all 2D references to 0.1-1% and is
    independently validated in 3D (commutation, polynomial exactness with
    inhomogeneous boundary data, solver equivalence), and the measured
    rates approach the expected asymptotic orders.  The measured errors
    nevertheless exceed the reference values by level-dependent factors
    (~17x at level 2, settling at ~64x), which no reweighting of the
    penalty terms reproduces; the reference values are also mutually
    inconsistent with the 2D reference table at equal mesh size.  This
    test states the stated 20% / ±0.3 tolerances and fails honestly.
    """
    levels, ref_l2, _ = REFERENCE[("cube", 3)]
    rep = run_study("cube", 3, levels)
    problems = []
    for i, lvl in enumerate(levels):
        ours, ref = rep.l2[i], ref_l2[i]
        if abs(ours - ref) > 0.2 * ref:
            problems.append(f"level {lvl} l2: {ours:.4e} vs reference "
                            f"{ref:.4e} (ratio {ours / ref:.4g})")
    for o, r in zip(rep.rates("l2")[1:], _ref_rates(ref_l2)):
        if abs(o - r) > 0.3:
            problems.append(f"l2 rate: {o:.3f} vs reference {r:.3f}")
    assert not problems, "\n".join(problems)


def _batched_projection(basis, rule, vals):
    B = basis.eval(rule.points)
    W = rule.weights
    gram = B.T @ (B * W[:, None])
    return np.linalg.solve(gram, B.T @ (vals * W[:, None]))


def _poly_matrix(polys, pts):
    return np.column_stack([p(pts) for p in polys])


def _commutation_errors(disc, C):
    """Batched check that interpolation commutes with the weak operators.

    Columns of C are random coefficient vectors over the monomial basis of
    P_k.  Returns per-trial max coefficient errors of (a) the weak second
    partials of the interpolant against the projected exact second partials
    and (b) the facewise weak gradient against the projected exact
    gradient, each normalized by the magnitude of the projected data.
    """
    mesh, layout = disc.mesh, disc.layout
    k, d = layout.k, mesh.dim
    T = C.shape[1]
    monos = monomial_basis(d, k)
    d1 = [[m.diff(i) for m in monos] for i in range(d)]
    d2 = [[[m.diff(i).diff(j) for m in monos] for j in range(d)]
          for i in range(d)]

    # componentwise interpolation of all trials at once
    cell_c, face_bf_c, face_n_c, edge_c = {}, {}, {}, {}
    for co in disc.cell_ops:
        vals = _poly_matrix(monos, co.cell_rule.points) @ C
        cell_c[co.cid] = _batched_projection(co.basis_k, co.cell_rule, vals)
    for fid, fo in disc.face_ops.items():
        pts, W = fo.rule.points, fo.rule.weights
        vals = _poly_matrix(monos, pts) @ C
        face_bf_c[fid] = np.linalg.solve(
            fo.mass_bf, fo.Bbf.T @ (vals * W[:, None]))
        nvals = sum(fo.face.normal[i] * (_poly_matrix(d1[i], pts) @ C)
                    for i in range(d))
        face_n_c[fid] = np.linalg.solve(
            fo.mass_n, fo.Bn.T @ (nvals * W[:, None]))
    for eid in range(len(mesh.edges)):
        if d == 2:
            pt = mesh.vertices[mesh.edges[eid][0]][None, :]
            edge_c[eid] = _poly_matrix(monos, pt) @ C
        else:
            rule = quad_edge(mesh, eid, 2 * k)
            vals = _poly_matrix(monos, rule.points) @ C
            edge_c[eid] = _batched_projection(
                edge_basis(mesh, eid, k - 2), rule, vals)

    err = np.zeros(T)
    scale = np.ones(T)
    for co in disc.cell_ops:
        cell = mesh.cells[co.cid]
        vloc = np.zeros((co.nloc, T))
        vloc[:layout.n0] = cell_c[co.cid]
        for fid in cell.faces:
            vloc[co.off_bf[fid]:co.off_bf[fid] + layout.nbf] = face_bf_c[fid]
            vloc[co.off_n[fid]:co.off_n[fid] + layout.nn] = face_n_c[fid]
        for eid in cell.edges:
            vloc[co.off_be[eid]:co.off_be[eid] + layout.nbe] = edge_c[eid]
        Dw = np.einsum("ijmn,nt->ijmt", co.D, vloc)
        for i in range(d):
            for j in range(d):
                vals = _poly_matrix(d2[i][j], co.cell_rule.points) @ C
                ref = _batched_projection(co.basis_low, co.cell_rule, vals)
                err = np.maximum(err, np.abs(Dw[i, j] - ref).max(axis=0))
                scale = np.maximum(scale, np.abs(ref).max(axis=0))
    for fid, fo in disc.face_ops.items():
        fdofs = np.vstack([face_n_c[fid], face_bf_c[fid]] +
                          [edge_c[eid] for eid in fo.edge_ids])
        vg = fo.weak_gradient_map(d)
        pts, W = fo.rule.points, fo.rule.weights
        for i in range(d):
            vals = _poly_matrix(d1[i], pts) @ C
            ref = np.linalg.solve(fo.mass_n, fo.Bn.T @ (vals * W[:, None]))
            err = np.maximum(err, np.abs(vg[i] @ fdofs - ref).max(axis=0))
            scale = np.maximum(scale, np.abs(ref).max(axis=0))
    return err / scale


def test_commutation_suite():
    """100 random polynomial trials per (family, k): interpolation then weak
    differentiation equals projection of the exact derivatives."""
    combos = [(f, k) for f in ("square", "triangle", "polygon")
              for k in (3, 4, 5)] + [("cube", 3), ("cube", 4)]
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {}
    for family, k in combos:
        mesh = GENS[family](1)
        disc = Discretization(mesh, k)
        nm = len(monomial_basis(mesh.dim, k))
        rel = _commutation_errors(disc, rng.uniform(-1.0, 1.0, (nm, 100)))
        worst[(family, k)] = float(rel.max())
    elapsed = time.perf_counter() - t0
    bad = {c: v for c, v in worst.items() if v > 1e-9}
    assert not bad, f"commutation error above 1e-9: {bad}"
    assert elapsed < 10.0, f"commutation suite took {elapsed:.1f} s"


def test_polynomial_exactness():
    """10 random solutions inside the local polynomial space: the solver
    reproduces them, so all five error measures sit at round-off."""
    rng = np.random.default_rng(99)
    combos = [("square", 3, 4), ("triangle", 4, 3), ("polygon", 3, 3)]
    problems = []
    for family, k, trials in combos:
        disc = Discretization(GENS[family](2), k)
        for t in range(trials):
            u = random_poly(2, k, rng)
            case = ManufacturedCase(u=u, g=biharmonic_apply(u))
            system = build_system(disc, case.g, max(case.g.degree, 0),
                                  dirichlet=case.dirichlet,
                                  neumann=case.neumann,
                                  dirichlet_degree=k)
            uh = solve_schur(system)
            qh = interpolate(disc.layout, u)
            measures = {
                "l2": error_l2(disc, u, uh, qh=qh),
                "triple": error_triple_bar(disc, u, uh, qh=qh),
            }
            for name, val in zip(("ebe", "ebf", "en"),
                                 boundary_measures(disc, u, uh, qh=qh)):
                measures[name] = val
            for name, val in measures.items():
                if val > 1e-8:
                    problems.append(
                        f"{family} k={k} trial {t}: {name} = {val:.3e}")
    assert not problems, "\n".join(problems)


@pytest.fixture(scope="module", params=[("square", 3), ("triangle", 3),
                                        ("polygon", 2), ("cube", 2)],
                ids=lambda p: f"{p[0]}-l{p[1]}")
def family_system(request):
    family, level = request.param
    mesh = GENS[family](level)
    disc = Discretization(mesh, 3)
    dim = mesh.dim
    from wgbiharm.polyalg import manufactured_case
    case = manufactured_case(dim)
    system = build_system(disc, case.g, max(case.g.degree, 0),
                          dirichlet=case.dirichlet, neumann=case.neumann,
                          dirichlet_degree=case.u.degree)
    return disc, system


def test_schur_matches_full_solve(family_system):
    disc, system = family_system
    u1 = solve_full(system)
    u2 = solve_schur(system)
    rel = np.linalg.norm(u1.coeffs - u2.coeffs) / np.linalg.norm(u1.coeffs)
    assert rel <= 1e-9, f"relative coefficient difference {rel:.3e}"


def test_positive_definite_with_affine_kernel(family_system):
    disc, system = family_system
    A = system.matrix.toarray()
    assert np.abs(A - A.T).max() < 1e-11 * np.abs(A).max()
    free = ~system.constrained
    lam = np.linalg.eigvalsh(A[np.ix_(free, free)])
    assert lam.min() > 0.0
    # affine functions interpolate into the kernel of the bilinear form
    rng = np.random.default_rng(17)
    u = random_poly(disc.mesh.dim, 1, rng)
    qh = interpolate(disc.layout, u)
    scale = np.abs(A).max() * float(qh.coeffs @ qh.coeffs)
    energy = disc.energy_sum_of_squares(qh.coeffs)
    assert 0.0 <= energy <= 1e-20 * scale


@pytest.mark.parametrize("k", [3, 4, 5])
def test_rate_windows(k):
    """Observed orders on the two finest affordable square-grid levels.

    Interior L2 must sit within ±0.1 of k+1 and the energy norm within
    ±0.1 of k-1.  The boundary measures are guaranteed orders (k+1, k+1, k)
    from above, so they are checked one-sidedly at target - 0.2; observed
    superconvergence (e.g. the vertex measure at k=4) is compliant.

    Known gap at k=5: the vertex and face-trace measures reach only
    ~5.75/5.76 on levels (5,6) and the next refinement is unusable -- the
    absolute errors there (~8e-10) sit at the double-precision accuracy
    floor and the observed rate turns negative.  Scaling the solution by
    1000 reproduces the same rates, so this is genuine pre-asymptotics,
    out of reach in double precision.  The check is stated anyway and
    fails honestly for k=5.
    """
    levels = {3: [5, 6, 7], 4: [5, 6], 5: [5, 6]}[k]
    rep = run_study("square", k, levels)
    problems = []
    for name, target, tol in (("l2", k + 1, 0.1), ("triple", k - 1, 0.1)):
        rate = rep.rates(name)[-1]
        if abs(rate - target) > tol:
            problems.append(f"{name} rate {rate:.3f} vs {target} +/- {tol}")
    for name, target in (("ebe", k + 1), ("ebf", k + 1), ("en", k)):
        rate = rep.rates(name)[-1]
        if rate < target - 0.2:
            problems.append(f"{name} rate {rate:.3f} below {target} - 0.2")
    assert not problems, "\n".join(problems)
