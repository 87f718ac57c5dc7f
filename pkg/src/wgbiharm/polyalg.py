"""Exact multivariate polynomial algebra.

Polynomials are stored as sparse coefficient maps over exponent tuples.
They carry the manufactured solutions, the fourth-order operator, and the
monomial bases used by every local approximation space.  All coefficients
appearing in the shipped test cases are small integers (or dyadic rationals),
so double-precision arithmetic is exact throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import comb

import numpy as np

__all__ = [
    "MultiPoly",
    "ManufacturedCase",
    "biharmonic_apply",
    "manufactured_case",
    "monomial_basis",
    "poly_space_dim",
    "ScaledMonomialBasis",
    "graded_exponents",
]


def poly_space_dim(domain_dim: int, degree: int) -> int:
    """Dimension of the space of polynomials of total degree <= degree."""
    if degree < 0:
        return 0
    return comb(degree + domain_dim, domain_dim)


def graded_exponents(domain_dim: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent tuples of all monomials up to `degree`, graded lex order.

    domain_dim == 0 yields the single empty tuple (the constant space on a
    point entity).
    """
    if domain_dim == 0:
        return [()]
    out = []
    for total in range(degree + 1):
        batch = [a for a in product(range(total + 1), repeat=domain_dim)
                 if sum(a) == total]
        batch.sort(reverse=True)
        out.extend(batch)
    return out


class MultiPoly:
    """Sparse polynomial in `dim` variables; zero-coefficient terms dropped."""

    __slots__ = ("dim", "terms")

    def __init__(self, dim: int, terms: dict[tuple[int, ...], float] | None = None):
        self.dim = dim
        self.terms: dict[tuple[int, ...], float] = {}
        if terms:
            for a, c in terms.items():
                if c != 0.0:
                    self.terms[tuple(a)] = float(c)

    @classmethod
    def constant(cls, dim: int, value: float) -> "MultiPoly":
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def variable(cls, dim: int, axis: int) -> "MultiPoly":
        a = [0] * dim
        a[axis] = 1
        return cls(dim, {tuple(a): 1.0})

    def copy(self) -> "MultiPoly":
        return MultiPoly(self.dim, dict(self.terms))

    @property
    def degree(self) -> int:
        if not self.terms:
            return -1
        return max(sum(a) for a in self.terms)

    def __add__(self, other: "MultiPoly") -> "MultiPoly":
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        terms = dict(self.terms)
        for a, c in other.terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return MultiPoly(self.dim, terms)

    def __sub__(self, other: "MultiPoly") -> "MultiPoly":
        return self + (other * -1.0)

    def __mul__(self, other):
        if isinstance(other, MultiPoly):
            if self.dim != other.dim:
                raise ValueError("dimension mismatch")
            terms: dict[tuple[int, ...], float] = {}
            for a, ca in self.terms.items():
                for b, cb in other.terms.items():
                    key = tuple(x + y for x, y in zip(a, b))
                    terms[key] = terms.get(key, 0.0) + ca * cb
            return MultiPoly(self.dim, terms)
        return MultiPoly(self.dim, {a: c * float(other) for a, c in self.terms.items()})

    __rmul__ = __mul__

    def diff(self, axis: int) -> "MultiPoly":
        """Exact partial derivative along `axis`."""
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} out of range for dim {self.dim}")
        terms: dict[tuple[int, ...], float] = {}
        for a, c in self.terms.items():
            if a[axis] == 0:
                continue
            b = list(a)
            b[axis] -= 1
            terms[tuple(b)] = c * a[axis]
        return MultiPoly(self.dim, terms)

    def grad(self) -> list["MultiPoly"]:
        return [self.diff(i) for i in range(self.dim)]

    def __call__(self, points) -> np.ndarray:
        """Evaluate at points of shape (n, dim) or a single point of shape (dim,)."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        out = np.zeros(pts.shape[0])
        for a, c in self.terms.items():
            mono = np.full(pts.shape[0], c)
            for i, e in enumerate(a):
                if e:
                    mono *= pts[:, i] ** e
            out += mono
        return out[0] if single else out

    def __repr__(self) -> str:
        return f"MultiPoly(dim={self.dim}, terms={self.terms!r})"


def differentiate(p: MultiPoly, axis: int) -> MultiPoly:
    return p.diff(axis)


def biharmonic_apply(u: MultiPoly) -> MultiPoly:
    """Fourth-order operator: sum_i sum_j d2_ii d2_jj u."""
    if u.dim not in (2, 3):
        raise ValueError("only 2D and 3D supported")
    lap = MultiPoly(u.dim)
    for i in range(u.dim):
        lap = lap + u.diff(i).diff(i)
    out = MultiPoly(u.dim)
    for i in range(u.dim):
        out = out + lap.diff(i).diff(i)
    return out


@dataclass
class ManufacturedCase:
    """Exact solution with its source term and boundary traces.

    The boundary data are evaluated from `u` and `grad_u`; for the shipped
    unit-box cases both vanish identically on the boundary.
    """

    u: MultiPoly
    g: MultiPoly
    grad_u: list[MultiPoly] = field(default_factory=list)

    def __post_init__(self):
        if not self.grad_u:
            self.grad_u = self.u.grad()

    def dirichlet(self, points) -> np.ndarray:
        return self.u(points)

    def neumann(self, points, normal) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = np.asarray(normal, dtype=float)
        out = np.zeros(pts.shape[0])
        for i in range(self.u.dim):
            if n[i]:
                out += n[i] * self.grad_u[i](pts)
        return out


def _bump_factor(dim: int, axis: int) -> MultiPoly:
    # (x - x^2)^2 in the given axis
    x = MultiPoly.variable(dim, axis)
    q = x - x * x
    return q * q


def manufactured_case(dim: int) -> ManufacturedCase:
    """Unit-box polynomial solution scaled to peak value 1 at the center."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    u = MultiPoly.constant(dim, float(2 ** (4 * dim)))
    for i in range(dim):
        u = u * _bump_factor(dim, i)
    return ManufacturedCase(u=u, g=biharmonic_apply(u))


def monomial_basis(domain_dim: int, degree: int) -> list[MultiPoly]:
    """Plain monomial basis of P_degree in graded lex order."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    d = max(domain_dim, 1)
    basis = []
    for a in graded_exponents(domain_dim, degree):
        basis.append(MultiPoly(d, {tuple(a) if a else (0,) * d: 1.0}))
    return basis


class ScaledMonomialBasis:
    """Scaled monomials ((x - center)/scale)^alpha on an entity.

    Local Gram matrices stay well-conditioned across refinement when `center`
    is the entity centroid and `scale` its diameter.
    """

    def __init__(self, domain_dim: int, degree: int, center, scale: float):
        self.domain_dim = domain_dim
        self.degree = degree
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.scale = float(scale)
        self.exponents = graded_exponents(domain_dim, degree)
        self.size = len(self.exponents)

    def _local(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.domain_dim == 0:
            return np.zeros((pts.shape[0], 0))
        return (pts - self.center) / self.scale

    def eval(self, points) -> np.ndarray:
        """Basis values, shape (npoints, size)."""
        loc = self._local(points)
        out = np.ones((loc.shape[0], self.size))
        for m, a in enumerate(self.exponents):
            for i, e in enumerate(a):
                if e:
                    out[:, m] *= loc[:, i] ** e
        return out

    def eval_diff(self, points, orders: tuple[int, ...]) -> np.ndarray:
        """Values of a mixed partial derivative of every basis function."""
        loc = self._local(points)
        out = np.zeros((loc.shape[0], self.size))
        for m, a in enumerate(self.exponents):
            coeff = 1.0
            b = list(a)
            ok = True
            for i, o in enumerate(orders):
                for _ in range(o):
                    if b[i] == 0:
                        ok = False
                        break
                    coeff *= b[i] / self.scale
                    b[i] -= 1
                if not ok:
                    break
            if not ok:
                continue
            col = np.full(loc.shape[0], coeff)
            for i, e in enumerate(b):
                if e:
                    col *= loc[:, i] ** e
            out[:, m] = col
        return out

    def as_multipoly(self, index: int) -> MultiPoly:
        """Basis function `index` as a polynomial in the local variables."""
        a = self.exponents[index]
        d = max(self.domain_dim, 1)
        p = MultiPoly.constant(d, 1.0)
        inv = 1.0 / self.scale
        for i, e in enumerate(a):
            xi = (MultiPoly.variable(d, i) - MultiPoly.constant(d, self.center[i])) * inv
            for _ in range(e):
                p = p * xi
        return p
