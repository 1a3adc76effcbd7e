"""Transformed spatial operator, linear part and nonlinearity.

Fields near the traveling wave are of the form constant + small
perturbation (F = 1 + ..., B = -1/2 + ...). The operator algebra below
keeps the constant as an exact scalar and only the perturbation as an
array, so the traveling-wave value 3/8 cancels analytically and rounding
errors scale with the perturbation rather than with the wave itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (Field, GridSpec, SpectralField, dealias, dx_matrix,
                   dy_values, poly_matrix)
from .polyops import make_symbol

TW_CONSTANT = 3.0 / 8.0
MARGIN_FLOOR = 0.1


class GradientTooLargeError(ValueError):
    """1 + v_x dropped below the margin floor; the hodograph is not safely invertible."""


class _P:
    """Scalar constant plus array perturbation."""

    __slots__ = ("c", "p")

    def __init__(self, c, p):
        self.c = float(c)
        self.p = p

    def __add__(self, o):
        if isinstance(o, _P):
            return _P(self.c + o.c, self.p + o.p)
        return _P(self.c + o, self.p)

    def __sub__(self, o):
        if isinstance(o, _P):
            return _P(self.c - o.c, self.p - o.p)
        return _P(self.c - o, self.p)

    def __neg__(self):
        return _P(-self.c, -self.p)

    def scale(self, a):
        return _P(a * self.c, a * self.p)

    def full(self):
        return self.c + self.p


class _Ops:
    """Derivatives and products on a fixed grid, acting on _P values."""

    def __init__(self, grid: GridSpec, dealias_products: bool = True, linear: bool = False):
        self.grid = grid
        self.x = grid.x[:, None]
        self.D = dx_matrix(grid, 1)
        self.dealias = dealias_products
        self.linear = linear    # drop perturbation x perturbation products

    def zero(self):
        return _P(0.0, np.zeros((self.grid.n_s, self.grid.n_y)))

    def dx(self, a: _P) -> _P:
        return _P(0.0, self.D @ a.p)

    def dy(self, a: _P) -> _P:
        # D_y = x d/dy
        return _P(0.0, self.x * dy_values(a.p, self.grid, 1))

    def shifted_dx(self, a: _P, shift: float) -> _P:
        """(D_x + shift) a."""
        return _P(shift * a.c, self.D @ a.p + shift * a.p)

    def mul(self, a: _P, b: _P) -> _P:
        if self.linear:
            return _P(a.c * b.c, a.c * b.p + b.c * a.p)
        pp = a.p * b.p
        if self.dealias:
            pp = dealias(pp, self.grid)
        return _P(a.c * b.c, a.c * b.p + b.c * a.p + pp)

    def times_x(self, a: _P) -> np.ndarray:
        return self.x * a.full()


@dataclass(frozen=True)
class FGPair:
    F: Field
    G: Field
    margin: float


def _gradients(values: np.ndarray, grid: GridSpec, margin_floor: float):
    x = grid.x[:, None]
    vx = (dx_matrix(grid, 1) @ values) / x
    vy = dy_values(values, grid, 1)
    margin = float(np.min(1.0 + vx))
    if not margin > margin_floor:
        raise GradientTooLargeError(
            f"min(1 + v_x) = {margin:.4g} <= margin floor {margin_floor}")
    return vx, vy, margin


def compute_FG(v: Field, margin_floor: float = MARGIN_FLOOR) -> FGPair:
    """F = (1 + v_x)^-1 and G = v_y (1 + v_x)^-1 with v_x = x^-1 D_x v."""
    vx, vy, margin = _gradients(v.values, v.grid, margin_floor)
    F = 1.0 / (1.0 + vx)
    return FGPair(v.with_values(F), v.with_values(vy * F), margin)


class _Parts:
    """All building blocks of the transformed operator for one v."""

    def __init__(self, v: Field, margin_floor: float, dealias_products: bool,
                 linear: bool = False):
        g = v.grid
        self.ops = ops = _Ops(g, dealias_products, linear)
        vx, vy, self.margin = _gradients(v.values, g, margin_floor)
        phi = -vx if linear else -vx / (1.0 + vx)
        self.F = _P(1.0, phi)                  # (1 + v_x)^-1
        self.Finv = _P(1.0, vx)                # 1 + v_x
        self.G = _P(0.0, vy * (1.0 + phi) if not linear else vy)   # v_y (1 + v_x)^-1
        F, G = self.F, self.G
        # B1 = D_y G ; B2 = G (D_x + 1/2) G + F (D_x + 1/2) F
        self.B1 = ops.dy(G)
        self.B2 = ops.mul(G, ops.shifted_dx(G, 0.5)) + ops.mul(F, ops.shifted_dx(F, 0.5))

    def A1(self, b: _P) -> _P:
        ops, G = self.ops, self.G
        t1 = ops.dy(ops.dy(b))
        t2 = ops.dy(ops.mul(G, ops.shifted_dx(b, -0.5)))
        t3 = ops.mul(G, ops.dy(ops.shifted_dx(b, 1.5)))
        return t1 - t2 - t3

    def A2(self, b: _P) -> _P:
        ops, F, G = self.ops, self.F, self.G
        inner_g = ops.mul(G, ops.shifted_dx(b, -0.5))
        inner_f = ops.mul(F, ops.shifted_dx(b, -0.5))
        return (ops.mul(G, ops.shifted_dx(inner_g, 1.5))
                + ops.mul(F, ops.shifted_dx(inner_f, 1.5)))

    def finv(self, a: _P) -> _P:
        return self.ops.mul(self.Finv, a)

    def spatial(self) -> _P:
        """F^-1 (A1 + A2)(B1 - B2) as constant + perturbation."""
        b = self.B1 - self.B2
        return self.finv(self.A1(b) + self.A2(b))

    def M(self, H1: _P | None, H2: _P, H3: _P, H4: _P) -> np.ndarray:
        """x H1 (D_x + 3/2)[H2 (D_x - 1/2)[H3 (D_x + 1/2) H4]]; H1=None means 1."""
        ops = self.ops
        a = ops.mul(H3, ops.shifted_dx(H4, 0.5))
        a = ops.mul(H2, ops.shifted_dx(a, -0.5))
        a = ops.shifted_dx(a, 1.5)
        if H1 is not None:
            a = ops.mul(H1, a)
        return a


def transformed_spatial(v: Field, margin_floor: float = MARGIN_FLOOR,
                        dealias_products: bool = True) -> Field:
    """F^-1 (A1 + A2)(B1 - B2); equals 3/8 at v = 0."""
    return v.with_values(_Parts(v, margin_floor, dealias_products).spatial().full())


def linear_op_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """q(D_x) v + D_y^2 r(D_x) v + D_y^4 v on real samples."""
    x = grid.x[:, None]
    out = poly_matrix(make_symbol("q"), grid) @ values
    rv = poly_matrix(make_symbol("r"), grid) @ values
    out = out + x ** 2 * dy_values(rv, grid, 2)
    return out + x ** 4 * dy_values(values, grid, 4)


def linear_op(v):
    """L v = q(D_x) v + D_y^2 r(D_x) v + D_y^4 v (physical or spectral)."""
    g = v.grid
    if isinstance(v, SpectralField):
        x = g.x[:, None]
        e2 = (x * g.eta[None, :]) ** 2
        m = v.modes
        out = (poly_matrix(make_symbol("q"), g) @ m
               - e2 * (poly_matrix(make_symbol("r"), g) @ m) + e2 ** 2 * m)
        return v.with_modes(out)
    return v.with_values(linear_op_values(v.values, g))


def _N_values(v: Field, margin_floor: float, dealias_products: bool) -> np.ndarray:
    parts = _Parts(v, margin_floor, dealias_products)
    sp = parts.spatial()
    x = v.grid.x[:, None]
    # -x F^-1 A(B) + 3/8 x with the constant 3/8 cancelled exactly
    lead = -x * ((sp.c - TW_CONSTANT) + sp.p)
    return lead + linear_op_values(v.values, v.grid)


def nonlin_N(v: Field, margin_floor: float = MARGIN_FLOOR, dealias_products: bool = True) -> Field:
    """N(v) = -x F^-1 A(B) + (3/8) x + L v."""
    return v.with_values(_N_values(v, margin_floor, dealias_products))


def residual_operator(v: Field, margin_floor: float = MARGIN_FLOOR,
                      dealias_products: bool = True) -> Field:
    """R(v) = x (F^-1 A(B) - 3/8); the equation reads x d_t v + R(v) = 0.

    R(v) = L v - N(v), so R linearizes to L at v = 0.
    """
    parts = _Parts(v, margin_floor, dealias_products)
    sp = parts.spatial()
    return v.with_values(v.grid.x[:, None] * ((sp.c - TW_CONSTANT) + sp.p))


def discrete_linearization(v: Field, dealias_products: bool = True) -> Field:
    """The exact linearization at 0 of the discrete residual_operator, applied to v.

    Built from the same composed first-order stencils as residual_operator,
    so it differs from linear_op (direct high-order stencils) by O(ds^4).
    """
    parts = _Parts(v, -np.inf, dealias_products, linear=True)
    return v.with_values(v.grid.x[:, None] * parts.spatial().p)


def nonlin_N_quadratic(v: Field, margin_floor: float = MARGIN_FLOOR,
                       dealias_products: bool = True) -> Field:
    """N with its linear part taken from discrete_linearization instead of linear_op.

    Both forms agree up to O(ds^4 |v|). This one is quadratic in v at the
    discrete level (no linear stencil-mismatch term), which is what an
    explicit treatment of the nonlinearity needs for stability.
    """
    parts = _Parts(v, margin_floor, dealias_products)
    sp = parts.spatial()
    x = v.grid.x[:, None]
    lead = -x * ((sp.c - TW_CONSTANT) + sp.p)
    return v.with_values(lead + discrete_linearization(v, dealias_products).values)


def nonlin_N_split(v: Field, margin_floor: float = MARGIN_FLOOR,
                   dealias_products: bool = True):
    """(N1, N2) with N = N1 + N2.

    N1 = -x F^-1 (A1 B1 + A2 B1 - A1 B2) + D_y^2 r(D_x) v + D_y^4 v
    N2 = x F^-1 A2 B2 + (3/8) x + q(D_x) v, assembled from the 4-linear form
    M(1,F,F,F) + q v + 3/8 x + M(F^-1 G,G,G,G) + M(1,F,G,G) + M(F^-1 G,G,F,F).
    """
    parts = _Parts(v, margin_floor, dealias_products)
    g = v.grid
    x = g.x[:, None]
    ops, F, G = parts.ops, parts.F, parts.G
    B1, B2 = parts.B1, parts.B2
    inner = parts.A1(B1) + parts.A2(B1) - parts.A1(B2)
    rv = poly_matrix(make_symbol("r"), g) @ v.values
    n1 = (-x * parts.finv(inner).full() + x ** 2 * dy_values(rv, g, 2)
          + x ** 4 * dy_values(v.values, g, 4))
    FinvG = ops.mul(parts.Finv, G)
    m_fff = parts.M(None, F, F, F)
    # M(1,F,F,F) has constant part -3/8, cancelled exactly by + 3/8 x
    n2 = x * ((m_fff.c + TW_CONSTANT) + m_fff.p)
    n2 = n2 + poly_matrix(make_symbol("q"), g) @ v.values
    n2 = n2 + x * parts.M(FinvG, G, G, G).full()
    n2 = n2 + x * parts.M(None, F, G, G).full()
    n2 = n2 + x * parts.M(FinvG, G, F, F).full()
    return v.with_values(n1), v.with_values(n2)
