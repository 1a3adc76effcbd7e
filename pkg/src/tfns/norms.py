"""Weighted norms, inner products, trace fits and Hardy probes.

Quadrature is the trapezoid rule in s = ln x. With dx/x = ds the weight
x^(-2 alpha) becomes exp(-2 alpha s); the two-dimensional norms carry the
extra x^(-2), i.e. exp(-(2 alpha + 1) s).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import Field, GridSpec, dx_matrix, dy_values, poly_matrix
from .polyops import BETA, RealPolynomial, make_symbol

MAX_K = 8

DELTA_MAX = (BETA - 0.5) / 2
DELTA_DEFAULT = (BETA - 0.5) / 4


class ParameterError(ValueError):
    """Norm parameters violate the admissibility bounds."""


@dataclass(frozen=True)
class NormSpec:
    k: int
    alpha: float

    def __post_init__(self):
        if not 0 <= self.k <= MAX_K:
            raise ValueError(f"k must lie in [0, {MAX_K}], got {self.k}")


@dataclass(frozen=True)
class NormParams:
    """Derivative counts and weight shift of the solution/data norms.

    The nominal counts (19, 13, 13, 4) are far beyond what a finite
    difference grid can resolve, so every addend is evaluated with
    min(nominal count, deriv_cap) derivatives.
    """
    k: int = 19
    k_tilde: int = 13
    k_check: int = 13
    k_breve: int = 4
    delta: float = DELTA_DEFAULT
    deriv_cap: int = 2
    s_lo: float = -np.inf   # quadrature window in s (derivatives still use the full grid)
    s_hi: float = np.inf

    def violations(self) -> list[str]:
        k, kt, kc, kb = self.k, self.k_tilde, self.k_check, self.k_breve
        out = []
        if not max(13, (k + 1) // 2 + 3, kb + 8) <= min(kt, kc):
            out.append("max{13, floor((k+1)/2)+3, k_breve+8} <= min{k_tilde, k_check}")
        if not max(kt, kc + 2) + 4 <= k:
            out.append("max{k_tilde, k_check+2} + 4 <= k")
        if not 4 <= kb:
            out.append("4 <= k_breve")
        if not 0 < self.delta <= DELTA_MAX:
            out.append("0 < delta <= (beta - 1/2)/2")
        return out

    def validate(self, strict: bool = True) -> "NormParams":
        if not 0 < self.delta <= DELTA_MAX:
            raise ParameterError(f"delta={self.delta} outside (0, (beta-1/2)/2]")
        if not 0 <= self.deriv_cap <= MAX_K:
            raise ParameterError(f"deriv_cap must lie in [0, {MAX_K}]")
        if not self.s_lo < self.s_hi:
            raise ParameterError("need s_lo < s_hi")
        if strict:
            bad = self.violations()
            if bad:
                raise ParameterError("parameter bound violated: " + "; ".join(bad))
        return self

    def cap(self, n: int) -> int:
        return max(0, min(n, self.deriv_cap))


def _s_of(where) -> np.ndarray:
    if isinstance(where, GridSpec):
        return where.s
    return np.asarray(where, dtype=float)


def inner_product_alpha(f, g, alpha: float, s) -> float:
    """(f, g)_alpha = int x^(-2 alpha) f g dx/x, trapezoid in s."""
    s = _s_of(s)
    return float(np.trapezoid(np.exp(-2 * alpha * s) * np.asarray(f) * np.asarray(g), s))


def norm_alpha(f, alpha: float, s) -> float:
    return float(np.sqrt(max(inner_product_alpha(f, f, alpha, s), 0.0)))


def _weighted_sq(values: np.ndarray, grid: GridSpec, spec: NormSpec,
                 s_lo: float = -np.inf, s_hi: float = np.inf) -> float:
    """Squared norm of samples (n_s, n_y) for the given spec.

    Derivatives use the whole grid; the quadrature runs over s in [s_lo, s_hi].
    """
    if not np.any(values):
        return 0.0
    s, x = grid.s, grid.x
    w = np.exp(-(2 * spec.alpha + 1) * s)
    sl = (s >= s_lo) & (s <= s_hi)
    total = 0.0
    for lx in range(spec.k + 1):
        dxv = values if lx == 0 else dx_matrix(grid, lx) @ values
        for ly in range(spec.k - lx + 1):
            d = dxv if ly == 0 else dy_values(dxv, grid, ly) * x[:, None] ** ly
            col = np.sum(d * d, axis=1) * grid.dy
            total += float(np.trapezoid((w * col)[sl], s[sl]))
    return total


def weighted_norm_2d(f: Field, spec: NormSpec) -> float:
    """sqrt(sum_{|l|<=k} int int x^(-2 alpha) (D_y^ly D_x^lx f)^2 x^-2 dx dy)."""
    return float(np.sqrt(_weighted_sq(f.values, f.grid, spec)))


# ------------------------------------------------------------ norm addends

def _p(*roots) -> RealPolynomial:
    return RealPolynomial.from_roots(roots)


def _qt_dx() -> RealPolynomial:
    return make_symbol("q_tilde") * _p(0.0)


def _init_terms(params: NormParams):
    """(name, polynomial in D_x, extra D_y, nominal k, alpha) for the data norm."""
    d = params.delta
    qd = _qt_dx()
    return [
        ("v", RealPolynomial([1.0]), False, params.k, -1 - d),
        ("Dx_v", _p(0.0), False, params.k_tilde, -d),
        ("qt_Dx_v", qd, False, params.k_tilde, d),
        ("qt_Dx_v_check", qd, False, params.k_check, 1 - d),
        ("Dx3_Dx2_qt_Dx_v", _p(3.0, 2.0) * qd, False, params.k_check, d + 1),
        ("Dy_qt_Dx_v", qd, True, params.k_breve, 2 - d),
    ]


def _rhs_terms(params: NormParams):
    d = params.delta
    q1 = make_symbol("q_tilde").shift(-1.0) * _p(1.0)
    return [
        ("f", RealPolynomial([1.0]), False, params.k - 2, -d - 0.5),
        ("Dx1_f", _p(1.0), False, params.k_tilde - 2, -d + 0.5),
        ("qt1_Dx1_f", q1, False, params.k_tilde - 2, d + 0.5),
        ("qt1_Dx1_f_check", q1, False, params.k_check - 2, -d + 1.5),
        ("Dx4_Dx3_qt1_Dx1_f", _p(4.0, 3.0) * q1, False, params.k_check - 2, d + 1.5),
        ("Dy_qt1_Dx1_f", q1, True, params.k_breve - 2, -d + 2.5),
    ]


def _eval_terms(values: np.ndarray, grid: GridSpec, terms, params: NormParams,
                dk: int = 0, dalpha: float = 0.0, prefix: str = "") -> dict:
    out = {}
    for name, poly, with_dy, k, alpha in terms:
        g = poly_matrix(poly, grid) @ values
        if with_dy:
            g = dy_values(g, grid, 1) * grid.x[:, None]
        out[prefix + name] = _weighted_sq(g, grid, NormSpec(params.cap(k + dk), alpha + dalpha),
                                          params.s_lo, params.s_hi)
    return out


def norm_init_addends(f: Field, params: NormParams = NormParams()) -> dict:
    """Squared addends of the data norm, keyed by a descriptive name."""
    return _eval_terms(f.values, f.grid, _init_terms(params), params)


def norm_init(f: Field, params: NormParams = NormParams(), strict: bool = False) -> float:
    """Six-addend data norm (not squared)."""
    params.validate(strict)
    return float(np.sqrt(sum(norm_init_addends(f, params).values())))


def norm_rhs_addends(f: Field, params: NormParams = NormParams()) -> dict:
    return _eval_terms(f.values, f.grid, _rhs_terms(params), params)


def norm_rhs_contribution(f: Field, params: NormParams = NormParams(), strict: bool = False) -> float:
    """Per-time-slice integrand (sum of squared addends) of the data-side time norm."""
    params.validate(strict)
    return float(sum(norm_rhs_addends(f, params).values()))


def norm_sol_addends(v: Field, v_prev: Field, dt: float, params: NormParams = NormParams()) -> dict:
    terms = _init_terms(params)
    vt = (v.values - v_prev.values) / dt
    out = _eval_terms(vt, v.grid, terms, params, dk=-2, dalpha=-0.5, prefix="dt_")
    out.update(_eval_terms(v.values, v.grid, terms, params, dk=2, dalpha=0.5))
    return out


def norm_sol_contribution(v: Field, v_prev: Field, dt: float,
                          params: NormParams = NormParams(), strict: bool = False) -> float:
    """Per-time-slice integrand of the solution norm; d/dt by backward difference."""
    params.validate(strict)
    if not dt > 0:
        raise ValueError("dt must be positive")
    return float(sum(norm_sol_addends(v, v_prev, dt, params).values()))


# ------------------------------------------------------------------ traces

class DegenerateWindowError(ValueError):
    """Trace fit window is too small, misplaced, or ill-conditioned."""


TRACE_EXPONENTS = (0.0, 1.0, 1.0 + BETA, 2.0)
DEFAULT_TRACE_POINTS = 16


@dataclass(frozen=True)
class TraceSet:
    v0: np.ndarray
    v1: np.ndarray
    v1beta: np.ndarray
    v2: np.ndarray
    fit_residual: float
    window: tuple = (np.nan, np.nan)

    def __post_init__(self):
        for a in (self.v0, self.v1, self.v1beta, self.v2):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite trace")
        if not self.fit_residual >= 0:
            raise ValueError("fit residual must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.vstack([self.v0, self.v1, self.v1beta, self.v2])


def default_window(grid: GridSpec, n_points: int = DEFAULT_TRACE_POINTS) -> tuple:
    s = grid.s
    return (float(s[0]), float(s[n_points - 1]))


def _window_index(grid: GridSpec, fit_window) -> np.ndarray:
    s = grid.s
    if fit_window is None:
        fit_window = default_window(grid)
    lo, hi = fit_window
    tol = 1e-9 * grid.ds
    idx = np.nonzero((s >= lo - tol) & (s <= hi + tol))[0]
    if idx.size < 8:
        raise DegenerateWindowError(f"fit window holds {idx.size} < 8 grid points")
    if s[idx[-1]] > grid.s_min + 0.25 * (grid.s_max - grid.s_min) + tol:
        raise DegenerateWindowError("fit window must lie in the lowest quarter of the s-range")
    return idx


def fit_powers(x: np.ndarray, values: np.ndarray, exponents: Sequence[float],
               max_cond: float = 1e10):
    """Least-squares coefficients of values (n, m) on x^exponents.

    Returns (coeffs (len(exponents), m), rms residual per column).
    """
    B = x[:, None] ** np.asarray(exponents)[None, :]
    scale = np.linalg.norm(B, axis=0)
    Bn = B / scale
    if np.linalg.cond(Bn) > max_cond:
        raise DegenerateWindowError("trace fit is ill-conditioned (condition number > 1e10)")
    c, *_ = np.linalg.lstsq(Bn, values, rcond=None)
    c = c / scale[:, None] if c.ndim == 2 else c / scale
    r = values - B @ c
    return c, np.sqrt(np.mean(r * r, axis=0))


def extract_traces(f: Field, fit_window=None) -> TraceSet:
    """Fit v0 + v1 x + v_(1+beta) x^(1+beta) + v2 x^2 per y-line over the window."""
    g = f.grid
    idx = _window_index(g, fit_window)
    c, res = fit_powers(g.x[idx], f.values[idx, :], TRACE_EXPONENTS)
    return TraceSet(c[0], c[1], c[2], c[3], float(np.max(res)),
                    (float(g.s[idx[0]]), float(g.s[idx[-1]])))


# ------------------------------------------------------------------- Hardy

class HardyKernelError(ValueError):
    """(D_x - gamma) f vanishes numerically; the ratio is undefined."""


def hardy_ratio(f, gamma: float, rho: float, s) -> float:
    """|f|_(1,rho) / |(D_x - gamma) f|_rho for a 1-D profile on the s-grid."""
    if gamma == rho:
        raise ValueError("need gamma != rho")
    s = _s_of(s)
    f = np.asarray(f, dtype=float)
    n = s.size
    D = dx_matrix(GridSpec(float(s[0]), float(s[-1]), n, 2 * np.pi, 2), 1)
    df = D @ f
    num = np.sqrt(inner_product_alpha(f, f, rho, s) + inner_product_alpha(df, df, rho, s))
    den = norm_alpha(df - gamma * f, rho, s)
    if not num > 0:
        raise ValueError("zero profile")
    # stencil truncation leaves ~1e-7 of a non-fitted power in (D_x - gamma) x^gamma
    if den <= 1e-5 * num:
        raise HardyKernelError("denominator vanishes: f lies in the kernel of D_x - gamma")
    return float(num / den)


# -------------------------------------------------------------- coercivity

def coercivity_terms(f, roots: Sequence[float], alpha: float, s):
    """Both sides of the integration-by-parts splitting of a monic quartic symbol P.

    lhs = (P(D_x) f, f)_alpha with P(D_x) applied in factored form
    (D_x - g1)...(D_x - g4), and
    rhs = |(D_x - alpha)^2 f|^2 + omega(alpha) |(D_x - alpha) f|^2 + P(alpha) |f|^2,
    all in the alpha-weighted norm. Exact for compactly supported f since
    D_x - alpha is skew in that inner product. Returns (lhs, rhs, scale)
    with scale = sum_{j<=2} |(D_x - alpha)^j f|^2_alpha.
    """
    from .polyops import omega
    s = _s_of(s)
    f = np.asarray(f, dtype=float)
    g = GridSpec(float(s[0]), float(s[-1]), s.size, 2 * np.pi, 2)
    D = dx_matrix(g, 1)
    h = f
    for r in roots:
        h = D @ h - r * h
    lhs = inner_product_alpha(h, f, alpha, s)
    a1 = D @ f - alpha * f
    a2 = D @ a1 - alpha * a1
    n0, n1, n2 = (inner_product_alpha(a, a, alpha, s) for a in (f, a1, a2))
    P = RealPolynomial.from_roots(roots)
    rhs = n2 + omega(roots, alpha) * n1 + P(alpha) * n0
    return lhs, float(rhs), float(n0 + n1 + n2)
