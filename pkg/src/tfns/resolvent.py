"""Per-mode solver for lambda x v + q(D_x) v - eta^2 x^2 r(D_x) v + eta^4 x^4 v = f.

Production path: finite differences on the s-grid with two closures.
  left  (small x): the lowest rows force v onto the least-squares fit of
        span{1, x, x^(1+beta), x^2} through the next points, which rules
        out the singular local behaviours x^(-1/2) and x^(1/2-beta);
  right (large x): homogeneous Dirichlet rows.
Validation path: the double power series in (x, x^beta) near x = 0 and
the fundamental solution of (d^2/dx^2 - 1)^2.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .grid import GridSpec, stencil_weights
from .norms import TRACE_EXPONENTS
from .polyops import BETA, make_symbol

N_LEFT = 4       # closure rows at the small-x end
N_FIT = 8        # points the left projection is fitted through
FIT_SPAN = 0.45  # minimal s-length covered by the fit points
N_RIGHT = 4      # Dirichlet rows at the large-x end
HALF_WIDTH = 3   # half width of the centered stencils used in the operator rows
RESIDUAL_TOL = 1e-8


class AssemblyError(RuntimeError):
    """Resolvent matrix is singular."""


class ResolventConvergenceError(RuntimeError):
    """Neither the banded nor the dense solve met the residual tolerance."""


def _centered(order: int, ds: float) -> np.ndarray:
    """Interior stencil for d^order/ds^order padded to 2*HALF_WIDTH+1 points."""
    if order == 0:
        w = np.zeros(2 * HALF_WIDTH + 1)
        w[HALF_WIDTH] = 1.0
        return w
    n = 2 * ((order + 1) // 2) - 1 + 4
    h = n // 2
    w = stencil_weights(range(-h, h + 1), order, ds)
    w[h] -= w.sum()
    return np.pad(w, (HALF_WIDTH - h, HALF_WIDTH - h))


def fit_stride(grid: GridSpec) -> int:
    """Spacing of the left fit points, in grid cells.

    On a short s-interval the four powers behave like a cubic in s, which
    also fits the singular modes x^-1/2, x^(1/2-beta); the fit points must
    cover a fixed s-length for the closure to reject them on fine grids.
    """
    return max(1, int(math.ceil(FIT_SPAN / ((N_FIT - 1) * grid.ds) - 1e-9)))


def fit_columns(grid: GridSpec) -> np.ndarray:
    return N_LEFT + fit_stride(grid) * np.arange(N_FIT)


def left_projection(grid: GridSpec) -> np.ndarray:
    """P with v[:N_LEFT] = P @ v[fit_columns] for v in the fit span."""
    x = grid.x
    xf = x[fit_columns(grid)]
    xl = x[:N_LEFT]
    E = np.asarray(TRACE_EXPONENTS)
    Bf = xf[:, None] ** E
    scale = np.linalg.norm(Bf, axis=0)
    Bl = xl[:, None] ** E
    return (Bl / scale) @ np.linalg.pinv(Bf / scale)


@dataclass
class ResolventSystem:
    grid: GridSpec
    eta: float
    lam: float
    matrix: sp.csr_matrix
    closure_kind: tuple = ("series_left", "dirichlet_right")
    row_scale: np.ndarray | None = None
    scaled_norm: float = 1.0
    _lu: object = None
    _dense: np.ndarray | None = None

    @property
    def lower(self) -> int:
        return HALF_WIDTH

    @property
    def upper(self) -> int:
        return int(fit_columns(self.grid)[-1])

    def bandwidth(self) -> tuple[int, int]:
        m = self.matrix.tocoo()
        d = m.col - m.row
        return int(max(0, -d.min())), int(max(0, d.max()))

    def banded(self) -> np.ndarray:
        """LAPACK banded storage (lower + upper + 1 rows)."""
        lo, up = self.lower, self.upper
        n = self.matrix.shape[0]
        ab = np.zeros((lo + up + 1, n))
        m = self.matrix.tocoo()
        ab[up + m.row - m.col, m.col] = m.data
        return ab


def operator_rows(grid: GridSpec, eta: float, lam: float) -> sp.csr_matrix:
    """Unclosed operator on all rows (centered stencils, valid in the interior)."""
    n, ds, x = grid.n_s, float(grid.ds), grid.x
    q, r = make_symbol("q").coeffs, make_symbol("r").coeffs
    e2 = eta * eta
    qw = sum(c * _centered(j, ds) for j, c in enumerate(q))
    rw = sum(c * _centered(j, ds) for j, c in enumerate(r))
    offsets = range(-HALF_WIDTH, HALF_WIDTH + 1)
    diags = []
    for m, o in enumerate(offsets):
        d = np.full(n, qw[m]) - e2 * x ** 2 * rw[m]
        if o == 0:
            d = d + lam * x + e2 * e2 * x ** 4
        diags.append(d)
    # row i, column i+o gets diags[m][i]
    return sp.diags([d[max(0, -o):n - max(0, o)] for d, o in zip(diags, offsets)],
                    list(offsets), shape=(n, n), format="lil")


def assemble(grid: GridSpec, eta: float, lam: float) -> ResolventSystem:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    n = grid.n_s
    cols = fit_columns(grid)
    if n < cols[-1] + 1 + N_RIGHT + 2 * HALF_WIDTH:
        raise ValueError("grid too small for the resolvent closures")
    A = operator_rows(grid, abs(eta), lam)
    P = left_projection(grid)
    for i in range(N_LEFT):
        A.rows[i] = []
        A.data[i] = []
        A[i, i] = 1.0
        for j, c in enumerate(cols):
            A[i, int(c)] = -P[i, j]
    for i in range(n - N_RIGHT, n):
        A.rows[i] = []
        A.data[i] = []
        A[i, i] = 1.0
    A = A.tocsr()
    A.eliminate_zeros()
    # row equilibration: x^4 eta^4 at large x and ds^-4 at small x differ by
    # many orders of magnitude; factor diag(rs) A instead of A
    rs = 1.0 / np.asarray(abs(A).max(axis=1).todense()).ravel()
    sn = float(np.max(np.asarray(abs(A).sum(axis=1)).ravel() * rs))
    sys = ResolventSystem(grid, float(eta), float(lam), A, row_scale=rs, scaled_norm=sn)
    try:
        sys._lu = sp.linalg.splu((sp.diags(rs) @ A).tocsc())
    except RuntimeError as exc:
        raise AssemblyError(f"singular resolvent matrix (eta={eta}, lambda={lam})") from exc
    return sys


def _rhs(sys: ResolventSystem, f: np.ndarray) -> np.ndarray:
    b = np.array(f, dtype=np.result_type(f, float), copy=True)
    b[:N_LEFT] = 0.0
    b[-N_RIGHT:] = 0.0
    return b


def solve(sys: ResolventSystem, f, return_info: bool = False):
    """Solve the closed system for one profile (or several as columns)."""
    f = np.asarray(f)
    if not np.all(np.isfinite(f)):
        raise ValueError("right-hand side is not finite")
    b = _rhs(sys, f)
    scale = np.max(np.abs(b)) if b.size else 0.0
    if scale == 0.0:
        v = np.zeros_like(b)
        return (v, {"residual": 0.0, "dense": False}) if return_info else v
    rs = sys.row_scale if b.ndim == 1 else sys.row_scale[:, None]
    bs = rs * b
    if np.iscomplexobj(bs):
        v = sys._lu.solve(np.ascontiguousarray(bs.real)) + 1j * sys._lu.solve(np.ascontiguousarray(bs.imag))
    else:
        v = sys._lu.solve(bs)
    err = _backward_error(sys, v, bs)
    dense = False
    if err > RESIDUAL_TOL:
        dense = True
        if sys._dense is None:
            sys._dense = sys.row_scale[:, None] * sys.matrix.toarray()
        v = sla.solve(sys._dense, bs)
        err = _backward_error(sys, v, bs)
        if err > RESIDUAL_TOL:
            raise ResolventConvergenceError(f"backward error {err:.3g} after dense solve")
    res = float(np.max(np.abs(sys.matrix @ v - b)) / scale)
    return (v, {"residual": res, "backward_error": err, "dense": dense}) if return_info else v


def _backward_error(sys: ResolventSystem, v, bs) -> float:
    """Normwise backward error of the row-equilibrated system."""
    As = sys.row_scale[:, None] if np.ndim(v) > 1 else sys.row_scale
    r = As * (sys.matrix @ v) - bs
    num = float(np.max(np.abs(r)))
    den = float(np.max(np.abs(v))) * sys.scaled_norm + float(np.max(np.abs(bs)))
    return num / den if den > 0 else 0.0


def apply_closed(sys: ResolventSystem, v) -> np.ndarray:
    """Closed matrix applied to v; solve() inverts exactly this map on the interior rows."""
    return sys.matrix @ v


class FactorCache:
    """Factorizations keyed by (|eta|, lambda, grid); thread-safe warm-up."""

    def __init__(self):
        self._d: dict = {}
        self._lock = threading.Lock()

    def get(self, grid: GridSpec, eta: float, lam: float) -> ResolventSystem:
        key = (round(abs(eta), 14), float(lam), grid)
        sys = self._d.get(key)
        if sys is None:
            with self._lock:
                sys = self._d.get(key)
                if sys is None:
                    sys = assemble(grid, abs(eta), lam)
                    self._d[key] = sys
        return sys

    def __len__(self):
        return len(self._d)


def log_slope(x: np.ndarray, v: np.ndarray, lo: float, hi: float) -> float:
    """Least-squares slope of ln|v| against x over [lo, hi]."""
    m = (x >= lo) & (x <= hi) & (np.abs(v) > 0)
    if m.sum() < 3:
        raise ValueError("too few points for a decay-rate fit")
    return float(np.polyfit(x[m], np.log(np.abs(v[m])), 1)[0])


# ------------------------------------------------------- series near x = 0

class ContractionError(ValueError):
    """The series map is not a contraction for this radius."""


class SeriesIterationError(RuntimeError):
    """Fixed-point iteration on the coefficient arrays did not converge."""


@dataclass(frozen=True)
class SeriesSolution:
    """sum_{k,l} coeffs[k, l] x^k (x^beta)^l, coefficients are Taylor coefficients."""
    coeffs: np.ndarray
    eps: float
    a1: float
    a2: float
    theta: float = float("nan")
    C2: float = float("nan")
    iterations: int = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        N = self.coeffs.shape[0]
        k = np.arange(N)
        e = k[:, None] + BETA * k[None, :]
        return np.tensordot(x[..., None, None] ** e, self.coeffs, axes=2) if x.ndim else \
            float(np.sum(self.coeffs * x ** e))

    def coefficient(self, exponent: float) -> float:
        """Sum of coefficients multiplying x^exponent."""
        N = self.coeffs.shape[0]
        k = np.arange(N)
        e = k[:, None] + BETA * k[None, :]
        return float(np.sum(self.coeffs[np.abs(e - exponent) < 1e-12]))


def _exponents(N: int) -> np.ndarray:
    k = np.arange(N + 1)
    return k[:, None] + BETA * k[None, :]


def _omega_weights(N: int, eps: float, L: float) -> np.ndarray:
    e = _exponents(N)
    k = np.arange(N + 1)
    base = eps ** k[:, None] * L ** k[None, :]
    return base * sum(np.abs(e) ** m for m in range(5))


def _series_linear(c: np.ndarray, eta: float, lam: float) -> np.ndarray:
    """-lambda x1 c + eta^2 x1^2 r(Dbar) c - eta^4 x1^4 c, truncated."""
    e = _exponents(c.shape[0] - 1)
    r = make_symbol("r")
    out = np.zeros_like(c)
    out[1:] -= lam * c[:-1]
    out[2:] += eta ** 2 * (r(e) * c)[:-2]
    out[4:] -= eta ** 4 * c[:-4]
    return out


def _series_T(c: np.ndarray) -> np.ndarray:
    """Inverse of q(Dbar) on the non-resonant slots; (0,0) and (1,1) set to 0."""
    e = _exponents(c.shape[0] - 1)
    qe = make_symbol("q")(e)
    out = np.zeros_like(c)
    mask = np.ones_like(c, dtype=bool)
    mask[0, 0] = False
    if c.shape[0] > 1:
        mask[1, 1] = False
    out[mask] = c[mask] / qe[mask]
    return out


def series_near_zero(fbar, a1: float, a2: float, eta: float, N: int = 12,
                     eps: float = 0.1, lam: float = 1.0, L: float | None = None,
                     tol: float = 1e-12, max_iter: int = 200) -> SeriesSolution:
    """Fixed point vbar = a1 + a2 x1 x2 + T[fbar] + T[-lam x1 vbar + eta^2 x1^2 r vbar - eta^4 x1^4 vbar].

    fbar: Taylor coefficients (array up to (N+1, N+1)) of the right-hand side
    in x1 = x, x2 = x^beta.
    """
    if N < 2:
        raise ValueError("need N >= 2")
    f = np.zeros((N + 1, N + 1))
    fb = np.asarray(fbar, dtype=float)
    if fb.ndim != 2:
        raise ValueError("fbar must be a 2-D coefficient array")
    n0, n1 = min(fb.shape[0], N + 1), min(fb.shape[1], N + 1)
    f[:n0, :n1] = fb[:n0, :n1]
    scale = max(1.0, float(np.max(np.abs(f))))
    if abs(f[0, 0]) > 1e-14 * scale or abs(f[1, 1]) > 1e-14 * scale:
        raise ValueError("incompatible right-hand side: need fbar(0,0) = d1 d2 fbar(0,0) = 0")
    L = eps ** BETA if L is None else L
    w = _omega_weights(N, eps, L)
    # induced weighted-l1 norm of the linear part of the map
    theta = 0.0
    for k in range(N + 1):
        for l in range(N + 1):
            e = np.zeros((N + 1, N + 1))
            e[k, l] = 1.0
            img = _series_T(_series_linear(e, eta, lam))
            theta = max(theta, float(np.sum(w * np.abs(img)) / w[k, l]))
    C2 = theta / (eps + eta ** 2 * eps ** 2 + eta ** 4 * eps ** 4)
    if not theta < 1.0:
        raise ContractionError(
            f"C2 (eps + eta^2 eps^2 + eta^4 eps^4) = {theta:.3g} >= 1; reduce eps")
    base = _series_T(f)
    base[0, 0] += a1
    base[1, 1] += a2
    v = base.copy()
    for it in range(1, max_iter + 1):
        new = base + _series_T(_series_linear(v, eta, lam))
        dist = float(np.sum(w * np.abs(new - v)))
        v = new
        if dist < tol:
            return SeriesSolution(v, eps, a1, a2, theta, C2, it)
    raise SeriesIterationError("series fixed point did not converge")


# ------------------------------------------------------ fundamental solution

def fundamental_g(x):
    """g = (1/4) e^-|x| (1 + |x|), solving (d^2/dx^2 - 1)^2 g = delta."""
    ax = np.abs(x)
    return 0.25 * np.exp(-ax) * (1.0 + ax)
