"""Logarithmic grid in x (s = ln x) times a periodic grid in y.

D_x = x d/dx is d/ds on the s-grid and is discretized by finite
differences; D_y = x d/dy is a spectral y-derivative followed by a
pointwise multiplication with x.

The finite-difference weights are exponentially fitted: a W-point stencil
for d^k/ds^k is exact on the W functions exp(gamma s), gamma taken from
FIT_EXPONENTS. Since exp(gamma s) = x^gamma, the stencils differentiate the
near-contact-line powers 1, x, x^(1+beta), x^2, ... without error, while
still being consistent of order W - k like ordinary polynomial stencils.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Union

import mpmath
import numpy as np
import scipy.sparse as sp

from .polyops import BETA, RealPolynomial

MAX_ORDER = 8

# fitted exponents, most important first; W-point stencils use the first W
FIT_EXPONENTS = (0.0, 1.0, 1.0 + BETA, 2.0, BETA, 3.0, 2.0 + BETA,
                 1.0 + 2 * BETA, 4.0, 2 * BETA, 3.0 + BETA, 5.0, 2.0 + 2 * BETA)


@dataclass(frozen=True)
class GridSpec:
    s_min: float = -12.0
    s_max: float = 6.0
    n_s: int = 257
    y_period: float = 2 * np.pi
    n_y: int = 64

    def __post_init__(self):
        if not self.s_min < self.s_max:
            raise ValueError("need s_min < s_max")
        if self.n_s < 2:
            raise ValueError("need n_s >= 2")
        if self.n_y < 2 or self.n_y % 2:
            raise ValueError("n_y must be even and >= 2")
        if not self.y_period > 0:
            raise ValueError("y_period must be positive")

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / (self.n_s - 1)

    @property
    def dy(self) -> float:
        return self.y_period / self.n_y

    @property
    def s(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, self.n_s)

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.s)

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.n_y) * self.dy

    @property
    def k(self) -> np.ndarray:
        """Integer wavenumbers in FFT storage order, Nyquist counted as +n_y/2."""
        k = np.fft.fftfreq(self.n_y, 1.0 / self.n_y)
        k[self.n_y // 2] = self.n_y // 2
        return k

    @property
    def eta(self) -> np.ndarray:
        return 2 * np.pi * self.k / self.y_period

    @property
    def eta_r(self) -> np.ndarray:
        """Nonnegative wavenumbers of the real transform (rfft order)."""
        return 2 * np.pi * np.arange(self.n_y // 2 + 1) / self.y_period

    def mesh(self):
        """(x, y) arrays of shape (n_s, n_y)."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.s_min, self.s_max, factor * (self.n_s - 1) + 1,
                        self.y_period, self.n_y)


@dataclass(frozen=True)
class Field:
    grid: GridSpec
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_s, self.grid.n_y):
            raise ValueError(f"values shape {v.shape} != {(self.grid.n_s, self.grid.n_y)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: GridSpec, fn, time: float = 0.0) -> "Field":
        x, y = grid.mesh()
        return cls(grid, np.broadcast_to(fn(x, y), x.shape).copy(), time)

    @classmethod
    def zeros(cls, grid: GridSpec, time: float = 0.0) -> "Field":
        return cls(grid, np.zeros((grid.n_s, grid.n_y)), time)

    def with_values(self, values) -> "Field":
        return Field(self.grid, values, self.time)


@dataclass(frozen=True)
class SpectralField:
    grid: GridSpec
    modes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.modes, dtype=complex)
        if m.shape != (self.grid.n_s, self.grid.n_y):
            raise ValueError("modes shape does not match grid")
        object.__setattr__(self, "modes", m)

    def with_modes(self, modes) -> "SpectralField":
        return SpectralField(self.grid, modes, self.time)


AnyField = Union[Field, SpectralField]


# ---------------------------------------------------------------- stencils

def stencil_weights(offsets, order: int, ds: float, fitted: bool = True) -> np.ndarray:
    """Weights w with sum_j w_j u(s + offsets_j ds) ~ u^(order)(s).

    fitted=True makes the rule exact on exp(gamma s) for the first
    len(offsets) entries of FIT_EXPONENTS; fitted=False gives the classical
    polynomial (Fornberg) weights. Solved in extended precision since the
    collocation matrix is badly conditioned for small ds.
    """
    offsets = list(offsets)
    n = len(offsets)
    if n > len(FIT_EXPONENTS) and fitted:
        raise ValueError("stencil too wide for the fitted exponent list")
    with mpmath.workdps(80):
        h = [mpmath.mpf(j) * mpmath.mpf(ds) for j in offsets]
        if fitted:
            g = [mpmath.mpf(e) for e in FIT_EXPONENTS[:n]]
            A = mpmath.matrix([[mpmath.exp(gm * hj) for hj in h] for gm in g])
            b = mpmath.matrix([gm ** order for gm in g])
        else:
            A = mpmath.matrix([[hj ** m for hj in h] for m in range(n)])
            b = mpmath.matrix([mpmath.factorial(order) if m == order else 0 for m in range(n)])
        w = mpmath.lu_solve(A, b)
        return np.array([float(wi) for wi in w])


def _interior_width(order: int) -> int:
    return 2 * ((order + 1) // 2) - 1 + 4


@lru_cache(maxsize=256)
def derivative_matrix(n: int, ds: float, order: int, fitted: bool = True) -> sp.csr_matrix:
    """Sparse n x n matrix for d^order/ds^order on a uniform grid.

    Centered stencils of width 2*ceil(order/2)+3 in the interior and
    one-sided stencils of width order+4 near the ends; both 4th-order
    consistent. Rows sum to zero exactly, so constants are annihilated.
    """
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"derivative order must be in [1, {MAX_ORDER}]")
    if n < order + 5:
        raise ValueError(f"grid too small: n_s={n} < order+5={order + 5}")
    wi = _interior_width(order)
    hw = wi // 2
    wb = order + 4
    interior = stencil_weights(range(-hw, hw + 1), order, ds, fitted)
    rows, cols, vals = [], [], []

    def put(i, offs, w):
        w = w.copy()
        c = offs.index(0)
        w[c] -= w.sum()
        rows.extend([i] * len(offs))
        cols.extend(i + o for o in offs)
        vals.extend(w)

    left = {}
    for i in range(n):
        if i < hw:
            offs = list(range(-i, -i + wb))
            if i not in left:
                left[i] = stencil_weights(offs, order, ds, fitted)
            put(i, offs, left[i])
        elif i >= n - hw:
            offs = list(range(n - 1 - i - wb + 1, n - i))
            put(i, offs, stencil_weights(offs, order, ds, fitted))
        else:
            put(i, list(range(-hw, hw + 1)), interior)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def dx_matrix(grid: GridSpec, order: int = 1, fitted: bool = True) -> sp.csr_matrix:
    return derivative_matrix(grid.n_s, float(grid.ds), int(order), fitted)


@lru_cache(maxsize=64)
def _poly_matrix(n: int, ds: float, coeffs: tuple, fitted: bool) -> sp.csr_matrix:
    m = sp.csr_matrix((n, n))
    for j, c in enumerate(coeffs):
        if c == 0.0:
            continue
        m = m + c * (sp.identity(n, format="csr") if j == 0
                     else derivative_matrix(n, ds, j, fitted))
    return m.tocsr()


def poly_matrix(p: RealPolynomial, grid: GridSpec, fitted: bool = True) -> sp.csr_matrix:
    """Matrix of p(D_x) = sum_j c_j D_x^j using direct stencils per power."""
    if p.degree > MAX_ORDER:
        raise ValueError("polynomial degree exceeds 8")
    return _poly_matrix(grid.n_s, float(grid.ds), tuple(p.coeffs.tolist()), fitted)


# --------------------------------------------------------------- operators

def _data(f: AnyField) -> np.ndarray:
    return f.values if isinstance(f, Field) else f.modes


def _wrap(f: AnyField, data: np.ndarray) -> AnyField:
    return f.with_values(data) if isinstance(f, Field) else f.with_modes(data)


def apply_Dx(f: AnyField, order: int = 1) -> AnyField:
    """D_x^order f, i.e. d^order/ds^order along the s-axis."""
    return _wrap(f, dx_matrix(f.grid, order) @ _data(f))


def apply_poly_op(p: RealPolynomial, f: AnyField) -> AnyField:
    """p(D_x) f."""
    return _wrap(f, poly_matrix(p, f.grid) @ _data(f))


def dy_values(values: np.ndarray, grid: GridSpec, order: int = 1) -> np.ndarray:
    """Spectral d^order/dy^order of real samples along axis 1."""
    if order == 0:
        return np.array(values, dtype=float)
    vh = np.fft.rfft(values, axis=1)
    mult = (1j * grid.eta_r) ** order
    if order % 2 and grid.n_y % 2 == 0:
        mult[-1] = 0.0  # odd derivatives of the Nyquist mode are not real
    return np.fft.irfft(vh * mult, n=grid.n_y, axis=1)


def apply_Dy(f: Field, order: int = 1) -> Field:
    """D_y^order f = x^order d^order f/dy^order (x commutes with d/dy)."""
    g = f.grid
    return f.with_values(dy_values(f.values, g, order) * g.x[:, None] ** order)


def apply_Dy_spectral(f: SpectralField, order: int = 1) -> SpectralField:
    g = f.grid
    return f.with_modes(f.modes * (1j * g.eta[None, :] * g.x[:, None]) ** order)


def fourier_y(f: Field) -> SpectralField:
    """Unitary DFT along y."""
    return SpectralField(f.grid, np.fft.fft(f.values, axis=1, norm="ortho"), f.time)


def inverse_fourier_y(f: SpectralField) -> Field:
    return Field(f.grid, np.fft.ifft(f.modes, axis=1, norm="ortho").real, f.time)


def dealias(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Two-thirds rule: zero the wavenumbers |k| > n_y/3."""
    vh = np.fft.rfft(values, axis=1)
    vh[:, np.arange(vh.shape[1]) > grid.n_y / 3.0] = 0.0
    return np.fft.irfft(vh, n=grid.n_y, axis=1)


# --------------------------------------------------------------------- I/O

DUMP_MAGIC = b"TFNSFLD1"
_DUMP_HEADER = struct.Struct("<8sII4d")


def write_dump(f: Field, path) -> None:
    """Binary snapshot: magic, n_s, n_y (uint32), s_min, s_max, y_period,
    time (float64), then n_s*n_y row-major float64, all little-endian."""
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(DUMP_MAGIC, g.n_s, g.n_y, g.s_min, g.s_max,
                                   g.y_period, f.time))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_dump(path) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < _DUMP_HEADER.size:
        raise ValueError("truncated dump")
    magic, n_s, n_y, s_min, s_max, period, t = _DUMP_HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ValueError("not a field dump (bad magic)")
    body = np.frombuffer(raw, dtype="<f8", offset=_DUMP_HEADER.size)
    if body.size != n_s * n_y:
        raise ValueError("dump size does not match header")
    return Field(GridSpec(s_min, s_max, n_s, period, n_y), body.reshape(n_s, n_y).astype(float), t)


def field_rows(f: Field):
    """Rows (s, x, y, value) with s varying slowest."""
    g = f.grid
    s, y = np.meshgrid(g.s, g.y, indexing="ij")
    return np.column_stack([s.ravel(), np.exp(s).ravel(), y.ravel(), f.values.ravel()])


def write_field_csv(f: Field, path, header: str | None = None) -> None:
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("s,x,y,value\n")
        np.savetxt(fh, field_rows(f), delimiter=",", fmt="%.17g")


def read_field_csv(path, grid: GridSpec) -> Field:
    data = np.loadtxt(path, delimiter=",", ndmin=2, usecols=(0, 1, 2, 3),
                      encoding="utf-8", **_skip_header(path))
    if data.shape[0] != grid.n_s * grid.n_y:
        raise ValueError("CSV row count does not match grid")
    return Field(grid, data[:, 3].reshape(grid.n_s, grid.n_y))


def _skip_header(path):
    with open(path) as fh:
        n = 0
        for line in fh:
            if line.startswith("#") or line.strip().startswith("s,"):
                n += 1
            else:
                break
    return {"skiprows": n}
