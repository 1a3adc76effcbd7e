"""Operator symbols as real polynomials, plus weighted coercivity bounds.

All symbols act on functions of x through D_x = x d/dx, so a polynomial p
stands for the operator p(D_x) and x^gamma is an eigenfunction with
eigenvalue p(gamma).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

BETA = (math.sqrt(13.0) - 1.0) / 4.0

MAX_DEGREE = 8


def beta_constant() -> float:
    """Irrational exponent of the x^(1+beta) term, (sqrt(13) - 1)/4."""
    return BETA


class RealPolynomial:
    """Real polynomial with ascending coefficients, degree at most 8."""

    __slots__ = ("_c",)

    def __init__(self, coeffs: Iterable[float]):
        if isinstance(coeffs, np.ndarray):
            c = coeffs.astype(float)   # copy
        else:
            c = np.array(list(coeffs), dtype=float)
        if c.ndim != 1:
            raise ValueError("coefficients must be a flat sequence")
        nz = np.nonzero(c)[0]
        c = c[: nz[-1] + 1] if nz.size else np.zeros(1)
        if c.size - 1 > MAX_DEGREE:
            raise ValueError(f"degree {c.size - 1} exceeds {MAX_DEGREE}")
        c.flags.writeable = False
        self._c = c

    @classmethod
    def from_roots(cls, roots: Sequence[float], lead: float = 1.0) -> "RealPolynomial":
        c = np.array([lead], dtype=float)
        for r in roots:
            # multiply by (z - r), ascending order
            c = np.concatenate(([0.0], c)) - r * np.concatenate((c, [0.0]))
        return cls(c)

    @classmethod
    def monomial(cls, n: int = 1) -> "RealPolynomial":
        return cls([0.0] * n + [1.0])

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        return 0 if self.is_zero() else self._c.size - 1

    def is_zero(self) -> bool:
        return not np.any(self._c)

    def __call__(self, z):
        return eval_poly(self, z)

    def __add__(self, other):
        other = _as_poly(other)
        a, b = (self._c, other._c) if self._c.size >= other._c.size else (other._c, self._c)
        out = a.copy()
        out[: b.size] += b
        return RealPolynomial(out)

    __radd__ = __add__

    def __neg__(self):
        return RealPolynomial(-self._c)

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        other = _as_poly(other)
        return RealPolynomial(np.convolve(self._c, other._c))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, RealPolynomial):
            return NotImplemented
        return self._c.shape == other._c.shape and bool(np.all(self._c == other._c))

    def __hash__(self):
        return hash(self._c.tobytes())

    def shift(self, a: float) -> "RealPolynomial":
        """Return the polynomial z -> p(z + a)."""
        n = self._c.size
        k = np.arange(n)
        # Taylor coefficients: sum_k c_k C(k, j) a^(k - j)
        binom = np.array([[math.comb(i, j) for j in range(n)] for i in range(n)], dtype=float)
        powers = np.where(k[:, None] >= k[None, :], float(a) ** np.maximum(k[:, None] - k[None, :], 0), 0.0)
        return RealPolynomial((self._c[:, None] * binom * powers).sum(axis=0))

    def allclose(self, other: "RealPolynomial", rtol: float = 1e-14) -> bool:
        a, b = self._c, _as_poly(other)._c
        n = max(a.size, b.size)
        a = np.pad(a, (0, n - a.size))
        b = np.pad(b, (0, n - b.size))
        scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
        return bool(np.max(np.abs(a - b)) <= rtol * scale)

    def roots(self) -> np.ndarray:
        """Real parts of the roots, sorted ascending."""
        if self.degree == 0:
            return np.zeros(0)
        return np.sort(np.roots(self._c[::-1]).real)

    def __repr__(self):
        return f"RealPolynomial({self._c.tolist()})"


def _as_poly(p) -> RealPolynomial:
    if isinstance(p, RealPolynomial):
        return p
    return RealPolynomial([float(p)])


def eval_poly(p: RealPolynomial, z):
    """Horner evaluation; z may be a scalar or an array."""
    acc = np.zeros_like(np.asarray(z, dtype=np.result_type(z, float)))
    for c in p.coeffs[::-1]:
        acc = acc * z + c
    return acc[()] if np.ndim(acc) == 0 else acc


# roots of the factored definitions, shared by make_symbol and the tests
SYMBOL_ROOTS = {
    "q": (-0.5, 0.5 - BETA, 0.0, 1.0 + BETA),
    "q_tilde": (-0.5, 0.5 - BETA, 1.0, 1.0 + BETA),
    "q_breve": (0.5, 1.5 - BETA, 2.0 + BETA, 4.0),
}

SYMBOL_NAMES = ("q", "r", "q_tilde", "r_tilde", "r_check1", "r_check2",
                "q_breve", "r_breve1", "r_breve2")


def _build(name: str) -> RealPolynomial:
    b = BETA
    fr = RealPolynomial.from_roots
    if name in SYMBOL_ROOTS:
        return fr(SYMBOL_ROOTS[name])
    if name == "r":
        return fr((-1.0, -0.5), 2.0)
    if name == "r_tilde":
        return fr((-1.0, -1.0, -0.5), 2.0)
    if name == "r_check1":
        return fr((-1.5, -1.0, -1.0, -0.5, -b - 0.5, b), 2.0)
    if name == "r_check2":
        return fr((-3.5, -b - 2.5, -3.0, -2.0, b - 2.0))
    if name == "r_breve1":
        return fr((2.0,)) * _build("r_check1")
    if name == "r_breve2":
        return fr((-1.0,)) * _build("r_check2")
    raise ValueError(f"unknown symbol {name!r}; expected one of {SYMBOL_NAMES}")


_CACHE: dict[str, RealPolynomial] = {}


def make_symbol(name: str) -> RealPolynomial:
    """Expanded form of a named operator symbol."""
    if name not in _CACHE:
        _CACHE[name] = _build(name)
    return _CACHE[name]


def omega(roots: Sequence[float], alpha: float) -> float:
    """Middle coefficient of the coercivity splitting, -sum_{j<k}(g_j-a)(g_k-a)."""
    g = np.asarray(roots, dtype=float) - alpha
    s = 0.0
    for j in range(len(g)):
        for k in range(j + 1, len(g)):
            s += g[j] * g[k]
    return -s


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool
    hi_closed: bool

    def __contains__(self, a: float) -> bool:
        above = a >= self.lo if self.lo_closed else a > self.lo
        below = a <= self.hi if self.hi_closed else a < self.hi
        return above and below

    def sample(self, n: int, rng=None) -> np.ndarray:
        """n points strictly inside the interval."""
        rng = np.random.default_rng(rng)
        lo = self.lo + 1e-9 * max(1.0, abs(self.lo))
        hi = self.hi - 1e-9 * max(1.0, abs(self.hi))
        return rng.uniform(lo, hi, n)

    def as_list(self):
        return [self.lo, self.hi, self.lo_closed, self.hi_closed]


@dataclass(frozen=True)
class CoercivityReport:
    roots: tuple
    mean: float
    sigma: float
    admissible: tuple  # of Interval

    @property
    def sigma2(self) -> float:
        return self.sigma ** 2

    def contains(self, alpha: float) -> bool:
        return any(alpha in iv for iv in self.admissible)


def coercivity_report(roots: Sequence[float]) -> CoercivityReport:
    """Weights alpha for which a quartic with these real roots is coercive.

    Two conditions: the symbol is positive at alpha (open set outside the
    root pairs) and omega(alpha) >= 0, i.e. |alpha - m| <= sigma/sqrt(3).
    """
    g = np.asarray(roots, dtype=float)
    if g.size != 4 or np.any(np.diff(g) < 0):
        raise ValueError("expected 4 real roots sorted ascending")
    m = float(np.sum(g) / 4.0)
    sigma = float(math.sqrt(np.sum((g - m) ** 2) / 4.0))
    half = sigma / math.sqrt(3.0)
    lo, hi = m - half, m + half
    positive = [(-math.inf, g[0]), (g[1], g[2]), (g[3], math.inf)]
    out = []
    for a, b in positive:
        left, right = max(a, lo), min(b, hi)
        if left > right or (left == right and (left == a or right == b)):
            continue
        out.append(Interval(left, right, left == lo and lo > a, right == hi and hi < b))
    return CoercivityReport(tuple(float(x) for x in g), m, sigma, tuple(out))
