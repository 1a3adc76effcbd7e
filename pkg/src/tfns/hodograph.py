"""Film height <-> perturbation field through h(t, y, Z(t, x, y)) = x^(3/2).

Z = x - (3/8) t + v is the position of the level set {h = x^(3/2)}, so
the contact line sits at Z0 = -(3/8) t + v0(y). All expansion formulas
below are written in terms of the traces v0, v1, v_(1+beta), v2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .grid import Field, GridSpec, dx_matrix, dy_values
from .norms import TraceSet, extract_traces, fit_powers
from .polyops import BETA

TW_SPEED = 3.0 / 8.0


class MonotonicityError(ValueError):
    """Z (or h) is not strictly increasing along a y-line."""


class DegenerateTraceError(ValueError):
    """1 + v1 <= 0: the expansion coefficients are undefined."""


def traveling_wave_H(x):
    """H(x) = x^(3/2) on x > 0, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, np.abs(x) ** 1.5, 0.0)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class HeightProfile:
    """Samples (z, h) along each y-line; columns are y-lines.

    h > 0 at every stored sample; the film vanishes at and left of the
    contact point.
    """
    z: np.ndarray        # (n_pts, n_y)
    h: np.ndarray        # (n_pts, n_y)
    contact: np.ndarray  # (n_y,)
    y: np.ndarray
    y_period: float
    t: float = 0.0

    def height(self, zq: np.ndarray) -> np.ndarray:
        """h on the points zq (1-D, shared by all lines), shape (len(zq), n_y)."""
        out = np.zeros((len(zq), self.z.shape[1]))
        for j in range(self.z.shape[1]):
            xs = np.concatenate(([0.0], self.h[:, j] ** (2.0 / 3.0)))
            zs = np.concatenate(([self.contact[j]], self.z[:, j]))
            inside = zq > self.contact[j]
            if np.any(zq[inside] > zs[-1]):
                raise ValueError("query point beyond the sampled profile")
            xq = PchipInterpolator(zs, xs)(zq[inside])
            out[inside, j] = np.maximum(xq, 0.0) ** 1.5
        return out


def _check_monotone(Z: np.ndarray):
    if np.any(np.diff(Z, axis=0) <= 0):
        raise MonotonicityError("Z is not strictly increasing in x on every y-line")


def h_from_v(v: Field, t: float | None = None, traces: TraceSet | None = None) -> HeightProfile:
    """Level-set samples (Z, x^(3/2)) on the x-grid for every y-line."""
    g = v.grid
    t = v.time if t is None else t
    x = g.x[:, None]
    Z = x - TW_SPEED * t + v.values
    _check_monotone(Z)
    tr = traces or extract_traces(v)
    contact = -TW_SPEED * t + tr.v0
    if np.any(Z[0] <= contact):
        raise MonotonicityError("first sample does not lie right of the contact point")
    h = np.broadcast_to(g.x[:, None] ** 1.5, Z.shape).copy()
    return HeightProfile(Z, h, contact, g.y.copy(), g.y_period, t)


def resample(p: HeightProfile, zq: np.ndarray) -> HeightProfile:
    """Same film on other z-samples per line: zq has shape (m, n_y) or (m,)."""
    zq = np.asarray(zq, dtype=float)
    if zq.ndim == 1:
        zq = np.repeat(zq[:, None], p.z.shape[1], axis=1)
    h = np.empty_like(zq)
    for j in range(zq.shape[1]):
        if np.any(zq[:, j] <= p.contact[j]):
            raise ValueError("resampling points must lie right of the contact point")
        xs = np.concatenate(([0.0], p.h[:, j] ** (2.0 / 3.0)))
        zs = np.concatenate(([p.contact[j]], p.z[:, j]))
        h[:, j] = PchipInterpolator(zs, xs)(zq[:, j]) ** 1.5
    return HeightProfile(zq, h, p.contact.copy(), p.y, p.y_period, p.t)


def v_from_h(p: HeightProfile, grid: GridSpec, t: float | None = None) -> Field:
    """Invert the level-set relation on the x-grid by monotone cubic interpolation."""
    t = p.t if t is None else t
    x = grid.x
    out = np.empty((grid.n_s, p.z.shape[1]))
    for j in range(p.z.shape[1]):
        hs = p.h[:, j]
        if np.any(np.diff(hs) <= 0) or np.any(np.diff(p.z[:, j]) <= 0):
            raise MonotonicityError(f"height is not strictly increasing on line {j}")
        xs = np.concatenate(([0.0], hs ** (2.0 / 3.0)))
        zs = np.concatenate(([p.contact[j]], p.z[:, j]))
        if x[-1] > xs[-1] * (1 + 1e-12):
            raise ValueError("profile does not reach the top of the x-grid")
        Z = PchipInterpolator(xs, zs)(x)
        out[:, j] = Z - x + TW_SPEED * t
    return Field(grid, out, t)


# -------------------------------------------------- contact-line kinematics

def _dy(a: np.ndarray, period: float, order: int = 1) -> np.ndarray:
    n = a.size
    k = 2 * np.pi * np.fft.rfftfreq(n, period / n)
    m = (1j * k) ** order
    if order % 2 and n % 2 == 0:
        m[-1] = 0.0
    return np.fft.irfft(np.fft.rfft(a) * m, n=n)


def _one_plus_v1(tr: TraceSet) -> np.ndarray:
    a = 1.0 + tr.v1
    if np.any(a <= 0):
        raise DegenerateTraceError("1 + v1 must be positive")
    return a


def contact_velocity(traces: TraceSet, grid: GridSpec):
    """V0 = -(3/8) (1 + (v0)_y^2) / (1 + v1)^3 * (-(v0)_y, 1)."""
    a = _one_plus_v1(traces)
    d = _dy(traces.v0, grid.y_period)
    pref = -TW_SPEED * (1 + d * d) / a ** 3
    return -pref * d, pref


def h_expansion(traces: TraceSet):
    """Coefficients of z~^(3/2), z~^(3/2+beta), z~^(5/2) in h near the contact line."""
    a = _one_plus_v1(traces)
    return (a ** -1.5,
            -1.5 * traces.v1beta * a ** -(2.5 + BETA),
            -1.5 * traces.v2 * a ** -3.5)


def p_coefficients(traces: TraceSet, grid: GridSpec) -> dict:
    """Closed-form P0, P_beta, P1 of P = P0 + P_beta x^beta + P1 x + ..."""
    a = _one_plus_v1(traces)
    d0 = _dy(traces.v0, grid.y_period)
    d00 = _dy(traces.v0, grid.y_period, 2)
    d1 = _dy(traces.v1, grid.y_period)
    w = d0 * d0 + 1
    return {
        "P0": 0.5 * w / a ** 2,
        "Pbeta": -(1 + BETA) ** 2 * traces.v1beta * w / a ** 3,
        "P1": -d00 / a + 3 * d0 * d1 / a ** 2 - 4 * w * traces.v2 / a ** 3,
    }


def v1_coefficient(traces: TraceSet, grid: GridSpec):
    """Closed-form O(x) coefficient (V1_y, V1_z) of the advection velocity.

    The (v1)_y term of V1_y carries 3 + 9 (v0)_y^2; expanding
    V = (3/2)(D_y P - G (D_x - 1/2) P, F (D_x - 1/2) P) symbolically gives 3, not 6.
    """
    a = _one_plus_v1(traces)
    d0 = _dy(traces.v0, grid.y_period)
    d00 = _dy(traces.v0, grid.y_period, 2)
    d1 = _dy(traces.v1, grid.y_period)
    v2 = traces.v2
    vy = TW_SPEED * (6 * d0 * d00 / a ** 2 - (3 + 9 * d0 ** 2) * d1 / a ** 3
                     + 6 * (d0 ** 3 + d0) * v2 / a ** 4)
    vz = TW_SPEED * (-2 * d00 / a ** 2 + 6 * d0 * d1 / a ** 3
                     - 6 * (d0 ** 2 + 1) * v2 / a ** 4)
    return vy, vz


def numeric_P_V(v: Field, margin_floor: float = 0.1):
    """P = -D_y G + G (D_x + 1/2) G + F (D_x + 1/2) F and
    V = (3/2) (D_y P - G (D_x - 1/2) P, F (D_x - 1/2) P) on the grid."""
    from .nonlinearity import _Parts
    parts = _Parts(v, margin_floor, dealias_products=False)
    P = (parts.B2 - parts.B1).full()
    g = v.grid
    D = dx_matrix(g, 1)
    F, G = parts.F.full(), parts.G.full()
    dP = D @ P - 0.5 * P
    Vy = 1.5 * (g.x[:, None] * dy_values(P, g, 1) - G * dP)
    Vz = 1.5 * F * dP
    return P, Vy, Vz


P_FIT_EXPONENTS = (0.0, BETA, 1.0, 2 * BETA, 1.0 + BETA, 3 * BETA, 2.0,
                   1.0 + 2 * BETA, 4 * BETA)
P_FIT_WINDOW = (-9.0, -3.0)


def velocity_expansion(v: Field, t: float | None = None, fit_window=None,
                       traces: TraceSet | None = None, p_window=None) -> dict:
    """Closed-form expansion coefficients plus fits of the numerically computed P and V."""
    g = v.grid
    tr = traces or extract_traces(v, fit_window)
    out = dict(p_coefficients(tr, g))
    out["V0"] = contact_velocity(tr, g)
    out["V1"] = v1_coefficient(tr, g)
    P, Vy, Vz = numeric_P_V(v)
    lo, hi = P_FIT_WINDOW if p_window is None else p_window
    idx = np.nonzero((g.s >= lo - 1e-12) & (g.s <= hi + 1e-12))[0]
    if idx.size < 2 * len(P_FIT_EXPONENTS):
        raise ValueError("P/V fit window holds too few grid points")
    xw = g.x[idx]
    # nine fractional powers on a wide window: conditioning is poor by design
    cP, rP = fit_powers(xw, P[idx], P_FIT_EXPONENTS, max_cond=1e14)
    cy, ry = fit_powers(xw, Vy[idx], P_FIT_EXPONENTS, max_cond=1e14)
    cz, rz = fit_powers(xw, Vz[idx], P_FIT_EXPONENTS, max_cond=1e14)
    out["fit"] = {
        "P0": cP[0], "Pbeta": cP[1], "P1": cP[2],
        "V0": (cy[0], cz[0]), "Vbeta": (cy[1], cz[1]), "V1": (cy[2], cz[2]),
        "residual": float(max(rP.max(), ry.max(), rz.max())),
    }
    return out


# ------------------------------------------------ derivative transformation

def derivative_transform(f: np.ndarray, Z: np.ndarray, grid: GridSpec):
    """(d_y, d_z) of g defined by g(y, Z(x, y)) = f(x, y), on the (x, y) grid.

    d_y -> d_y - G d_x and d_z -> F d_x with F = 1/Z_x, G = Z_y/Z_x
    (d_x the plain x-derivative).
    """
    D = dx_matrix(grid, 1)
    x = grid.x[:, None]
    fx = (D @ f) / x
    Zx = (D @ Z) / x
    F = 1.0 / Zx
    G = dy_values(Z, grid, 1) * F
    return dy_values(f, grid, 1) - G * fx, F * fx


# --------------------------------------------------- physical PDE residual

def thin_film_flux_divergence(h: np.ndarray, Z: np.ndarray, grid: GridSpec) -> np.ndarray:
    """div(h^2 grad Lap h) in (y, z), for h and Z sampled on the (x, y) grid."""
    def dy(f):
        return derivative_transform(f, Z, grid)[0]

    def dz(f):
        return derivative_transform(f, Z, grid)[1]

    lap = dz(dz(h)) + dy(dy(h))
    return dz(h ** 2 * dz(lap)) + dy(h ** 2 * dy(lap))


def _residual_on(grid: GridSpec, vp, vm, vn, t: float, dt: float):
    x = grid.x[:, None]
    Z = x - TW_SPEED * t + vm
    h = np.broadcast_to(x ** 1.5, Z.shape)
    hz = derivative_transform(h, Z, grid)[1]
    # h(y, Z(x, y, t), t) = x^(3/2)  =>  d_t h|_z = -h_z d_t Z|_x
    Zt = -TW_SPEED + (vn - vp) / (2 * dt)
    res = -hz * Zt + thin_film_flux_divergence(h, Z, grid)
    time_est = np.abs(hz * (vn - 2 * vm + vp)) / (2 * dt)
    return res, Z, np.abs(hz * Zt), time_est


def physical_residual(v_states, z_lo: float, z_hi: float, margin: int = 8) -> dict:
    """Residual of d_t h + div(h^2 grad Lap h) = 0 for z in [z_lo, z_hi].

    v_states: three Fields at equally spaced times t0, t0 + dt, t0 + 2 dt.
    The residual is evaluated at the middle time on the hodograph grid
    points whose height coordinate Z lies in the window, with d_t by the
    centered difference and space derivatives by the chain rule
    (no interpolation, which would pollute the fourth derivatives).

    time_estimate: |centered - backward quotient| of d_t h, the size of
    the first-order stepping error. space_estimate: change of the residual
    when every other s point is dropped; with fourth-order stencils this
    exceeds the fine-grid truncation error of both the scheme and the check.
    The `margin` points nearest either s end are excluded.
    """
    if len(v_states) != 3:
        raise ValueError("need three states")
    t = [s.time for s in v_states]
    dt = t[1] - t[0]
    if not dt > 0 or abs((t[2] - t[1]) - dt) > 1e-12 * max(1.0, abs(dt)):
        raise ValueError("states must be equally spaced in time")
    g = v_states[0].grid
    if g.n_s % 2 == 0:
        raise ValueError("n_s must be odd (the coarse check keeps every other point)")
    if z_lo >= z_hi:
        raise ValueError("need z_lo < z_hi")
    vp, vm, vn = (s.values for s in v_states)
    contact = -TW_SPEED * t[1] + extract_traces(v_states[1]).v0
    if z_lo <= np.max(contact):
        raise ValueError("z window reaches the contact line")
    res, Z, scale, est_t = _residual_on(g, vp, vm, vn, t[1], dt)
    gc = GridSpec(g.s_min, g.s_max, (g.n_s + 1) // 2, g.y_period, g.n_y)
    res_c = _residual_on(gc, vp[::2], vm[::2], vn[::2], t[1], dt)[0]
    inner = np.zeros(g.n_s, dtype=bool)
    inner[margin:g.n_s - margin] = True
    mask = inner[:, None] & (Z >= z_lo) & (Z <= z_hi)
    mask_c = mask[::2]
    if not mask_c.any():
        raise ValueError("no grid points in the z window")
    return {
        "max_residual": float(np.max(np.abs(res[mask]))),
        "max_residual_even": float(np.max(np.abs(res[::2][mask_c]))),
        "time_estimate": float(np.max(est_t[mask])),
        "space_estimate": float(np.max(np.abs(res[::2] - res_c)[mask_c])),
        "dt_h_scale": float(np.max(scale[mask])),
        "residual": np.where(mask, res, np.nan),
        "Z": Z,
    }
