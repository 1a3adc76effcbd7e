"""Semi-implicit time stepping of x d_t v + L v = N(v).

Each step solves, per Fourier mode eta,
    (x/dt) v_new + q(D_x) v_new - eta^2 x^2 r(D_x) v_new + eta^4 x^4 v_new
        = (x/dt) v_old + N^(v_guess),
with v_guess = v_old on the first Picard sweep and the previous iterate
afterwards. The linear part is implicit, the nonlinearity explicit.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Optional

import numpy as np

from .grid import Field, GridSpec
from .hodograph import contact_velocity
from .nonlinearity import GradientTooLargeError, MARGIN_FLOOR, compute_FG, nonlin_N_quadratic
from .norms import (DELTA_DEFAULT, DELTA_MAX, NormParams, TraceSet, extract_traces,
                    norm_init, norm_rhs_addends, norm_sol_addends)
from .resolvent import FactorCache

TW_SPEED = 3.0 / 8.0
# Quadrature window of the diagnostic norms, offsets from the grid ends in s.
# Below s_min + 5 rounding noise of v, amplified by the sixth-order
# operators and weights up to x^-3, swamps the addends; the top 0.6 holds
# the Dirichlet layer.
NORM_SKIP_LOW = 5.0
NORM_SKIP_HIGH = 0.6


class BlowUpError(RuntimeError):
    """The state left the small-data regime (gradient guard tripped)."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-2
    t_end: float = 1.0
    picard_iters: int = 2
    margin_floor: float = MARGIN_FLOOR
    delta: float = DELTA_DEFAULT
    output_every: int = 10
    dealias: bool = True
    threads: int = 1
    linear_only: bool = False       # drop N entirely (linear test runs)
    # diagnostics: no extra derivatives, quadrature window set per grid
    norm_params: NormParams = NormParams(deriv_cap=0)

    def __post_init__(self):
        if not self.dt > 0 or not self.t_end > 0:
            raise ValueError("dt and t_end must be positive")
        if self.picard_iters < 1:
            raise ValueError("picard_iters must be >= 1")
        if not 0 < self.delta <= DELTA_MAX:
            raise ValueError("delta must lie in (0, (beta - 1/2)/2]")
        if self.output_every < 1:
            raise ValueError("output_every must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def norms(self, grid: GridSpec | None = None) -> NormParams:
        """Norm parameters with this config's delta; with a grid, the diagnostic window too."""
        p = replace(self.norm_params, delta=self.delta)
        if grid is not None and np.isinf(p.s_lo) and np.isinf(p.s_hi):
            p = replace(p, s_lo=grid.s_min + NORM_SKIP_LOW, s_hi=grid.s_max - NORM_SKIP_HIGH)
        return p


@dataclass
class SimState:
    t: float
    v: Field
    traces: TraceSet
    diagnostics: dict = dc_field(default_factory=dict)
    contact_line: np.ndarray = None
    char_y: np.ndarray = None     # characteristics of the contact-line ODE
    char_z: np.ndarray = None


def initial_state(v0: Field, margin_floor: float = MARGIN_FLOOR) -> SimState:
    compute_FG(v0, margin_floor)
    tr = extract_traces(v0)
    t = v0.time
    return SimState(t, v0, tr, {}, -TW_SPEED * t + tr.v0,
                    v0.grid.y.copy(), -TW_SPEED * t + tr.v0.copy())


class Stepper:
    """Holds the factorization cache and the worker pool for one run."""

    def __init__(self, grid: GridSpec, cfg: SolverConfig,
                 forcing: Optional[Callable[[float, GridSpec], np.ndarray]] = None,
                 cache: FactorCache | None = None):
        self.grid = grid
        self.cfg = cfg
        self.forcing = forcing
        self.cache = cache or FactorCache()
        self.lam = 1.0 / cfg.dt
        self.systems = [self.cache.get(grid, e, self.lam) for e in grid.eta_r]
        self.pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _solve_modes(self, rhs: np.ndarray) -> np.ndarray:
        from .resolvent import solve
        g = self.grid
        bh = np.fft.rfft(rhs, axis=1)

        def one(k):
            return solve(self.systems[k], bh[:, k])

        if self.pool is None:
            cols = [one(k) for k in range(bh.shape[1])]
        else:
            cols = list(self.pool.map(one, range(bh.shape[1])))
        return np.fft.irfft(np.column_stack(cols), n=g.n_y, axis=1)

    def N(self, values: np.ndarray) -> np.ndarray:
        if self.cfg.linear_only:
            return np.zeros_like(values)
        return nonlin_N_quadratic(Field(self.grid, values), self.cfg.margin_floor, self.cfg.dealias).values

    def advance(self, v_old: np.ndarray, t_new: float) -> np.ndarray:
        x = self.grid.x[:, None]
        base = self.lam * x * v_old
        if self.forcing is not None:
            base = base + self.forcing(t_new, self.grid)
        guess = v_old
        for _ in range(self.cfg.picard_iters):
            guess = self._solve_modes(base + self.N(guess))
        return guess


def step(state: SimState, cfg: SolverConfig, stepper: Stepper | None = None,
         with_norms: bool = True) -> SimState:
    own = stepper is None
    stepper = stepper or Stepper(state.v.grid, cfg)
    try:
        t_new = state.t + cfg.dt
        values = stepper.advance(state.v.values, t_new)
        v_new = Field(state.v.grid, values, t_new)
        try:
            compute_FG(v_new, cfg.margin_floor)
        except GradientTooLargeError as exc:
            raise BlowUpError(f"blow-up at t={t_new:.6g}: {exc}", state) from exc
        tr = extract_traces(v_new)
        new = SimState(t_new, v_new, tr, {}, -TW_SPEED * t_new + tr.v0)
        new.char_y, new.char_z = advect_contact_line(state, cfg.dt)
        if with_norms:
            new.diagnostics = diagnostics(v_new, state.v, cfg)
        return new
    finally:
        if own:
            stepper.close()


def diagnostics(v: Field, v_prev: Field, cfg: SolverConfig, N_values=None) -> dict:
    """Norm slices and their addends on the snapshot (addends keyed sol_*, rhs_*)."""
    p = cfg.norms(v.grid)
    p.validate(strict=False)
    sol = norm_sol_addends(v, v_prev, cfg.dt, p)
    if cfg.linear_only:
        rhs = dict.fromkeys(norm_rhs_addends(Field.zeros(v.grid), p), 0.0)
    else:
        n = N_values if N_values is not None else \
            nonlin_N_quadratic(v, cfg.margin_floor, cfg.dealias).values
        rhs = norm_rhs_addends(v.with_values(n), p)
    out = {"norm_init": norm_init(v, p),
           "norm_sol_slice": float(sum(sol.values())),
           "norm_rhs_slice": float(sum(rhs.values()))}
    out.update({f"sol_{k}": float(a) for k, a in sol.items()})
    out.update({f"rhs_{k}": float(a) for k, a in rhs.items()})
    return out


def advect_contact_line(state: SimState, dt: float):
    """Forward-Euler step of dY/dt = V0_y, dZ/dt = V0_z along the characteristics."""
    g = state.v.grid
    Y = state.char_y if state.char_y is not None else g.y.copy()
    Z = state.char_z if state.char_z is not None else state.contact_line.copy()
    vy, vz = contact_velocity(state.traces, g)
    vy_at = _periodic_interp(Y, g.y, vy, g.y_period)
    vz_at = _periodic_interp(Y, g.y, vz, g.y_period)
    return Y + dt * vy_at, Z + dt * vz_at


def _periodic_interp(yq, y, f, period):
    """Trigonometric interpolation of periodic samples f(y) at points yq."""
    n = len(y)
    fh = np.fft.rfft(f) / n
    k = np.arange(fh.size)
    w = np.full(fh.size, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    phase = np.exp(2j * np.pi * np.outer(np.asarray(yq) - y[0], k) / period)
    return (phase * (w * fh)).real.sum(axis=1)


@dataclass
class RunResult:
    records: list
    final: SimState
    blowup: Optional[str] = None
    norm_sol_integral: float = 0.0
    norm_rhs_integral: float = 0.0
    trace_history: list = dc_field(default_factory=list)


def _record(state: SimState) -> dict:
    tr = state.traces
    rec = {"t": state.t}
    rec.update(state.diagnostics)
    rec.update({
        "v0_min": float(tr.v0.min()), "v0_max": float(tr.v0.max()),
        "v1_min": float(tr.v1.min()), "v1_max": float(tr.v1.max()),
        "v1beta_min": float(tr.v1beta.min()), "v1beta_max": float(tr.v1beta.max()),
        "v2_min": float(tr.v2.min()), "v2_max": float(tr.v2.max()),
        "fit_residual": tr.fit_residual,
    })
    return rec


def run(v0: Field, cfg: SolverConfig,
        forcing: Optional[Callable[[float, GridSpec], np.ndarray]] = None,
        callback: Optional[Callable[[SimState], None]] = None) -> RunResult:
    """Iterate step() to t_end, recording diagnostics every output_every steps.

    The time integrals of the solution/data norm slices are accumulated by
    the trapezoid rule over the recorded snapshots.
    """
    state = initial_state(v0, cfg.margin_floor)
    # at t0 the d/dt addends are taken as zero (no earlier state)
    state.diagnostics = diagnostics(v0, v0, cfg)
    records = [_record(state)]
    traces = [(state.t, state.traces, state.contact_line, state.char_y, state.char_z)]
    stepper = Stepper(v0.grid, cfg, forcing)
    blow = None
    try:
        for n in range(1, cfg.n_steps + 1):
            out = n % cfg.output_every == 0 or n == cfg.n_steps
            try:
                state = step(state, cfg, stepper, with_norms=out)
            except BlowUpError as exc:
                blow = str(exc)
                break
            if out:
                records.append(_record(state))
                traces.append((state.t, state.traces, state.contact_line,
                               state.char_y, state.char_z))
                if callback is not None:
                    callback(state)
    finally:
        stepper.close()
    ts = np.array([r["t"] for r in records])
    sol = np.array([r["norm_sol_slice"] for r in records])
    rhs = np.array([r["norm_rhs_slice"] for r in records])
    res = RunResult(records, state, blow,
                    float(np.trapezoid(sol, ts)) if ts.size > 1 else 0.0,
                    float(np.trapezoid(rhs, ts)) if ts.size > 1 else 0.0, traces)
    return res
