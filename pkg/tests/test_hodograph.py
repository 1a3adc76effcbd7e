import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfns.grid import Field, GridSpec
from tfns.hodograph import (DegenerateTraceError, MonotonicityError, contact_velocity, h_expansion,
                            h_from_v, physical_residual, resample, traveling_wave_H, v_from_h,
                            velocity_expansion)
from tfns.norms import TraceSet
from tfns.stepper import SolverConfig, run

G = GridSpec(-12.0, 6.0, 257, 2 * np.pi, 16)


def traces(n_y=16, v0=0.0, v1=0.0, vb=0.0, v2=0.0):
    f = lambda c: np.full(n_y, c) if np.isscalar(c) else np.asarray(c, float)
    return TraceSet(f(v0), f(v1), f(vb), f(v2), 0.0)


def test_traveling_wave_values():
    assert traveling_wave_H(4.0) == pytest.approx(8.0)
    assert traveling_wave_H(-1.0) == 0.0 and traveling_wave_H(0.0) == 0.0
    x = np.linspace(0.1, 5, 50)
    H = traveling_wave_H(x)
    # H''' = -(3/8) x^(-3/2), so H H''' = -3/8
    assert np.allclose(H * (-3 / 8) * x ** -1.5, -3 / 8)
    h = 1e-6
    assert (traveling_wave_H(h) - traveling_wave_H(0.0)) / h < 1e-2


def test_h_from_v_zero():
    p = h_from_v(Field.zeros(G), t=2.0)
    assert np.allclose(p.contact, -0.75)
    assert np.allclose(p.z, G.x[:, None] - 0.75)
    zq = np.linspace(-0.5, 5.0, 40)
    assert np.allclose(p.height(zq), traveling_wave_H(zq + 0.75)[:, None], atol=1e-9)


def _smooth(eps):
    return Field.from_function(G, lambda x, y: eps * (np.cos(y) + x * np.exp(-x) * np.sin(2 * y)))


def test_round_trip():
    v = _smooth(1e-2)
    back = v_from_h(h_from_v(v), G)
    assert np.max(np.abs(back.values - v.values)) <= 1e-6


def test_resample_round_trip():
    v = _smooth(1e-2)
    p = h_from_v(v)
    zq = np.linspace(0.2, 50.0, 4000)
    q = resample(p, zq)
    assert np.allclose(q.h, p.height(zq), rtol=1e-10)
    with pytest.raises(ValueError):
        resample(p, np.array([-1.0, 1.0]))


def test_nonmonotone_rejected():
    v = Field.from_function(G, lambda x, y: -2 * x * np.exp(-((x - 2) ** 2) * 4) + 0 * y)
    with pytest.raises(MonotonicityError):
        h_from_v(v)


def test_contact_velocity_constant_v1():
    for c in (0.0, 0.3, -0.2):
        vy, vz = contact_velocity(traces(v1=c), G)
        assert np.allclose(vy, 0.0)
        assert np.allclose(vz, -3 / 8 * (1 + c) ** -3)
    with pytest.raises(DegenerateTraceError):
        contact_velocity(traces(v1=-1.0), G)


def test_contact_velocity_tilted_line():
    # v0 = a cos y: |V0| carries the factor (1 + (v0)_y^2)
    a = 0.1
    vy, vz = contact_velocity(traces(v0=a * np.cos(G.y)), G)
    d = -a * np.sin(G.y)
    assert np.allclose(vz, -3 / 8 * (1 + d ** 2))
    assert np.allclose(vy, 3 / 8 * (1 + d ** 2) * d)


def test_h_expansion():
    assert np.allclose(np.array(h_expansion(traces())), [[1.0], [0.0], [0.0]])
    c = 0.25
    h = np.array(h_expansion(traces(v1=c)))
    assert np.allclose(h[0], (1 + c) ** -1.5) and np.allclose(h[1:], 0.0)


@given(st.floats(-0.3, 0.3), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_h_expansion_matches_level_set(c1, cb, c2):
    # invert z = x (1 + c1 + cb x^beta + c2 x) numerically and compare h = x^(3/2)
    from tfns.polyops import BETA
    from scipy.optimize import brentq
    a0, ab, a2 = (x[0] for x in h_expansion(traces(1, v1=c1, vb=cb, v2=c2)))
    for z in (1e-4, 3e-4):
        x = brentq(lambda x: x * (1 + c1 + cb * x ** BETA + c2 * x) - z, 0, 1e-2)
        approx = a0 * z ** 1.5 + ab * z ** (1.5 + BETA) + a2 * z ** 2.5
        assert abs(x ** 1.5 - approx) <= 50 * z ** (1.5 + 2 * BETA)


def test_velocity_expansion_at_zero():
    e = velocity_expansion(Field.zeros(G))
    assert np.allclose(e["P0"], 0.5) and np.allclose(e["fit"]["P0"], 0.5)
    assert np.allclose(e["V0"][1], -3 / 8) and np.allclose(e["fit"]["V0"][1], -3 / 8)
    assert np.allclose(e["Pbeta"], 0) and np.allclose(e["P1"], 0)
    assert np.allclose(np.array(e["V1"]), 0.0)


def test_velocity_expansion_fit_agrees():
    v = Field.from_function(G, lambda x, y: 1e-3 * (np.cos(y) + 0.5 * x + x ** 2 * np.exp(-x) * np.sin(y)))
    e = velocity_expansion(v)
    f = e["fit"]
    assert np.max(np.abs(f["P0"] - e["P0"])) < 1e-8
    assert np.max(np.abs(f["V0"][0] - e["V0"][0])) < 1e-8
    assert np.max(np.abs(f["V0"][1] - e["V0"][1])) < 1e-8
    assert np.max(np.abs(f["Pbeta"] - e["Pbeta"])) < 1e-6
    assert np.max(np.abs(f["P1"] - e["P1"])) < 1e-4
    assert np.max(np.abs(np.array(f["V1"]) - np.array(e["V1"]))) < 1e-4
    # the beta-power of V vanishes at this order
    assert np.max(np.abs(np.array(f["Vbeta"]))) < 1e-5


# ------------------------------------------------------- physical residual

def test_residual_zero_state():
    g = GridSpec(-12.0, 6.0, 257, 2 * np.pi, 8)
    st3 = [Field(g, np.zeros((g.n_s, g.n_y)), t) for t in (0.0, 0.01, 0.02)]
    r = physical_residual(st3, 0.5, 5.0)
    assert r["max_residual"] <= r["time_estimate"] + r["space_estimate"] + 1e-12
    assert r["max_residual"] < 1e-4


def _evolved(amp, dt=0.01, n=30):
    g = GridSpec(-12.0, 6.0, 257, 2 * np.pi, 8)
    v0 = Field.from_function(g, lambda x, y: amp * x ** 2 * np.exp(-x) * (1 + np.cos(y)) / 2)
    snaps = []
    cfg = SolverConfig(dt=dt, t_end=dt * n, output_every=1)
    run(v0, cfg, callback=lambda s: snaps.append(s.v))
    return snaps[-3:]


def test_residual_evolved_within_estimates():
    r = physical_residual(_evolved(1e-3), 0.5, 5.0)
    assert r["max_residual"] <= r["time_estimate"] + r["space_estimate"]


def test_residual_detects_static_non_solution():
    g = GridSpec(-12.0, 6.0, 257, 2 * np.pi, 8)
    v = Field.from_function(g, lambda x, y: 1e-3 * x ** 2 * np.exp(-x) * (1 + np.cos(y)) / 2).values
    # a time-independent perturbation is not a solution of the film equation
    st3 = [Field(g, v + 3 / 8 * t, t) for t in (0.0, 0.01, 0.02)]
    r = physical_residual(st3, 0.5, 5.0)
    assert r["max_residual"] > 10 * (r["time_estimate"] + r["space_estimate"])


def test_residual_errors():
    g = GridSpec(-12.0, 6.0, 257, 2 * np.pi, 8)
    z = [Field(g, np.zeros((g.n_s, g.n_y)), t) for t in (0.0, 0.01, 0.03)]
    with pytest.raises(ValueError, match="equally spaced"):
        physical_residual(z, 0.5, 5.0)
    z = [Field(g, np.zeros((g.n_s, g.n_y)), t) for t in (0.0, 0.01, 0.02)]
    with pytest.raises(ValueError, match="contact"):
        physical_residual(z, -0.1, 5.0)
    with pytest.raises(ValueError):
        physical_residual(z, 5.0, 0.5)
    with pytest.raises(ValueError):
        physical_residual(z[:2], 0.5, 5.0)
    ge = GridSpec(-12.0, 6.0, 256, 2 * np.pi, 8)
    with pytest.raises(ValueError, match="odd"):
        physical_residual([Field(ge, np.zeros((256, 8)), t) for t in (0.0, 0.01, 0.02)], 0.5, 5.0)
