"""Command line entry point: tfns simulate | coercivity | resolvent | reconstruct | verify.

Exit codes: 0 success, 1 domain error (bad config, blow-up, failed
verification), 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, emit_config, load_config
from .grid import Field, GridSpec, read_dump, write_dump
from .polyops import SYMBOL_ROOTS, coercivity_report, make_symbol, omega

log = logging.getLogger("tfns")


class DomainError(RuntimeError):
    """A well-formed request the numerics cannot honour."""


# ------------------------------------------------------------------ helpers

def _header(cfg: RunConfig) -> str:
    return f"# tfns {__version__} config={cfg.digest()}\n"


def _write_csv(path: Path, cfg: RunConfig, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_header(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _emit_json(obj, out: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=2, default=_jsonable)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")
    print(text)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _load(args) -> RunConfig:
    strict = True if args.strict else None
    cfg = load_config(args.config, strict=strict)
    if args.threads is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, threads=args.threads))
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def initial_field(cfg: RunConfig) -> Field:
    ic, g = cfg.initial, cfg.grid
    if ic.kind == "zero":
        return Field.zeros(g)
    if ic.kind == "bump":
        a, m = ic.amplitude, ic.mode
        return Field.from_function(g, lambda x, y: a * x ** 2 * np.exp(-x) * (1 + np.cos(m * y)) / 2)
    f = read_dump(ic.path)
    if f.grid != g:
        raise ConfigError(f"initial state grid {f.grid} differs from configured grid {g}")
    return f


# --------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    from .stepper import run
    cfg = _load(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(_header(cfg) + emit_config(cfg))
    v0 = initial_field(cfg)
    res = run(v0, cfg.solver_config())
    cols = list(res.records[0].keys())
    _write_csv(out / "diagnostics.csv", cfg, cols, ([r[c] for c in cols] for r in res.records))
    y = cfg.grid.y
    trace_rows, contact_rows = [], []
    for t, tr, z0, cy, cz in res.trace_history:
        for j in range(y.size):
            trace_rows.append([t, y[j], tr.v0[j], tr.v1[j], tr.v1beta[j], tr.v2[j]])
            contact_rows.append([t, y[j], z0[j], cy[j], cz[j]])
    _write_csv(out / "traces.csv", cfg, ["t", "y", "v0", "v1", "v1beta", "v2"], trace_rows)
    _write_csv(out / "contact_line.csv", cfg, ["t", "y", "Z0", "char_Y", "char_Z"], contact_rows)
    write_dump(res.final.v, out / "final_state.bin")
    summary = {"version": __version__, "t_final": res.final.t, "blowup": res.blowup,
               "norm_init_initial": res.records[0]["norm_init"],
               "norm_init_final": res.records[-1]["norm_init"],
               "norm_sol_integral": res.norm_sol_integral,
               "norm_rhs_integral": res.norm_rhs_integral,
               "config_sha256": cfg.digest()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if cfg.svg:
        plot_run(out)
    if res.blowup:
        log.error("%s", res.blowup)
        return 1
    return 0


def _read_csv(path: Path):
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    cols = rows[0]
    data = np.array(rows[1:], dtype=float).reshape(-1, len(cols))
    return {c: data[:, i] for i, c in enumerate(cols)}


def plot_run(out: Path) -> None:
    """SVG plots of norm_init(t) and Z0(t, y), read back from the CSV files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "tfns"
    d = _read_csv(out / "diagnostics.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(d["t"], np.maximum(d["norm_init"], 1e-300))
    ax.set_xlabel("t")
    ax.set_ylabel("norm_init")
    fig.tight_layout()
    fig.savefig(out / "norm_init.svg", metadata={"Date": None})
    plt.close(fig)
    c = _read_csv(out / "contact_line.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for t in np.unique(c["t"]):
        m = c["t"] == t
        ax.plot(c["y"][m], c["Z0"][m], lw=0.8)
    ax.set_xlabel("y")
    ax.set_ylabel("Z0")
    fig.tight_layout()
    fig.savefig(out / "contact_line.svg", metadata={"Date": None})
    plt.close(fig)


# ------------------------------------------------------------- coercivity

def coercivity_json(name: str, alphas=()) -> dict:
    if name not in SYMBOL_ROOTS:
        raise DomainError(f"unknown symbol {name!r}; choose from {sorted(SYMBOL_ROOTS)}")
    roots = SYMBOL_ROOTS[name]
    rep = coercivity_report(roots)
    P = make_symbol(name)
    return {
        "symbol": name,
        "roots": list(rep.roots),
        "m": rep.mean,
        "sigma2": rep.sigma2,
        "admissible": [{"lo": iv.lo, "hi": iv.hi, "lo_closed": bool(iv.lo_closed),
                        "hi_closed": bool(iv.hi_closed)} for iv in rep.admissible],
        "alpha": [{"alpha": a, "omega": omega(roots, a), "P": float(P(a)),
                   "admissible": rep.contains(a)} for a in alphas],
    }


def cmd_coercivity(args) -> int:
    _emit_json(coercivity_json(args.symbol, args.alpha or ()),
               Path(args.out) if args.out else None, f"coercivity_{args.symbol}.json")
    return 0


# -------------------------------------------------------------- resolvent

def resolvent_json(eta: float, lam: float, n_s: int) -> dict:
    from .resolvent import assemble, operator_rows, series_near_zero, solve
    g = GridSpec(-12.0, 6.0, n_s, 2 * np.pi, 2)
    sysm = assemble(g, eta, lam)
    x = g.x
    vstar = (x + x ** 2) * np.exp(-x ** 2 / 2)
    f = operator_rows(g, eta, lam) @ vstar
    v, info = solve(sysm, f, return_info=True)
    err = float(np.max(np.abs(v - vstar)) / np.max(np.abs(vstar)))
    zero = solve(sysm, np.zeros(n_s))
    fbar = np.zeros((3, 3))
    fbar[1, 0] = 1.0                     # f = x
    ser = series_near_zero(fbar, 0.0, 0.0, eta, lam=lam)
    lo, hi = sysm.bandwidth()
    return {
        "eta": eta, "lambda": lam, "n_s": n_s,
        "bandwidth": [lo, hi],
        "manufactured_max_rel_error": err,
        "backward_error": info["backward_error"],
        "homogeneous_max_abs": float(np.max(np.abs(zero))),
        "series_x_coefficient": ser.coefficient(1.0),
        "series_expected": -8.0 / 9.0,
        "series_theta": ser.theta,
        "log_slope": decay_slope(eta, lam),
        "log_slope_expected": -abs(eta),
    }


def decay_slope(eta: float, lam: float, n_s: int = 1025) -> float:
    """d log|v|/dx over x in [10, 30] for f = x * bump on a grid reaching x = 60."""
    from .resolvent import assemble, log_slope, solve
    g = GridSpec(-12.0, float(np.log(60.0)), n_s, 2 * np.pi, 2)
    x = g.x
    v = solve(assemble(g, eta, lam), x * np.exp(-(x - 1.0) ** 2))
    return log_slope(x, v, 10.0, 30.0)


def cmd_resolvent(args) -> int:
    _emit_json(resolvent_json(args.eta, args.lam, args.n_s),
               Path(args.out) if args.out else None, "resolvent.json")
    return 0


# ------------------------------------------------------------ reconstruct

def _write_state_csv(path: Path, head: str, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(head)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def cmd_reconstruct(args) -> int:
    from .hodograph import h_expansion, h_from_v, p_coefficients, contact_velocity
    from .norms import extract_traces
    cfg = _load(args)
    v = read_dump(args.state)
    prof = h_from_v(v)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    head = f"{_header(cfg).rstrip()} state={Path(args.state).name} t={v.time!r}\n"
    z = np.linspace(float(np.max(prof.contact)) + 1e-3, args.z_max, args.n_z)
    h = prof.height(z)
    y = v.grid.y
    _write_state_csv(out / "height.csv", head, ["y", "z", "h"],
                     ([y[j], z[i], h[i, j]] for j in range(y.size) for i in range(z.size)))
    _write_state_csv(out / "contact_line.csv", head, ["y", "Z0"], zip(y, prof.contact))
    tr = extract_traces(v)
    c32, c32b, c52 = h_expansion(tr)
    vy, vz = contact_velocity(tr, v.grid)
    pc = p_coefficients(tr, v.grid)
    _write_state_csv(out / "expansion.csv", head,
                     ["y", "h_z3/2", "h_z3/2+beta", "h_z5/2", "V0_y", "V0_z", "P0", "Pbeta", "P1"],
                     zip(y, c32, c32b, c52, vy, vz, pc["P0"], pc["Pbeta"], pc["P1"]))
    if cfg.svg:
        plot_heights(out / "height.svg", z, h, y)
    return 0


def plot_heights(path: Path, z, h, y, max_lines: int = 8) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "tfns"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for j in np.unique(np.linspace(0, y.size - 1, min(max_lines, y.size)).astype(int)):
        ax.plot(z, h[:, j], lw=0.8, label=f"y={y[j]:.2f}")
    ax.set_xlabel("z")
    ax.set_ylabel("h")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


# ----------------------------------------------------------------- verify

def verify_battery(seed: int = 0) -> dict:
    """Fast invariant checks; every entry carries value, tolerance and pass flag."""
    from .hodograph import contact_velocity, h_expansion, h_from_v, v_from_h
    from .nonlinearity import nonlin_N
    from .norms import coercivity_terms, extract_traces
    from .polyops import BETA, RealPolynomial
    from .resolvent import fundamental_g
    checks = {}

    def add(name, value, tol):
        checks[name] = {"value": float(value), "tol": tol, "pass": bool(abs(value) <= tol)}

    add("beta", BETA - (np.sqrt(13.0) - 1) / 4, 1e-15)
    rq = coercivity_report(SYMBOL_ROOTS["q"])
    add("q_mean", rq.mean - 0.25, 1e-15)
    add("q_sigma2", rq.sigma2 - 11 / 16, 1e-14)
    q, qt = make_symbol("q"), make_symbol("q_tilde")
    z = RealPolynomial([0.0, 1.0])
    add("q_shift_identity", max(abs(c) for c in ((z - 1.0) * q - qt * z).coeffs), 1e-14)
    rng = np.random.default_rng(seed)
    s = np.linspace(-12, 6, 513)
    worst = 0.0
    for name in ("q", "q_tilde", "q_breve"):
        rep = coercivity_report(SYMBOL_ROOTS[name])
        amid = 0.5 * (rep.admissible[0].lo + rep.admissible[-1].hi)
        w = rng.uniform(1.2, 1.6)
        c = rng.uniform(-3.5, -2.5) + amid * w * w
        f = np.exp(-(s - c) ** 2 / (2 * w * w))
        for a in rep.admissible[0].sample(2, rng):
            lhs, rhs, sc = coercivity_terms(f, SYMBOL_ROOTS[name], a, s)
            worst = max(worst, abs(lhs - rhs) / sc)
    add("coercivity_identity", worst, 1e-5)
    g = GridSpec(n_s=129, n_y=16)
    add("N_of_zero", np.max(np.abs(nonlin_N(Field.zeros(g)).values)), 0.0)
    res = resolvent_json(1.0, 1.0, 257)
    add("resolvent_manufactured", res["manufactured_max_rel_error"], 1e-10)
    add("resolvent_homogeneous", res["homogeneous_max_abs"], 1e-14)
    add("series_minus_8_9", res["series_x_coefficient"] + 8 / 9, 1e-8)
    add("g_at_zero", fundamental_g(0.0) - 0.25, 1e-15)
    tr = extract_traces(Field.zeros(g))
    vy, vz = contact_velocity(tr, g)
    add("V0_at_zero", max(np.max(np.abs(vy)), np.max(np.abs(vz + 3 / 8))), 1e-15)
    c1, cb, c2 = h_expansion(tr)
    add("h_expansion_at_zero", max(np.max(np.abs(c1 - 1)), np.max(np.abs(cb)), np.max(np.abs(c2))), 1e-15)
    v = Field.from_function(g, lambda x, y: 1e-2 * np.sin(y) * x * np.exp(-x))
    add("hodograph_round_trip", np.max(np.abs(v_from_h(h_from_v(v), g).values - v.values)), 1e-6)
    return {"version": __version__, "seed": seed, "checks": checks,
            "all_pass": all(c["pass"] for c in checks.values())}


def cmd_verify(args) -> int:
    cfg = _load(args)
    rep = verify_battery(cfg.seed)
    _emit_json(rep, Path(args.out) if args.out else None, "verify.json")
    return 0 if rep["all_pass"] else 1


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration file")
    common.add_argument("--strict", action="store_true",
                        help="enforce the norm-parameter admissibility bounds")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads for mode solves")
    common.add_argument("--out", metavar="DIR", help="output directory")
    p = argparse.ArgumentParser(prog="tfns", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"tfns {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="time-step a perturbation of the traveling wave")
    c = sub.add_parser("coercivity", parents=[common], help="coercivity data of a quartic symbol")
    c.add_argument("symbol", help="q, q_tilde or q_breve")
    c.add_argument("--alpha", type=float, action="append", help="weight to evaluate (repeatable)")
    r = sub.add_parser("resolvent", parents=[common], help="resolvent solver self-checks")
    r.add_argument("--eta", type=float, default=1.0)
    r.add_argument("--lam", type=float, default=1.0)
    r.add_argument("--n-s", type=int, default=513)
    h = sub.add_parser("reconstruct", parents=[common], help="film height from a state dump")
    h.add_argument("--state", required=True, metavar="PATH")
    h.add_argument("--z-max", type=float, default=5.0)
    h.add_argument("--n-z", type=int, default=201)
    sub.add_parser("verify", parents=[common], help="run the invariant battery")
    return p


COMMANDS = {"simulate": cmd_simulate, "coercivity": cmd_coercivity, "resolvent": cmd_resolvent,
            "reconstruct": cmd_reconstruct, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError, ValueError, RuntimeError, OSError) as exc:
        print(f"tfns: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
