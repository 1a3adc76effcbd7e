"""Run configuration: a sectioned key = value document.

    # comment
    [grid]
    n_s = 257
    [solver]
    dt = 0.01

Sections and keys are listed in SCHEMA. Values are ints, floats,
true/false or strings (optionally double-quoted). Every key can be
overridden from the environment as TFNS_<SECTION>_<KEY>, e.g.
TFNS_SOLVER_DT=0.05.
"""
from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field, fields, replace

from .grid import GridSpec
from .norms import NormParams
from .stepper import SolverConfig

ENV_PREFIX = "TFNS_"
IC_KINDS = ("zero", "bump", "file")


class ConfigError(ValueError):
    """Malformed or invalid configuration document."""


@dataclass(frozen=True)
class InitialCondition:
    kind: str = "bump"
    amplitude: float = 1e-3
    mode: int = 1          # y wave number of the bump
    path: str = ""         # binary dump, for kind = file


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    norms: NormParams = field(default_factory=NormParams)
    initial: InitialCondition = field(default_factory=InitialCondition)
    out: str = "out"
    seed: int = 0
    strict: bool = False
    svg: bool = False

    def solver_config(self) -> SolverConfig:
        """SolverConfig with delta and derivative counts taken from the norm section."""
        np_ = replace(self.solver.norm_params, k=self.norms.k, k_tilde=self.norms.k_tilde,
                      k_check=self.norms.k_check, k_breve=self.norms.k_breve,
                      delta=self.norms.delta)
        return replace(self.solver, delta=self.norms.delta, norm_params=np_)

    def digest(self) -> str:
        return hashlib.sha256(emit_config(self).encode()).hexdigest()


SCHEMA = {
    "grid": ("s_min", "s_max", "n_s", "y_period", "n_y"),
    "solver": ("dt", "t_end", "picard_iters", "margin_floor", "output_every",
               "dealias", "threads"),
    "norms": ("k", "k_tilde", "k_check", "k_breve", "delta"),
    "initial": ("kind", "amplitude", "mode", "path"),
    "run": ("out", "seed", "strict", "svg"),
}


def _types():
    out = {}
    for sec, cls in (("grid", GridSpec), ("solver", SolverConfig), ("norms", NormParams),
                     ("initial", InitialCondition), ("run", RunConfig)):
        ann = {f.name: f.type for f in fields(cls)}
        for key in SCHEMA[sec]:
            out[(sec, key)] = str(ann[key])
    return out


_TYPES = _types()


def _convert(raw: str, typ: str, where: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if typ == "int":
            return int(raw)
        if typ == "float":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
            return val
        if len(raw) >= 2 and raw[0] == raw[-1] == '"':
            return raw[1:-1]
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ}") from None


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _parse_pairs(text: str):
    section = None
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = _strip_comment(line).strip()
        if not stripped:
            continue
        where = f"line {lineno}"
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if section is None:
            raise ConfigError(f"{where}: key {key!r} outside any section")
        if key not in SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
        if (section, key) in seen:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set on line {seen[(section, key)]})")
        seen[(section, key)] = lineno
        yield section, key, _convert(raw, _TYPES[(section, key)], where)


def _env_pairs(env):
    for (sec, key), typ in _TYPES.items():
        name = f"{ENV_PREFIX}{sec.upper()}_{key.upper()}"
        if name in env:
            yield sec, key, _convert(env[name], typ, f"environment {name}")


def _build(pairs) -> RunConfig:
    vals = {sec: {} for sec in SCHEMA}
    for sec, key, val in pairs:
        vals[sec][key] = val
    try:
        grid = GridSpec(**vals["grid"])
        norms = NormParams(**vals["norms"])
        solver = SolverConfig(**vals["solver"], delta=norms.delta)
        ic = InitialCondition(**vals["initial"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if ic.kind not in IC_KINDS:
        raise ConfigError(f"initial.kind must be one of {IC_KINDS}, got {ic.kind!r}")
    if ic.kind == "file" and not ic.path:
        raise ConfigError("initial.kind = file needs initial.path")
    return RunConfig(grid, solver, norms, ic, **vals["run"])


def parse_config(text: str, env=None, strict: bool | None = None) -> RunConfig:
    """Parse, apply TFNS_ environment overrides and validate.

    strict=None takes the flag from [run] strict; under strict the norm
    derivative counts must satisfy the admissibility bounds.
    """
    env = {} if env is None else env
    cfg = _build(list(_parse_pairs(text)) + list(_env_pairs(env)))
    if strict is not None:
        cfg = replace(cfg, strict=strict)
    try:
        cfg.norms.validate(cfg.strict)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | None, env=None, strict: bool | None = None) -> RunConfig:
    text = ""
    if path is not None:
        with open(path) as fh:
            text = fh.read()
    return parse_config(text, os.environ if env is None else env, strict)


def _fmt(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, str):
        return f'"{val}"'
    return str(val)


def emit_config(cfg: RunConfig) -> str:
    """Canonical text form; parse_config(emit_config(c)) == c."""
    objs = {"grid": cfg.grid, "solver": cfg.solver, "norms": cfg.norms,
            "initial": cfg.initial, "run": cfg}
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_fmt(getattr(objs[sec], k))}" for k in keys)
        lines.append("")
    return "\n".join(lines)
