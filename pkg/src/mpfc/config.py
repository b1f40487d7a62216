"""Run configuration: a sectioned ``key = value`` format validated with line-anchored errors.

Example::

    [grid]
    dim = 2
    N = 64

    [params]
    beta = 1.0
    epsilon = 0.25

    [phi0]
    kind = random_smooth
    mean = 0.1
    amplitude = 0.1

    [run]
    t_end = 10
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .initial import KINDS, InitialConditionSpec
from .integrators import MIN_BETA, SCHEMES, SchemeConfig
from .model import Params
from .spectral import Grid


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _float(v):
    x = float(v)
    if not math.isfinite(x):
        raise ValueError(f"{v!r} is not finite")
    return x


def _int(v):
    x = float(v)
    if x != int(x):
        raise ValueError(f"{v!r} is not an integer")
    return int(x)


def _optional(conv):
    return lambda v: None if v.lower() in ("", "none", "auto") else conv(v)


def _mode(v):
    return tuple(int(p) for p in v.replace(",", " ").split())


# section -> key -> (converter, default); a default of REQUIRED marks a mandatory key
REQUIRED = object()
SCHEMA = {
    "grid": {"dim": (_int, 2), "N": (_int, 64), "padding_factor": (_float, 2.0)},
    "params": {"beta": (_float, REQUIRED), "epsilon": (_float, REQUIRED), "split_k": (_optional(_float), None),
               "cubic": (_float, 1.0)},
    "scheme": {"name": (str, "imex2"), "dt": (_float, 1e-3), "stabilizer": (_optional(_float), None),
               "newton_tol": (_float, 1e-10), "newton_max_iter": (_int, 50)},
    "phi0": {"kind": (str, "constant"), "mean": (_float, 0.0), "amplitude": (_float, 0.1), "q": (_float, 2.0),
             "kmax": (_optional(_float), None), "seed": (_optional(_int), None), "mode": (_mode, (1,)),
             "phase": (str, "sin"), "path": (str, "")},
    "run": {"t_end": (_float, REQUIRED), "sample_every": (_int, 1), "snapshot_every": (_int, 0),
            "seed": (_int, 0), "out": (str, "")},
}
SCHEMA["phi1"] = dict(SCHEMA["phi0"])


@dataclass
class RunConfig:
    grid: Grid
    params: Params
    scheme: SchemeConfig
    phi0: InitialConditionSpec
    phi1: InitialConditionSpec
    t_end: float
    sample_every: int = 1
    snapshot_every: int = 0
    seed: int = 0
    out: str = ""
    text: str = field(default="", repr=False)

    def initial_fields(self):
        """(phi0, phi1) on the grid; random kinds draw from distinct streams of ``seed``."""
        p0 = self.phi0.build(self.grid, seed=2 * self.seed)
        p1 = self.phi1.build(self.grid, seed=2 * self.seed + 1)
        return p0, p1


def _tokenize(text: str):
    """Yield (lineno, section, key, value), collecting syntax errors."""
    errors, entries = [], []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {lineno}: malformed section header {raw.strip()!r}")
                continue
            section = line[1:-1].strip()
            if section not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if section is None:
            errors.append(f"line {lineno}: key {key!r} appears before any section")
            continue
        entries.append((lineno, section, key, value))
    return entries, errors


def parse_config(text: str, pfc: bool = False, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a run configuration; raise ConfigError listing every violation.

    With ``pfc=True`` the scheme is forced to ``pfc_split1`` and beta may be
    zero or absent. ``overrides`` maps ``"section.key"`` to already-typed values
    (command-line flags) applied after parsing.
    """
    entries, errors = _tokenize(text)
    values: dict = {s: {} for s in SCHEMA}
    where: dict = {}
    bad = set()
    for lineno, section, key, raw in entries:
        if section not in SCHEMA:
            continue
        spec = SCHEMA[section].get(key)
        if spec is None:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        if key in values[section]:
            errors.append(f"line {lineno}: duplicate key {key!r} in [{section}] (first set on line {where[section, key]})")
            continue
        try:
            values[section][key] = spec[0](raw)
        except ValueError as exc:
            errors.append(f"line {lineno}: bad value for {section}.{key}: {exc}")
            bad.add((section, key))
            continue
        where[section, key] = lineno
    for name, val in (overrides or {}).items():
        section, key = name.split(".")
        values[section][key] = val
        where[section, key] = "command line"
    if pfc:
        values["params"].setdefault("beta", 0.0)

    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if key not in values[section]:
                if default is REQUIRED:
                    if (section, key) not in bad:
                        errors.append(f"missing required key {section}.{key}")
                else:
                    values[section][key] = default

    def at(section, key):
        loc = where.get((section, key))
        return f"line {loc}: " if isinstance(loc, int) else (f"{loc}: " if loc else "")

    if errors:
        raise ConfigError(errors)

    g, p, s, r = values["grid"], values["params"], values["scheme"], values["run"]
    grid = params = scheme = None
    try:
        grid = Grid(g["dim"], g["N"], g["padding_factor"])
    except ValueError as exc:
        errors.append(f"{at('grid', 'N')}{exc}")
    if pfc:
        s["name"] = "pfc_split1"
    if s["name"] not in SCHEMES:
        errors.append(f"{at('scheme', 'name')}unknown scheme {s['name']!r}; expected one of {SCHEMES}")
    elif s["name"] != "pfc_split1" and p["beta"] < MIN_BETA:
        errors.append(f"{at('params', 'beta')}beta={p['beta']} is below {MIN_BETA} for scheme {s['name']}; "
                      "run the first-order limit with subcommand pfc instead")
    beta = p["beta"] if p["beta"] > 0 else 1.0
    if p["beta"] < 0:
        errors.append(f"{at('params', 'beta')}beta must be positive, got {p['beta']}")
    try:
        params = Params(beta=beta, epsilon=p["epsilon"], split_k=p["split_k"], cubic=p["cubic"])
    except ValueError as exc:
        errors.append(f"{at('params', 'split_k')}{exc}")
    if s["name"] in SCHEMES:
        try:
            scheme = SchemeConfig(s["name"], s["dt"], s["stabilizer"], s["newton_tol"], s["newton_max_iter"])
        except ValueError as exc:
            errors.append(f"{at('scheme', 'dt')}{exc}")
    if r["t_end"] < 0:
        errors.append(f"{at('run', 't_end')}t_end must be >= 0, got {r['t_end']}")
    if r["sample_every"] < 1:
        errors.append(f"{at('run', 'sample_every')}sample_every must be >= 1")
    if r["snapshot_every"] < 0:
        errors.append(f"{at('run', 'snapshot_every')}snapshot_every must be >= 0")
    if r["seed"] < 0 or r["seed"] >= 2**64:
        errors.append(f"{at('run', 'seed')}seed must be an unsigned 64-bit integer")
    if scheme is not None and r["t_end"] >= 0:
        n = r["t_end"] / scheme.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            errors.append(f"{at('run', 't_end')}t_end={r['t_end']} is not a whole number of steps of dt={scheme.dt}")

    ics = []
    for name in ("phi0", "phi1"):
        v = values[name]
        if v["kind"] not in KINDS:
            errors.append(f"{at(name, 'kind')}unknown initial condition kind {v['kind']!r}; expected one of {KINDS}")
            ics.append(None)
            continue
        if v["kind"] == "random_smooth" and v["q"] < 2:
            errors.append(f"{at(name, 'q')}spectral decay exponent q must be >= 2, got {v['q']}")
        if v["kind"] == "from_snapshot" and not v["path"]:
            errors.append(f"{at(name, 'kind')}from_snapshot needs a path")
        if grid is not None and v["kind"] == "single_mode" and len(v["mode"]) > grid.dim:
            errors.append(f"{at(name, 'mode')}mode vector {v['mode']} exceeds dimension {grid.dim}")
        keys = {"constant": ("mean",), "single_mode": ("mean", "amplitude", "mode", "phase"),
                "random_smooth": ("mean", "amplitude", "q", "kmax", "seed"), "from_snapshot": ("path",)}[v["kind"]]
        ics.append(InitialConditionSpec(v["kind"], {k: v[k] for k in keys if v[k] is not None}))
    if errors:
        raise ConfigError(errors)
    return RunConfig(grid, params, scheme, ics[0], ics[1], r["t_end"], r["sample_every"], r["snapshot_every"],
                     r["seed"], r["out"], text)
