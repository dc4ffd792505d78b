"""Scenario configuration: flat ``dotted.key = value`` text files."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .assembly import ParameterError, PhysicalParams
from .system import NewtonConfig

SCENARIOS = ("example1_mms", "example3_filter", "custom")


class ConfigError(ValueError):
    """Bad configuration; ``key`` names the offending entry when known."""

    def __init__(self, msg, key=None, lineno=None):
        where = []
        if lineno is not None:
            where.append(f"line {lineno}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)
        self.key = key
        self.lineno = lineno


# default values per scenario; params follow the example parameter lists
DEFAULTS = {
    "example1_mms": {
        "params.mu": 1.0, "params.rho": 1.0, "params.lambda_p": 1.0, "params.mu_p": 1.0,
        "params.s0": 1.0, "params.K": "1 0 0 1", "params.alpha_p": 1.0, "params.alpha_bjs": 1.0,
        "time.dt": 1e-3, "time.T": 0.01, "levels": "0,1,2,3",
    },
    "example3_filter": {
        "params.mu": 1.81e-8, "params.rho": 1.225e-3, "params.s0": 7e-2,
        "params.K": "0.505e-6 0.495e-6 0.495e-6 0.505e-6", "params.alpha_p": 1.0, "params.alpha_bjs": 1.0,
        "material": "hard", "mesh.h": 0.0125, "bc.p_ref": 100.0, "bc.dp": 1e-9,
        "time.dt": 1.0, "time.T": 80.0, "output.vtk": True, "output.every": 1,
    },
    "custom": {
        "params.mu": 1.0, "params.rho": 1.0, "params.lambda_p": 1.0, "params.mu_p": 1.0,
        "params.s0": 1.0, "params.K": "1 0 0 1", "params.alpha_p": 1.0, "params.alpha_bjs": 1.0,
        "bc.p_ref": 0.0, "bc.dp": 0.0, "time.dt": 1.0, "time.T": 1.0, "output.vtk": True, "output.every": 1,
    },
}

FLOAT_KEYS = {
    "params.mu", "params.rho", "params.lambda_p", "params.mu_p", "params.s0", "params.alpha_p",
    "params.alpha_bjs", "params.kappa1", "params.kappa2", "params.rho_p", "params.beta",
    "time.dt", "time.T", "mesh.h", "bc.p_ref", "bc.dp", "newton.abs_tol", "newton.rel_tol", "newton.step_tol",
}
INT_KEYS = {"newton.max_iters", "threads", "output.every"}
BOOL_KEYS = {"output.vtk", "output.interface_csv"}
STR_KEYS = {"scenario", "material", "mesh.fluid_file", "mesh.poro_file", "output.dir", "params.K", "levels",
            "interface.method"}
KNOWN = FLOAT_KEYS | INT_KEYS | BOOL_KEYS | STR_KEYS


def parse_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno=lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno=lineno)
        if key in raw:
            raise ConfigError("duplicate key", key, lineno)
        raw[key] = (val, lineno)
    return raw


def _coerce(key, val, lineno=None):
    try:
        if key in FLOAT_KEYS:
            return float(val)
        if key in INT_KEYS:
            return int(val)
        if key in BOOL_KEYS:
            if isinstance(val, bool):
                return val
            low = str(val).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(val)
    except (TypeError, ValueError):
        kind = "number" if key in FLOAT_KEYS else "integer" if key in INT_KEYS else "boolean"
        raise ConfigError(f"expected a {kind}, got {val!r}", key, lineno) from None
    return str(val)


def _matrix(key, val):
    try:
        nums = [float(s) for s in str(val).replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"expected 4 numbers, got {val!r}", key) from None
    if len(nums) != 4:
        raise ConfigError(f"expected 4 numbers (row-major 2x2), got {len(nums)}", key)
    return np.array(nums).reshape(2, 2)


def _levels(val):
    try:
        out = [int(s) for s in str(val).replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"expected a list of integers, got {val!r}", "levels") from None
    if not out or min(out) < 0:
        raise ConfigError("levels must be a non-empty list of non-negative integers", "levels")
    return out


@dataclass
class ScenarioConfig:
    scenario: str
    params: PhysicalParams
    dt: float
    T: float
    newton: NewtonConfig
    out_dir: Path
    levels: list = field(default_factory=list)
    threads: int = 1
    material: str = "hard"
    mesh_h: Optional[float] = None
    fluid_file: Optional[Path] = None
    poro_file: Optional[Path] = None
    p_ref: float = 0.0
    dp: float = 0.0
    vtk: bool = True
    every: int = 1
    interface_csv: bool = True
    interface_method: str = "merged"
    values: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def canonical_text(self) -> str:
        """Fully resolved settings, one ``key = value`` per line, sorted."""
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))

    def digest(self) -> str:
        """Git blob SHA-1 of the canonical text."""
        data = self.canonical_text().encode()
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def build_config(raw: dict, base_dir: Optional[Path] = None, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Resolve defaults and check every key; raises :class:`ConfigError`."""
    base_dir = Path(base_dir or ".")
    lines = {k: ln for k, (_, ln) in raw.items()}
    vals = {k: v for k, (v, _) in raw.items()}
    vals.update(overrides or {})
    scen = vals.get("scenario")
    if scen is None:
        raise ConfigError("missing required key", "scenario")
    if scen not in SCENARIOS:
        raise ConfigError(f"must be one of {', '.join(SCENARIOS)}, got {scen!r}", "scenario", lines.get("scenario"))
    for k in vals:
        if k not in KNOWN:
            raise ConfigError("unknown key", k, lines.get(k))
    merged = dict(DEFAULTS[scen])
    merged.update(vals)
    typed = {k: _coerce(k, v, lines.get(k)) for k, v in merged.items()}

    material = typed.get("material", "hard")
    if scen == "example3_filter":
        from .scenarios import MATERIALS

        if material not in MATERIALS:
            raise ConfigError(f"must be one of {', '.join(sorted(MATERIALS))}, got {material!r}", "material",
                              lines.get("material"))
        for k, v in MATERIALS[material].items():
            typed.setdefault(f"params.{k}", v)

    pkw = {k.split(".", 1)[1]: v for k, v in typed.items() if k.startswith("params.")}
    pkw["K"] = _matrix("params.K", pkw.get("K", "1 0 0 1"))
    try:
        params = PhysicalParams(**pkw)
    except ParameterError as exc:
        raise ConfigError("; ".join(exc.violations), "params") from None

    dt, T = typed["time.dt"], typed["time.T"]
    if not dt > 0:
        raise ConfigError("must be > 0", "time.dt", lines.get("time.dt"))
    if not T > 0:
        raise ConfigError("must be > 0", "time.T", lines.get("time.T"))
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ConfigError(f"T = {T!r} is not an integer multiple of dt = {dt!r}", "time.T", lines.get("time.T"))

    try:
        newton = NewtonConfig(**{k.split(".", 1)[1]: v for k, v in typed.items() if k.startswith("newton.")})
    except ValueError as exc:
        raise ConfigError(str(exc), "newton") from None
    threads = typed.get("threads", 1)
    if threads < 1:
        raise ConfigError("must be >= 1", "threads", lines.get("threads"))
    every = typed.get("output.every", 1)
    if every < 1:
        raise ConfigError("must be >= 1", "output.every", lines.get("output.every"))
    method = typed.get("interface.method", "merged")
    if method not in ("merged", "direct"):
        raise ConfigError("must be 'merged' or 'direct'", "interface.method", lines.get("interface.method"))

    levels = _levels(typed["levels"]) if "levels" in typed else []
    if scen == "example1_mms":
        from .verify import FLUID_LEVELS

        bad = [lv for lv in levels if lv >= len(FLUID_LEVELS)]
        if bad:
            raise ConfigError(f"levels {bad} out of range 0..{len(FLUID_LEVELS) - 1}", "levels", lines.get("levels"))

    fluid_file = poro_file = None
    if scen == "custom":
        for key in ("mesh.poro_file",):
            if key not in typed:
                raise ConfigError("required for the custom scenario", key)
        poro_file = base_dir / typed["mesh.poro_file"]
        if "mesh.fluid_file" in typed:
            fluid_file = base_dir / typed["mesh.fluid_file"]
        for key, p in (("mesh.fluid_file", fluid_file), ("mesh.poro_file", poro_file)):
            if p is not None and not p.is_file():
                raise ConfigError(f"file not found: {p}", key, lines.get(key))
    h = typed.get("mesh.h")
    if h is not None and not h > 0:
        raise ConfigError("must be > 0", "mesh.h", lines.get("mesh.h"))

    out_dir = Path(typed.get("output.dir", f"out_{scen}"))
    return ScenarioConfig(
        scenario=scen, params=params, dt=dt, T=T, newton=newton, out_dir=out_dir, levels=levels,
        threads=threads, material=material, mesh_h=h, fluid_file=fluid_file, poro_file=poro_file,
        p_ref=typed.get("bc.p_ref", 0.0), dp=typed.get("bc.dp", 0.0), vtk=typed.get("output.vtk", False),
        every=every, interface_csv=typed.get("output.interface_csv", True), interface_method=method,
        values={k: typed[k] for k in typed if k != "output.dir"},
    )


def load_config(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return build_config(parse_text(text), path.parent, overrides)
