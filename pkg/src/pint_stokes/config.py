"""Run configuration: defaults, validation and the key=value file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigurationError
from .inner_solvers import InnerSettings
from .krylov import KrylovConfig
from .mesh_fem import MAX_LEVEL
from .parallel import WORKERS_ENV

__all__ = ["RunConfig", "PROBLEMS", "PRECONDITIONERS", "parse_config_file",
           "load_config", "apply_env_overrides"]

PROBLEMS = ("stokes_manufactured", "oseen_cavity")
PRECONDITIONERS = ("linear", "nonlinear", "oseen_uz")


@dataclass
class RunConfig:
    """Every knob of a single solve.

    ``restart = None`` picks 10 for the flexible outer solver and 30 for
    plain GMRES with the linear preconditioner.
    """

    problem: str = "stokes_manufactured"
    preconditioner: str = "nonlinear"
    level: int = 3
    coarsest_level: int = 1
    n_t: int = 15
    T: float = 10.0
    beta: float = 1e-3
    nu: float = 1e-2
    tol: float = 1e-6
    restart: Optional[int] = None
    max_iters: int = 500
    inner_tol: float = 1e-2
    inner_cap: int = 200
    uzawa_iters: int = 6
    uzawa_mu: float = 0.75
    mg_cycles: int = 4
    sor_omega: float = 1.0
    pre_sweeps: int = 2
    post_sweeps: int = 2
    chebyshev_iters: int = 10
    conjugate_symmetry: bool = True
    workers: int = 1
    weak_partition: bool = False
    seed: int = 0
    output_dir: Optional[str] = None
    run_name: str = "run"
    dump_solution: bool = False
    export_matrices: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> "RunConfig":
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ConfigurationError(f"unknown preconditioner {self.preconditioner!r}; "
                                     f"choose from {PRECONDITIONERS}")
        if self.problem == "oseen_cavity" and self.preconditioner != "oseen_uz":
            raise ConfigurationError("the Oseen cavity needs the 'oseen_uz' preconditioner")
        if not 1 <= self.coarsest_level <= self.level <= MAX_LEVEL:
            raise ConfigurationError(f"need 1 <= coarsest_level <= level <= {MAX_LEVEL}, got "
                                     f"{self.coarsest_level} and {self.level}")
        if self.n_t < 3:
            raise ConfigurationError(f"n_t must be >= 3, got {self.n_t}")
        for name in ("T", "beta", "nu", "tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.restart is not None and self.restart < 1:
            raise ConfigurationError(f"restart must be >= 1, got {self.restart}")
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        self.inner_settings()  # range checks of the inner knobs
        return self

    @property
    def n_blocks(self) -> int:
        return self.n_t - 1

    @property
    def flexible(self) -> bool:
        return self.preconditioner != "linear"

    def inner_settings(self) -> InnerSettings:
        return InnerSettings(mg_cycles=self.mg_cycles, sor_omega=self.sor_omega,
                             pre_sweeps=self.pre_sweeps, post_sweeps=self.post_sweeps,
                             chebyshev_iters=self.chebyshev_iters, inner_tol=self.inner_tol,
                             inner_cap=self.inner_cap, uzawa_iters=self.uzawa_iters,
                             uzawa_mu=self.uzawa_mu,
                             use_conjugate_symmetry=self.conjugate_symmetry)

    def krylov_config(self) -> KrylovConfig:
        restart = self.restart or (10 if self.flexible else 30)
        return KrylovConfig(tol=self.tol, restart=restart, max_iters=self.max_iters)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    optional = isinstance(typ, str) and typ.startswith("Optional[")
    if optional:
        if raw.lower() in ("", "none", "null"):
            return None
        typ = typ[len("Optional["):-1]
    try:
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        if typ in ("bool", bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value {raw!r} for {name}") from exc
    return raw


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Parse a ``key = value`` file into typed overrides.

    ``#`` starts a comment and ``[section]`` headers are ignored, so simple
    TOML files with scalar values are accepted too.
    """
    out = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, _FIELD_TYPES[key])
    return out


def apply_env_overrides(values: dict, environ=None) -> dict:
    """Apply the worker-count environment override."""
    environ = os.environ if environ is None else environ
    raw = environ.get(WORKERS_ENV)
    if raw:
        values = dict(values)
        values["workers"] = _coerce("workers", raw, "int")
    return values


def load_config(path=None, overrides: Optional[dict] = None, environ=None) -> RunConfig:
    """Defaults, then the file, then the environment, then explicit overrides."""
    values: dict = {}
    if path is not None:
        values.update(parse_config_file(path))
    values = apply_env_overrides(values, environ)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)
