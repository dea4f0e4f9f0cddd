"""Flat ``section.key = value`` experiment configuration.

Keys without a section belong to ``run``. ``#`` starts a comment. Every
value can be overridden from the environment as ``CROWDMFG_<SECTION>_<KEY>``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from ..core import EXIT, WALL, Energy, Field, Grid, ModelSpec, Mobility, SolverConfig, build_grid

EXPERIMENTS = ("hughes", "mfg", "compare", "oracle", "beta_sweep", "energy_compare")
ENV_PREFIX = "CROWDMFG_"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key and line."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key, self.line = key, line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"`{key}`")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return t

    return parse


def _float_list(text: str) -> tuple[float, ...]:
    parts = [p for p in re.split(r"[,\s]+", text.strip().strip("[]()")) if p]
    return tuple(float(p) for p in parts)


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _str(text: str) -> str:
    return text.strip()


# section -> key -> (parser, default); a default of ``...`` marks a required key
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {
        "experiment": (_choice(*EXPERIMENTS), ...),
        "initial_datum": (_str, ...),
        "probes": (_float_list, ()),
        "output_dir": (_str, "output"),
        "seed": (_int, 0),
        "figures": (_choice("svg", "png", "none"), "svg"),
    },
    "grid": {
        "x_min": (float, -1.0),
        "x_max": (float, 1.0),
        "n_cells": (_int, 200),
        "left": (_choice(EXIT, WALL), EXIT),
        "right": (_choice(EXIT, WALL), EXIT),
    },
    "model": {
        "mobility": (_choice(*(m.value for m in Mobility)), Mobility.HUGHES.value),
        "energy": (_choice(*(e.value for e in Energy)), Energy.LINEAR.value),
        "sigma": (float, 0.1),
        "beta": (float, 1.0),
        "alpha": (float, 1.0),
        "a": (float, 3.0),
        "rho_max": (float, 1.0),
        "table": (_str, None),
    },
    "solver": {
        "dt": (float, 0.1),
        "T": (float, 3.0),
        "newton_tol": (float, 1e-6),
        "newton_max_iter": (_int, 50),
        "tau": (float, 1.0),
        "descent_tol": (float, 1e-6),
        "descent_max_iter": (_int, 500),
        "armijo": (_bool, True),
        "grad_tol": (_opt_float, None),
        "output_dt": (_opt_float, None),
        "metric": (_choice("mobility", "l2"), "mobility"),
    },
    "hughes": {
        "n_cells": (_int, None),
        "dt": (float, 1e-5),
        "f_floor": (float, 1e-6),
        "output_dt": (_opt_float, None),
    },
    "oracle": {
        "n_particles": (_int, 100_000),
        "dt_sde": (float, 0.01),
        "boundary": (_choice("reflect", "absorb"), "reflect"),
    },
    "sweep": {
        "beta": (_float_list, (0.1, 1.0, 10.0)),
        "frames": (_float_list, (0.1, 0.7, 1.5)),
        "models": (_str, "mfg"),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; ``values`` holds every resolved key."""

    values: Mapping[str, Mapping[str, Any]]
    base_dir: Path = Path(".")
    sources: Mapping[str, str] = field(default_factory=dict)

    def __getitem__(self, section: str) -> Mapping[str, Any]:
        return self.values[section]

    @property
    def experiment(self) -> str:
        return self.values["run"]["experiment"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["run"]["output_dir"])

    @property
    def probes(self) -> tuple[float, ...]:
        return self.values["run"]["probes"]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def grid(self, n_cells: int | None = None) -> Grid:
        g = self.values["grid"]
        return build_grid(g["x_min"], g["x_max"], n_cells or g["n_cells"], (g["left"], g["right"]))

    def model(self) -> ModelSpec:
        m = dict(self.values["model"])
        table = m.pop("table")
        if m["mobility"] == Mobility.TABULATED.value:
            if table is None:
                raise ConfigError("tabulated mobility needs model.table", "model.table")
            import numpy as np

            data = np.loadtxt(self.resolve(table), delimiter=",", ndmin=2)
            m["table"] = (tuple(data[:, 0]), tuple(data[:, 1]))
        return ModelSpec(**m)

    def solver(self) -> SolverConfig:
        return SolverConfig(**self.values["solver"])

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def initial_density(self, grid: Grid | None = None) -> Field:
        from .initial import initial_datum

        return initial_datum(self.values["run"]["initial_datum"], grid or self.grid(), self.base_dir)

    def as_dict(self) -> dict[str, dict[str, Any]]:
        return {s: dict(v) for s, v in self.values.items()}

    def replace(self, section: str, **changes) -> "ExperimentConfig":
        values = self.as_dict()
        values[section].update(changes)
        return ExperimentConfig(values, self.base_dir, self.sources)


def _split_key(raw: str, lineno: int | None) -> tuple[str, str]:
    key = raw.strip()
    if "." in key:
        section, name = key.split(".", 1)
    else:
        section, name = "run", key
    if section not in SCHEMA:
        raise ConfigError(f"unknown section {section!r}", key, lineno)
    if name not in SCHEMA[section]:
        raise ConfigError("unknown key", key, lineno)
    return section, name


def _env_overrides(env: Mapping[str, str]) -> list[tuple[str, str, str]]:
    out = []
    for var, value in env.items():
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX) :]
        for section, keys in SCHEMA.items():
            prefix = section.upper() + "_"
            if rest.startswith(prefix):
                wanted = rest[len(prefix) :].lower()
                match = [k for k in keys if k.lower() == wanted]
                if not match:
                    raise ConfigError(f"unknown key in environment variable {var}", f"{section}.{wanted}")
                out.append((section, match[0], value))
                break
        else:
            raise ConfigError(f"unknown section in environment variable {var}")
    return out


def parse_config(text: str, base_dir: str | Path = ".", env: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Parse and validate configuration text, then apply environment overrides."""
    raw: dict[tuple[str, str], tuple[str, int | None, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected `key = value`, got {body!r}", None, lineno)
        key, value = body.split("=", 1)
        section, name = _split_key(key, lineno)
        if (section, name) in raw:
            raise ConfigError("duplicate key", f"{section}.{name}", lineno)
        raw[(section, name)] = (value.strip(), lineno, "file")
    for section, name, value in _env_overrides(os.environ if env is None else env):
        raw[(section, name)] = (value.strip(), None, f"env {ENV_PREFIX}{section.upper()}_{name.upper()}")

    values: dict[str, dict[str, Any]] = {}
    sources: dict[str, str] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for name, (parse, default) in keys.items():
            qual = f"{section}.{name}"
            if (section, name) in raw:
                text_value, lineno, source = raw[(section, name)]
                try:
                    values[section][name] = parse(text_value)
                except ValueError as exc:
                    raise ConfigError(f"bad value {text_value!r} ({exc})", qual, lineno) from None
                sources[qual] = source
            elif default is ...:
                raise ConfigError("missing required key", qual)
            else:
                values[section][name] = default
                sources[qual] = "default"
    cfg = ExperimentConfig(values, Path(base_dir), sources)
    _validate(cfg, raw)
    return cfg


def _validate(cfg: ExperimentConfig, raw) -> None:
    def line_of(section, name):
        entry = raw.get((section, name))
        return entry[1] if entry else None

    def check(builder, section_hint):
        try:
            return builder()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            msg = str(exc)
            for (section, name) in raw:
                if section == section_hint and re.search(rf"\b{re.escape(name)}\b", msg):
                    raise ConfigError(msg, f"{section}.{name}", line_of(section, name)) from None
            raise ConfigError(msg, section_hint) from None

    grid = check(cfg.grid, "grid")
    check(cfg.model, "model")
    check(lambda: cfg.solver().times, "solver")
    h = cfg["hughes"]
    if h["dt"] <= 0:
        raise ConfigError("must be positive", "hughes.dt", line_of("hughes", "dt"))
    if h["n_cells"] is not None and h["n_cells"] < 2:
        raise ConfigError("must be >= 2", "hughes.n_cells", line_of("hughes", "n_cells"))
    o = cfg["oracle"]
    if o["n_particles"] < 1:
        raise ConfigError("must be >= 1", "oracle.n_particles", line_of("oracle", "n_particles"))
    if o["dt_sde"] <= 0:
        raise ConfigError("must be positive", "oracle.dt_sde", line_of("oracle", "dt_sde"))
    for x in cfg.probes:
        if not grid.x_min <= x <= grid.x_max:
            raise ConfigError(f"probe {x} outside [{grid.x_min}, {grid.x_max}]", "run.probes", line_of("run", "probes"))
    try:
        cfg.initial_density(grid)
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc), "run.initial_datum", line_of("run", "initial_datum")) from None


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent, env=env)
