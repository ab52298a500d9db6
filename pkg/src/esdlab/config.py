"""Run configuration: flat ``key = value`` files with ``[section]`` headers.

Example::

    [model]
    kind = general
    R = "20*(-0.6+0.2*S-(x-0.5)^2)"
    Q = "8.5-(0.5+rho)*S"
    beta = 1

    [domain]
    x_min = 0
    x_max = 1
    N = 1000

Unknown sections or keys are errors. Built-in presets (``paper-fig4``,
``chemostat-example``) can be shadowed by ``<name>.ini`` files in the
directory named by ``ESDLAB_PRESET_DIR``.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .exprlang import ParseError, parse
from .model import ChemostatModel, GeneralModel, TraitDomain
from .solver import SolverConfig, State, gaussian_initial

PRESET_ENV = "ESDLAB_PRESET_DIR"


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line else ""
        super().__init__(f"{message}{where}")


@dataclass(frozen=True)
class ModelSection:
    kind: str
    R: Optional[str] = None
    Q: Optional[str] = None
    beta: Optional[float] = None
    S0: Optional[float] = None
    R0: Optional[float] = None
    a: Optional[str] = None
    eta: Optional[str] = None
    box_S_min: Optional[float] = None
    box_rho_max: float = 10.0


@dataclass(frozen=True)
class InitSection:
    center: float
    width_coeff: float
    mass: float
    S: float


@dataclass(frozen=True)
class OutputSection:
    trajectory: str = "trajectory.csv"
    snapshots: Optional[str] = None
    series: Optional[str] = None
    figure: Optional[str] = None
    diagnostics: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection
    domain: TraitDomain
    solver: SolverConfig
    init: InitSection
    output: OutputSection = field(default_factory=OutputSection)
    name: str = ""

    def build_model(self):
        m = self.model
        if m.kind == "general":
            return GeneralModel(m.beta, m.R, m.Q, m.S0)
        return ChemostatModel(m.R0, m.S0, m.a if m.a is not None else "1", m.eta)

    def initial_state(self) -> State:
        i = self.init
        n = gaussian_initial(self.domain, i.center, i.width_coeff, i.mass)
        return State.from_density(self.domain, n, i.S)

    def with_beta(self, beta: float) -> "RunConfig":
        return replace(self, model=replace(self.model, beta=beta))

    def with_solver(self, **kw) -> "RunConfig":
        return replace(self, solver=replace(self.solver, **kw))


_EXPR_KEYS = {"R", "Q", "a", "eta"}
_SCHEMA = {
    "model": {f.name: f.type for f in fields(ModelSection)},
    "domain": {"x_min": "float", "x_max": "float", "N": "int"},
    "solver": {"dt": "float", "t_end": "float", "record_stride": "int", "snapshot_stride": "int"},
    "init": {f.name: "float" for f in fields(InitSection)},
    "output": {f.name: f.type for f in fields(OutputSection)},
}
_REQUIRED = {
    "general": ("R", "Q", "beta"),
    "chemostat": ("R0", "S0", "eta"),
}


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'":
        return v[1:-1]
    return v


def _convert(section: str, key: str, raw: str):
    typ = str(_SCHEMA[section][key])
    v = _unquote(raw)
    try:
        if "bool" in typ:
            low = v.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(v)
            return low in ("true", "yes", "1")
        if "int" in typ and "float" not in typ:
            return int(v)
        if "float" in typ:
            return float(v)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {typ}", key) from None
    return v


def parse_config_text(text: str, name: str = "") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", line=exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.option, exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line, expected 'key = value'", line=line) from None

    values: dict = {s: {} for s in _SCHEMA}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", section)
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", key)
            values[section][key] = _convert(section, key, raw)
    return _build(values, name)


def _need(values: dict, section: str, key: str):
    if key not in values[section]:
        raise ConfigError(f"missing required key {key!r} in [{section}]", key)
    return values[section][key]


def _build(values: dict, name: str) -> RunConfig:
    m = values["model"]
    kind = _need(values, "model", "kind")
    if kind not in _REQUIRED:
        raise ConfigError(f"model kind must be 'general' or 'chemostat', got {kind!r}", "kind")
    for key in _REQUIRED[kind]:
        _need(values, "model", key)
    for key in _EXPR_KEYS & set(m):
        try:
            parse(m[key])
        except ParseError as exc:
            raise ConfigError(f"[model] {key}: {exc}", key) from None
    model = ModelSection(**m)
    try:
        domain = TraitDomain(*(_need(values, "domain", k) for k in ("x_min", "x_max", "N")))
        solver = SolverConfig(**values["solver"])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    init = InitSection(**{k: _need(values, "init", k) for k in ("center", "width_coeff", "mass", "S")})
    cfg = RunConfig(model, domain, solver, init, OutputSection(**values["output"]), name)
    try:
        cfg.build_model()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    out = []
    sections = {
        "model": asdict(cfg.model),
        "domain": {"x_min": cfg.domain.x_min, "x_max": cfg.domain.x_max, "N": cfg.domain.N},
        "solver": asdict(cfg.solver),
        "init": asdict(cfg.init),
        "output": asdict(cfg.output),
    }
    for sec, kv in sections.items():
        out.append(f"[{sec}]")
        for k, v in kv.items():
            if v is None:
                continue
            out.append(f'{k} = "{v}"' if k in _EXPR_KEYS else f"{k} = {_fmt(v)}")
        out.append("")
    return "\n".join(out)


def save_config(cfg: RunConfig, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, dump_config(cfg))


def preset_names() -> list:
    root = resources.files("esdlab") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def _preset_text(name: str) -> Optional[str]:
    override = os.environ.get(PRESET_ENV)
    if override:
        p = Path(override) / f"{name}.ini"
        if p.is_file():
            return p.read_text(encoding="utf-8")
    res = resources.files("esdlab") / "presets" / f"{name}.ini"
    if res.is_file():
        return res.read_text(encoding="utf-8")
    return None


def load_config(path_or_preset) -> RunConfig:
    """Load a config file, or a preset when no such file exists."""
    p = Path(path_or_preset)
    if p.is_file():
        return parse_config_text(p.read_text(encoding="utf-8"), p.stem)
    text = _preset_text(str(path_or_preset))
    if text is None:
        raise FileNotFoundError(f"no config file or preset named {str(path_or_preset)!r}")
    return parse_config_text(text, str(path_or_preset))
