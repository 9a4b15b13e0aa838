"""Experiment configuration files.

Grammar: INI-style sections of ``key = value`` lines (``configparser`` with
interpolation off; ``#`` and ``;`` start comment lines). Keys are case
sensitive. Lists are comma separated and may be empty. Booleans are
``true``/``false``.

Each subcommand reads a fixed set of sections and every key of those sections
must be present; sections it does not read are ignored. Unknown keys and
missing keys are both rejected with the section and key named.
:func:`default_config_text` renders a complete config for any subcommand.
"""
from __future__ import annotations

import configparser
from dataclasses import MISSING, dataclass, fields, replace
from typing import Any

from .alignment import AlignLossConfig
from .analysis import SetCountConfig
from .errors import ConfigError
from .metalearn import STRATEGIES, EvalProtocol, MetaConfig
from .synthworld import ConceptWorldConfig, LinearWorldConfig


@dataclass(frozen=True)
class ExperimentSection:
    seed: int = 0
    out: str = "out"


@dataclass(frozen=True)
class TradeoffSection:
    n_align_grid: tuple[int, ...] = (25, 50, 100, 200, 400, 800)
    sigma_W_grid: tuple[float, ...] = (0.05, 0.2, 0.5)
    n_seeds: int = 50
    mc_samples: int = 4000


@dataclass(frozen=True)
class TrainSection:
    strategy: str = "croma"


@dataclass(frozen=True)
class ProtocolSection:
    n_eval_tasks: int = 8
    n_way: int = 5
    k_grid: tuple[int, ...] = (1, 5, 10)
    repeats: int = 10
    task_seed: int = 0
    strategies: tuple[str, ...] = ("croma", "align_classify")
    noise_rates: tuple[float, ...] = ()


@dataclass(frozen=True)
class RetrieveSection:
    mode: str = "state"
    k_grid: tuple[int, ...] = (0,)
    pool_size: int = 50
    adapt_steps: int = 10


# section name -> (dataclass, keys not read from the file)
SECTIONS: dict[str, tuple[type, tuple[str, ...]]] = {
    "experiment": (ExperimentSection, ()),
    "linear_world": (LinearWorldConfig, ()),
    "concept_world": (ConceptWorldConfig, ()),
    "tradeoff": (TradeoffSection, ()),
    "meta": (MetaConfig, ("loss",)),
    "loss": (AlignLossConfig, ()),
    "train": (TrainSection, ()),
    "protocol": (ProtocolSection, ()),
    "retrieve": (RetrieveSection, ()),
    "setcount": (SetCountConfig, ()),
}

COMMAND_SECTIONS: dict[str, tuple[str, ...]] = {
    "tradeoff": ("experiment", "linear_world", "tradeoff"),
    "train": ("experiment", "concept_world", "meta", "loss", "train"),
    "evaluate": ("experiment", "concept_world", "meta", "loss", "protocol"),
    "retrieve": ("experiment", "concept_world", "meta", "loss", "retrieve"),
    "sweep-setcount": ("experiment", "setcount"),
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _element_type(default: tuple, annotation: str) -> type:
    if default:
        return type(default[0])
    return float if "float" in annotation else int if "int" in annotation else str


def _convert(raw: str, default: Any, annotation: str, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw not in ("true", "false"):
                raise ValueError(f"expected true or false, got {raw!r}")
            return raw == "true"
        if isinstance(default, tuple):
            kind = _element_type(default, annotation)
            return tuple(kind(v.strip()) for v in raw.split(",") if v.strip())
        return type(default)(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_section(name: str, items: dict[str, str]):
    cls, skip = SECTIONS[name]
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    unknown = sorted(set(items) - set(known))
    if unknown:
        raise ConfigError(f"[{name}] unknown key {unknown[0]!r}")
    missing = [k for k in known if k not in items]
    if missing:
        raise ConfigError(f"[{name}] missing key {missing[0]!r}")
    values = {}
    for key, f in known.items():
        default = f.default if f.default is not MISSING else f.default_factory()
        values[key] = _convert(items[key], default, str(f.type), f"[{name}] {key}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    sections: dict[str, Any]

    def __getitem__(self, name: str):
        return self.sections[name]

    @property
    def seed(self) -> int:
        return self.sections["experiment"].seed

    def meta(self) -> MetaConfig:
        return replace(self.sections["meta"], loss=self.sections["loss"])

    def protocol(self) -> EvalProtocol:
        p = self.sections["protocol"]
        return EvalProtocol(p.n_eval_tasks, p.n_way, p.k_grid, p.repeats, p.task_seed)


def _validate(cfg: ExperimentConfig) -> None:
    s = cfg.sections
    if "train" in s and s["train"].strategy not in STRATEGIES:
        raise ConfigError(f"[train] strategy: unknown strategy {s['train'].strategy!r}")
    if "protocol" in s:
        p = s["protocol"]
        for name in p.strategies:
            if name not in STRATEGIES:
                raise ConfigError(f"[protocol] strategies: unknown strategy {name!r}")
        if not p.strategies:
            raise ConfigError("[protocol] strategies: at least one strategy required")
        if any(not 0.0 <= r <= 1.0 for r in p.noise_rates):
            raise ConfigError("[protocol] noise_rates: rates must lie in [0, 1]")
        cfg.protocol()
    if "retrieve" in s:
        r = s["retrieve"]
        if r.mode not in ("state", "untrained", "identity"):
            raise ConfigError(f"[retrieve] mode: expected state, untrained or identity, got {r.mode!r}")
        if r.pool_size < 2:
            raise ConfigError("[retrieve] pool_size: must be >= 2")
        if any(k != 0 and k < 2 for k in r.k_grid) or not r.k_grid:
            raise ConfigError("[retrieve] k_grid: entries must be 0 or >= 2")
    if "tradeoff" in s:
        t = s["tradeoff"]
        if not t.n_align_grid or not t.sigma_W_grid or min(t.n_align_grid) < 1 or min(t.sigma_W_grid) < 0:
            raise ConfigError("[tradeoff] grids must be non-empty with n_align >= 1 and sigma_W >= 0")
        if t.n_seeds < 1 or t.mc_samples < 1000:
            raise ConfigError("[tradeoff] n_seeds must be >= 1 and mc_samples >= 1000")


def parse_config(text: str, command: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and fully validate ``text`` for ``command``."""
    if command not in COMMAND_SECTIONS:
        raise ConfigError(f"no config sections defined for command {command!r}")
    parser = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    sections = {}
    for name in COMMAND_SECTIONS[command]:
        if not parser.has_section(name):
            raise ConfigError(f"missing section [{name}]")
        sections[name] = parse_section(name, dict(parser.items(name)))
    cfg = ExperimentConfig(command, sections)
    _validate(cfg)
    return cfg


def default_config_text(command: str, **overrides: dict[str, Any]) -> str:
    """Complete config for ``command`` with defaults; ``overrides`` maps a
    section name to ``{key: value}`` replacements."""
    if command not in COMMAND_SECTIONS:
        raise ConfigError(f"no config sections defined for command {command!r}")
    lines = []
    for name in COMMAND_SECTIONS[command]:
        cls, skip = SECTIONS[name]
        lines.append(f"[{name}]")
        extra = overrides.get(name, {})
        for f in fields(cls):
            if f.name in skip:
                continue
            default = f.default if f.default is not MISSING else f.default_factory()
            lines.append(f"{f.name} = {_format(extra.get(f.name, default))}")
        lines.append("")
    return "\n".join(lines)
