"""INI run configuration with a content hash.

Sections: ``[run]``, ``[supernet]``, ``[ppo]``, ``[dqn]``. Every key has a
default; ``canonical_text`` writes the fully resolved config, and its
SHA-256 is the config hash.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..diffcore.tensor import ConfigurationError
from ..envs import EnvConfig, EnvError, LevelMode
from ..rl import DqnConfig, PpoConfig
from ..searchspace import SearchSpaceError
from ..supernet import SupernetConfig

PHASES = ("search", "discretize", "eval", "random-search", "ablate", "enumerate-space", "analyze", "plot")
ABLATIONS = ("uniform_alpha", "norelu_space", "pure_conv3x3", "pure_conv5x5")


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(t) for t in text)
    return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)


@dataclass
class RunSection:
    phase: str = "search"
    algorithm: str = "ppo"
    game: str = "chase"
    level_mode: str = "infinite"
    test_level_mode: str = "infinite"
    grid: int = 12
    search_seeds: tuple[int, ...] = (0,)
    eval_seeds: tuple[int, ...] = (0, 1, 2)
    search_budget: int = 200_000
    eval_budget: int = 100_000
    eval_depths: tuple[int, ...] = (16, 16)
    discretize_step: int = -1
    cost_ratio: int = 3
    random_seed: int = 0
    ablation: str = "uniform_alpha"
    evolution_every: int = 1
    probe_source: str = "random"
    probe_size: int = 32
    cell: str = ""
    final_eval_episodes: int = 0
    workers: int = 1


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    supernet: SupernetConfig = field(default_factory=SupernetConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    source: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        r = self.run
        if r.phase not in PHASES:
            raise ConfigurationError(f"unknown phase {r.phase!r}; choose from {PHASES}")
        if r.algorithm not in ("ppo", "dqn"):
            raise ConfigurationError(f"unknown algorithm {r.algorithm!r}")
        if r.ablation not in ABLATIONS:
            raise ConfigurationError(f"unknown ablation {r.ablation!r}; choose from {ABLATIONS}")
        if not r.search_seeds or not r.eval_seeds:
            raise ConfigurationError("seed lists must not be empty")
        if r.search_budget < 0 or r.eval_budget < 0:
            raise ConfigurationError("budgets must be >= 0")
        if r.cost_ratio < 1:
            raise ConfigurationError("cost_ratio must be >= 1")
        if len(r.eval_depths) != len(self.supernet.depths):
            raise ConfigurationError("eval_depths and search depths need the same number of blocks")
        if any(s > e for s, e in zip(self.supernet.depths, r.eval_depths)):
            raise ConfigurationError(
                f"search depths {self.supernet.depths} exceed eval depths {r.eval_depths}")
        if r.probe_source not in ("random", "policy"):
            raise ConfigurationError("probe_source must be 'random' or 'policy'")
        try:
            self.env
        except EnvError as exc:
            raise ConfigurationError(str(exc)) from None

    @property
    def env(self) -> EnvConfig:
        return EnvConfig(self.run.game, self.run.level_mode, self.run.test_level_mode, self.run.grid)

    @property
    def rl(self):
        return self.ppo if self.run.algorithm == "ppo" else self.dqn

    @property
    def eval_supernet(self) -> SupernetConfig:
        return self.supernet.with_depths(self.run.eval_depths)

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section field overrides, e.g. ``run={"phase": "eval"}``."""
        parts = {"run": self.run, "supernet": self.supernet, "ppo": self.ppo, "dqn": self.dqn}
        for name, changes in sections.items():
            parts[name] = dataclasses.replace(parts[name], **changes)
        return RunConfig(**parts, source=self.source)

    def to_ini(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name in ("run", "supernet", "ppo", "dqn"):
            obj = getattr(self, name)
            cp[name] = {f.name: _render(getattr(obj, f.name)) for f in fields(obj)}
        return cp

    def canonical_text(self) -> str:
        buf = io.StringIO()
        self.to_ini().write(buf)
        return buf.getvalue()

    @property
    def hash(self) -> str:
        return config_hash(self.canonical_text())


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(cls, f, raw: str):
    default = getattr(cls(), f.name) if f.default is dataclasses.MISSING else f.default
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return _ints(raw)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"bad value for {f.name}: {raw!r}") from None


_SECTIONS = {"run": RunSection, "supernet": SupernetConfig, "ppo": PpoConfig, "dqn": DqnConfig}


def parse_config(text: str, source: str | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys like N, R, I are case-sensitive
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigurationError(f"config parse error: {exc}") from None
    unknown = set(cp.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        values = {}
        known = {f.name: f for f in fields(cls)}
        if cp.has_section(name):
            for key, raw in cp[name].items():
                if key not in known:
                    raise ConfigurationError(f"[{name}] unknown key {key!r}")
                values[key] = _coerce(cls, known[key], raw)
        if name == "supernet" and "depths" in values and "D" not in values:
            values["D"] = len(values["depths"])
        try:
            parts[name] = cls(**values)
        except (TypeError, SearchSpaceError) as exc:
            raise ConfigurationError(f"[{name}] {exc}") from None
    for mode in (parts["run"].level_mode, parts["run"].test_level_mode):
        try:
            LevelMode.parse(mode)
        except EnvError as exc:
            raise ConfigurationError(str(exc)) from None
    return RunConfig(**parts, source=source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
