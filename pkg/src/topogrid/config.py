"""Run configuration: one TOML file mirroring the trainer, environment and scoring settings.

Example::

    grid = "case5.json"          # relative to the config file
    chronics = "chronics"
    train_chronics = [0, 1, 2]
    test_chronics = [17, 19]
    encoder = "flat"
    seed = 0
    out = "runs/flat-0"

    [env]
    nb_timestep_reconnection = 12
    [env.opponent]
    attack_probability = 0.02

    [ppo]
    total_steps = 200000

    [score]
    beta = 2.0

    [opponent]
    train = true
    evaluate = [false, true]
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .env import EnvConfig, OpponentConfig
from .fixtures import TEST_CHRONICS, TRAIN_CHRONICS, data_dir
from .metrics import ScoreConfig
from .nn.encoders import ENCODERS
from .ppo import PPOConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid: Path = field(default_factory=lambda: data_dir() / "case5.json")
    chronics: Path = field(default_factory=lambda: data_dir() / "chronics")
    train_chronics: tuple[int, ...] = TRAIN_CHRONICS
    test_chronics: tuple[int, ...] = TEST_CHRONICS
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    encoder: str = "flat"
    train_opponent: bool = True
    eval_opponent: tuple[bool, ...] = (False, True)
    seed: int = 0
    out: Path = Path("runs/default")

    def __post_init__(self):
        self.grid = Path(self.grid)
        self.chronics = Path(self.chronics)
        self.out = Path(self.out)
        self.train_chronics = tuple(int(i) for i in self.train_chronics)
        self.test_chronics = tuple(int(i) for i in self.test_chronics)
        self.eval_opponent = tuple(bool(b) for b in self.eval_opponent)
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}; expected one of {', '.join(ENCODERS)}")
        if not self.eval_opponent:
            raise ConfigError("at least one evaluation opponent mode is required")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    def check_paths(self) -> None:
        if not self.grid.is_file():
            raise ConfigError(f"grid file not found: {self.grid}")
        if not self.chronics.is_dir():
            raise ConfigError(f"chronics directory not found: {self.chronics}")

    def check_split(self) -> None:
        """Held-out chronics must never reach the training sampler."""
        leaked = sorted(set(self.train_chronics) & set(self.test_chronics))
        if leaked:
            raise ConfigError(f"test chronics {leaked} are listed for training")
        if not self.train_chronics:
            raise ConfigError("no training chronics")

    def env_config(self, opponent: bool) -> EnvConfig:
        return dataclasses.replace(self.env, opponent=dataclasses.replace(self.env.opponent, enabled=opponent))

    def with_overrides(self, **kw: Any) -> RunConfig:
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw) if kw else self


def _build(cls, table: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(unknown)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def parse_config(data: dict, base: Path = Path(".")) -> RunConfig:
    data = dict(data)
    kw: dict[str, Any] = {}
    env = dict(data.pop("env", {}))
    opp = env.pop("opponent", {})
    if "attackable_lines" in opp:
        opp["attackable_lines"] = tuple(opp["attackable_lines"])
    kw["env"] = _build(EnvConfig, {**env, "opponent": _build(OpponentConfig, opp, "env.opponent")}, "env")
    kw["ppo"] = _build(PPOConfig, data.pop("ppo", {}), "ppo")
    kw["score"] = _build(ScoreConfig, data.pop("score", {}), "score")
    modes = data.pop("opponent", {})
    if "train" in modes:
        kw["train_opponent"] = bool(modes.pop("train"))
    if "evaluate" in modes:
        kw["eval_opponent"] = tuple(modes.pop("evaluate"))
    if modes:
        raise ConfigError(f"[opponent] unknown keys: {', '.join(sorted(modes))}")
    for key in ("grid", "chronics", "out"):
        if key in data:
            p = Path(data.pop(key))
            kw[key] = p if p.is_absolute() else base / p
    for key in ("train_chronics", "test_chronics", "encoder", "seed"):
        if key in data:
            kw[key] = data.pop(key)
    if data:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(data))}")
    try:
        return RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> RunConfig:
    """Read a TOML run config; ``None`` gives the bundled-fixture defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, path.parent)
