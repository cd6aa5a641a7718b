"""INI-file configuration for scene generation, training, and ablation.

One file carries five sections: ``[suite]`` (scene generation),
``[train]`` (optimizer schedule plus ablation mode), ``[loss]``
(regularizer coefficients), ``[model]`` (architecture and horizons), and
``[ablation]`` (seed list and sampling).  Unknown sections or keys are
rejected rather than ignored so typos surface immediately.  The model's
mode lives in ``[train]`` only.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .errors import ContractError, ParseError
from .losses import LossConfig
from .model import ModelConfig
from .training import TrainConfig

SECTIONS = ("suite", "train", "loss", "model", "ablation")


@dataclass(frozen=True)
class SuiteConfig:
    n_scenes: int = 500
    n_agents: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ContractError(f"n_scenes must be positive, got {self.n_scenes}")
        if self.n_agents < 4:
            raise ContractError(f"the split suite needs n_agents >= 4, got {self.n_agents}")


@dataclass(frozen=True)
class AblationConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    samples: int = 20
    curve_every: int = 5

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ContractError("ablation needs at least one seed")
        if self.samples < 1 or self.curve_every < 1:
            raise ContractError("samples and curve_every must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    suite: SuiteConfig = SuiteConfig()
    train: TrainConfig = TrainConfig()
    ablation: AblationConfig = AblationConfig()


def _parse_value(raw: str, type_name: str, where: str):
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        if type_name == "str":
            return raw.strip()
        if type_name == "tuple[int, ...]":
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ParseError(f"{where}: cannot parse {raw!r} as {type_name}") from exc
    raise ParseError(f"{where}: unsupported field type {type_name}")


def _section_kwargs(parser, section: str, cls, skip=()) -> dict:
    by_name = {f.name: f for f in fields(cls) if f.name not in skip}
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key not in by_name:
            raise ParseError(f"[{section}]: unknown key {key!r}")
        out[key] = _parse_value(raw, by_name[key].type, f"[{section}] {key}")
    return out


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ParseError(f"malformed config file {path}: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ParseError(f"unknown config sections: {sorted(unknown)}")
    suite = SuiteConfig(**_section_kwargs(parser, "suite", SuiteConfig))
    loss = LossConfig(**_section_kwargs(parser, "loss", LossConfig))
    model = ModelConfig(**_section_kwargs(parser, "model", ModelConfig, skip=("mode",)))
    train_kwargs = _section_kwargs(parser, "train", TrainConfig, skip=("loss", "model"))
    train = TrainConfig(loss=loss, model=model, **train_kwargs)
    ablation = AblationConfig(**_section_kwargs(parser, "ablation", AblationConfig))
    return ExperimentConfig(suite=suite, train=train, ablation=ablation)


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser()

    def put(section: str, obj, skip=()):
        parser[section] = {
            f.name: _format_value(getattr(obj, f.name))
            for f in fields(obj)
            if f.name not in skip
        }

    put("suite", cfg.suite)
    put("train", cfg.train, skip=("loss", "model"))
    put("loss", cfg.train.loss)
    put("model", cfg.train.model, skip=("mode",))
    put("ablation", cfg.ablation)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
