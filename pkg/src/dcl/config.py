"""Configuration files: flat sections of key = value pairs, parsed with
configparser, typed against the dataclass defaults. Unknown sections or keys
are errors so typos fail loudly. Precedence: CLI overrides > file > defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from typing import Any

from .data import CorpusSpec, ManipKind
from .encoder import EncoderConfig
from .inter_icl import ContrastConfig
from .trainer import IntraConfig, TrainConfig
from .views import ViewPolicy


class ConfigError(Exception):
    pass


_SECTION_TYPES = {
    "train": TrainConfig,
    "encoder": EncoderConfig,
    "views": ViewPolicy,
    "contrast": ContrastConfig,
    "intra": IntraConfig,
    "corpus": CorpusSpec,
}

# train-section keys that are themselves nested sections
_NESTED = {"encoder", "views", "contrast", "intra"}


def _coerce(raw: str, default: Any, key: str) -> Any:
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [float(p) for p in raw.replace("(", "").replace(")", "").split(",")]
            return tuple(parts)
        if isinstance(default, list):  # manipulation families
            return [ManipKind(p.strip()) for p in raw.split(",") if p.strip()]
        return raw
    except (ValueError, KeyError) as e:
        raise ConfigError(f"bad value for key '{key}': {raw!r} ({e})") from e


def _apply_section(obj: Any, section: str, pairs: dict[str, str]) -> None:
    fields = {f.name for f in dataclasses.fields(obj)} - _NESTED
    for key, raw in pairs.items():
        if key not in fields:
            raise ConfigError(f"unknown config key '{section}.{key}'")
        setattr(obj, key, _coerce(raw, getattr(obj, key), f"{section}.{key}"))


def load_config(
    path: str | os.PathLike | None = None,
    overrides: list[str] | None = None,
) -> tuple[TrainConfig, CorpusSpec]:
    """Build the full configuration from defaults, an optional file, and
    optional ``section.key=value`` override strings."""
    train = TrainConfig()
    corpus = CorpusSpec()
    targets = {
        "train": train,
        "encoder": train.encoder,
        "views": train.views,
        "contrast": train.contrast,
        "intra": train.intra,
        "corpus": corpus,
    }

    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in targets:
                raise ConfigError(f"unknown config section '[{section}]'")
            _apply_section(targets[section], section, dict(parser[section]))

    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override must look like section.key=value, got {ov!r}")
        lhs, raw = ov.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"override key must be section.key, got {lhs!r}")
        section, key = lhs.split(".", 1)
        if section not in targets:
            raise ConfigError(f"unknown config section '{section}'")
        _apply_section(targets[section], section, {key.strip(): raw.strip()})

    env_seed = os.environ.get("DCL_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"DCL_SEED must be an integer, got {env_seed!r}") from e
        train.seed = seed
        corpus.seed = seed

    try:
        train.validate()
        corpus.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return train, corpus
