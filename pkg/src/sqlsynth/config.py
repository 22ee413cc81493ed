"""Run configuration: loading, defaults, flag overrides and validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .metrics import SMOOTHING_METHODS

STRATEGIES = ("reformer", "paraphrase", "craft", "perturb", "evaluate")
PARAPHRASE_LAMBDAS = (0.9, 0.93, 0.95)
PROVIDER_KINDS = ("stub", "openai")
NORMALIZERS = ("size_sum", "max_size")


class ConfigError(ValueError):
    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.field = name


@dataclass
class Paths:
    train: Path | None = None
    tables: Path | None = None
    db_root: Path | None = None
    queries: Path | None = None
    split: Path | None = None
    templates: Path | None = None
    dataset: Path | None = None
    gold: Path | None = None
    cache: Path | None = None
    output: Path = Path("out")


@dataclass
class Thresholds:
    ted: float = 0.1
    lambda_: float = 0.85
    paraphrase_lambda: float = 0.9
    keep: float = 0.5
    fraction: float = 0.7
    top_k: int = 5
    max_templates: int = 10


@dataclass
class Options:
    paraphrase_n: int = 5
    fill_samples: int = 1
    timeout: float = 5.0
    workers: int = 4
    drop_empty: bool = False
    validate_crafted: bool = False
    per_category: bool = False
    smoothing: str = "add_one_zero"
    normalizer: str = "size_sum"


@dataclass
class ProviderSettings:
    kind: str = "stub"
    base_url: str = "https://api.openai.com/v1"
    chat_model: str = "gpt-3.5-turbo"
    embed_model: str = "text-embedding-ada-002"
    dimension: int = 1536
    api_key_env: str = "OPENAI_API_KEY"
    max_retries: int = 4
    backoff: float = 1.0
    max_in_flight: int = 4
    requests_per_second: float | None = None
    timeout: float = 60.0


@dataclass
class RunConfig:
    strategy: str = "reformer"
    seed: int | None = None
    paths: Paths = field(default_factory=Paths)
    thresholds: Thresholds = field(default_factory=Thresholds)
    options: Options = field(default_factory=Options)
    provider: ProviderSettings = field(default_factory=ProviderSettings)

    def validate(self) -> RunConfig:
        t, o, p = self.thresholds, self.options, self.provider
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"must be one of {', '.join(STRATEGIES)}, got {self.strategy!r}")
        if not 0 < t.ted <= 1:
            raise ConfigError("ted", f"must be in (0, 1], got {t.ted}")
        if not 0 < t.lambda_ <= 1:
            raise ConfigError("lambda", f"must be in (0, 1], got {t.lambda_}")
        if t.paraphrase_lambda not in PARAPHRASE_LAMBDAS:
            raise ConfigError(
                "paraphrase_lambda", f"must be one of {PARAPHRASE_LAMBDAS}, got {t.paraphrase_lambda}"
            )
        if not 0 <= t.keep <= 1:
            raise ConfigError("keep", f"must be in [0, 1], got {t.keep}")
        if not 0 <= t.fraction <= 1:
            raise ConfigError("fraction", f"must be in [0, 1], got {t.fraction}")
        for name in ("top_k", "max_templates"):
            if getattr(t, name) < 1:
                raise ConfigError(name, f"must be at least 1, got {getattr(t, name)}")
        for name in ("paraphrase_n", "fill_samples"):
            if getattr(o, name) < 0:
                raise ConfigError(name, f"must be non-negative, got {getattr(o, name)}")
        if o.workers < 1:
            raise ConfigError("workers", f"must be at least 1, got {o.workers}")
        if o.timeout <= 0:
            raise ConfigError("timeout", f"must be positive, got {o.timeout}")
        if o.smoothing not in SMOOTHING_METHODS:
            raise ConfigError("smoothing", f"must be one of {', '.join(SMOOTHING_METHODS)}")
        if o.normalizer not in NORMALIZERS:
            raise ConfigError("normalizer", f"must be one of {', '.join(NORMALIZERS)}")
        if p.kind not in PROVIDER_KINDS:
            raise ConfigError("provider.kind", f"must be one of {', '.join(PROVIDER_KINDS)}, got {p.kind!r}")
        if self.seed is None and (self.strategy == "perturb" or p.kind == "stub"):
            raise ConfigError("seed", "is required for perturb runs and stub-provider runs")
        if self.seed is not None and (isinstance(self.seed, bool) or not isinstance(self.seed, int)):
            raise ConfigError("seed", f"must be an integer, got {self.seed!r}")
        return self

    def to_dict(self) -> dict:
        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {_external(f.name): plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, Path):
                return str(obj)
            return obj

        return plain(self)

    @property
    def run_id(self) -> str:
        """Stable id from everything that affects results; output and cache locations excluded."""
        data = self.to_dict()
        data["paths"] = {k: v for k, v in data["paths"].items() if k not in ("output", "cache")}
        for key, value in data["paths"].items():
            data["paths"][key] = Path(value).name if value else value
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


_SECTIONS = {"paths": Paths, "thresholds": Thresholds, "options": Options, "provider": ProviderSettings}
_FORBIDDEN = {"api_key", "key", "token", "secret"}


def _external(name: str) -> str:
    return "lambda" if name == "lambda_" else name


def _internal(name: str) -> str:
    return "lambda_" if name == "lambda" else name


def _coerce(section: str, name: str, kind, value):
    if value is None:
        return None
    label = name if section in ("thresholds", "options") else f"{section}.{name}"
    try:
        # field annotations arrive as strings under postponed evaluation
        kind = kind.replace(" | None", "")
        if kind == "Path":
            return Path(value)
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise TypeError
            return bool(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(_external(label), f"cannot interpret {value!r}") from None


def _apply(config: RunConfig, raw: Mapping[str, Any]) -> None:
    for key, value in raw.items():
        if key == "strategy":
            config.strategy = str(value)
        elif key == "seed":
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                try:
                    value = int(value)
                except (TypeError, ValueError):
                    raise ConfigError("seed", f"must be an integer, got {value!r}") from None
            config.seed = value
        elif key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(key, "must be a mapping")
            section = getattr(config, key)
            types = {f.name: f.type for f in dataclasses.fields(section)}
            for name, item in value.items():
                if key == "provider" and name.lower() in _FORBIDDEN:
                    raise ConfigError(
                        f"provider.{name}", "secrets are not accepted in config; set the variable named by api_key_env"
                    )
                attr = _internal(name)
                if attr not in types:
                    raise ConfigError(f"{key}.{name}", "unknown setting")
                setattr(section, attr, _coerce(key, name, types[attr], item))
        else:
            raise ConfigError(key, "unknown setting")


def _resolve_paths(config: RunConfig, base: Path) -> None:
    for f in dataclasses.fields(config.paths):
        value = getattr(config.paths, f.name)
        if value is not None and not value.is_absolute():
            setattr(config.paths, f.name, base / value)


def load_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Build a validated config from an optional YAML/JSON file plus dotted overrides.

    Relative paths in the file are taken relative to the file's directory;
    override paths relative to the working directory.
    """
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config", f"no such file: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc}") from None
        if not isinstance(raw, Mapping):
            raise ConfigError("config", "top level must be a mapping")
        _apply(config, raw)
        _resolve_paths(config, path.parent)
    nested: dict[str, Any] = {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        head, _, tail = dotted.partition(".")
        if tail:
            nested.setdefault(head, {})[tail] = value
        else:
            nested[head] = value
    _apply(config, nested)
    return config.validate()
