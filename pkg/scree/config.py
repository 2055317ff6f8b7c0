from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
import json
import logging
from pathlib import Path
from typing import Any, Mapping

from scree.broker import DEFAULT_QUEUE_CAPACITY
from scree.dedup import DEFAULT_DIMENSION, DEFAULT_THRESHOLD
from scree.env import get_state_dir
from scree.media import DEFAULT_FETCH_BACKOFF, DEFAULT_FETCH_RETRIES, get_image_cache_dir
from scree.models import DEFAULT_DECISION_THRESHOLD, ScreeError

CLASSIFIER_BACKENDS = ("stub", "lookup")
EXTRACTOR_BACKENDS = ("stub", "precomputed")
FETCHER_BACKENDS = ("offline", "http")
GEOCODER_BACKENDS = ("gazetteer", "nominatim")
DEFAULT_CACHE_CAPACITY = 10_000

logger = logging.getLogger(__name__)


class ConfigError(ScreeError):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


@dataclass(frozen=True)
class ClassifierSettings:
    backend: str = "stub"
    scores_path: Path | None = None
    threshold: float = DEFAULT_DECISION_THRESHOLD
    seed: int = 0
    bias: float = 0.0
    synthetic_cost: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    keywords_path: Path
    corpus_path: Path | None = None
    replay_rate: float = 0.0
    store_dir: Path = field(default_factory=lambda: get_state_dir() / "store")
    image_dir: Path = field(default_factory=get_image_cache_dir)
    fetcher: str = "offline"
    fixture_image_dir: Path | None = None
    fetch_retries: int = DEFAULT_FETCH_RETRIES
    fetch_backoff: float = DEFAULT_FETCH_BACKOFF
    url_map_capacity: int | None = None
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    queue_capacities: Mapping[str, int] = field(default_factory=dict)
    duplicate_threshold: float = DEFAULT_THRESHOLD
    feature_dim: int = DEFAULT_DIMENSION
    extractor: str = "stub"
    features_path: Path | None = None
    junk: ClassifierSettings = field(default_factory=ClassifierSettings)
    landslide: ClassifierSettings = field(default_factory=ClassifierSettings)
    gazetteer_path: Path | None = None
    ner_dir: Path | None = None
    geocoder: str = "gazetteer"
    geocoder_user_agent: str = "scree"
    geocoder_min_delay: float = 1.0
    geo_cache_capacity: int = DEFAULT_CACHE_CAPACITY
    ner_cache_capacity: int = DEFAULT_CACHE_CAPACITY
    tweet_cache_capacity: int = DEFAULT_CACHE_CAPACITY
    collector_workers: int = 1
    duplicate_workers: int = 1
    junk_workers: int = 1
    landslide_workers: int = 1
    fsync: bool = False

    def __post_init__(self) -> None:
        if self.duplicate_threshold < 0:
            raise ConfigError("duplicate_threshold", "must be >= 0")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim", "must be >= 1")
        if self.replay_rate < 0:
            raise ConfigError("replay_rate", "must be >= 0")
        if self.fetch_retries < 0:
            raise ConfigError("fetch_retries", "must be >= 0")
        for name in ("collector_workers", "junk_workers", "landslide_workers", "duplicate_workers"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.duplicate_workers != 1:
            raise ConfigError("duplicate_workers", "the feature index takes exactly one writer")
        for name in ("queue_capacity", "geo_cache_capacity", "ner_cache_capacity", "tweet_cache_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.url_map_capacity is not None and self.url_map_capacity < 1:
            raise ConfigError("url_map_capacity", "must be >= 1 when set")
        for queue_name, capacity in self.queue_capacities.items():
            if capacity < 1:
                raise ConfigError("queue_capacities", f"capacity of '{queue_name}' must be >= 1")
        _check_choice("fetcher", self.fetcher, FETCHER_BACKENDS)
        _check_choice("extractor", self.extractor, EXTRACTOR_BACKENDS)
        _check_choice("geocoder", self.geocoder, GEOCODER_BACKENDS)
        if self.fetcher == "offline" and self.fixture_image_dir is None:
            raise ConfigError("fixture_image_dir", "required by the offline fetcher")
        if self.extractor == "precomputed" and self.features_path is None:
            raise ConfigError("features_path", "required by the precomputed extractor")
        for task in ("junk", "landslide"):
            settings: ClassifierSettings = getattr(self, task)
            _check_choice(f"{task}.backend", settings.backend, CLASSIFIER_BACKENDS)
            if settings.backend == "lookup" and settings.scores_path is None:
                raise ConfigError(f"{task}.scores_path", "required by the lookup backend")
            if not 0.0 <= settings.threshold <= 1.0:
                raise ConfigError(f"{task}.threshold", "must be within [0, 1]")

    def with_overrides(
        self, corpus_path: Path | None = None, store_dir: Path | None = None
    ) -> "PipelineConfig":
        changes: dict[str, Any] = {}
        if corpus_path is not None:
            changes["corpus_path"] = corpus_path
        if store_dir is not None:
            changes["store_dir"] = store_dir
        return replace(self, **changes) if changes else self


def _check_choice(name: str, value: str, choices: tuple[str, ...]) -> None:
    if value not in choices:
        raise ConfigError(name, f"unknown value {value!r} (expected one of {', '.join(choices)})")


PATH_FIELDS = {
    "keywords_path",
    "corpus_path",
    "store_dir",
    "image_dir",
    "fixture_image_dir",
    "features_path",
    "gazetteer_path",
    "ner_dir",
}


def _resolve(base: Path, value: Any, name: str) -> Path | None:
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(name, "must be a non-empty path string")
    path = Path(value).expanduser()
    return path if path.is_absolute() else base / path


def _classifier_settings(base: Path, task: str, payload: Any) -> ClassifierSettings:
    if payload is None:
        return ClassifierSettings()
    if not isinstance(payload, dict):
        raise ConfigError(task, "must be an object")
    known = {item.name for item in fields(ClassifierSettings)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(task, f"unknown keys: {', '.join(sorted(unknown))}")
    values = dict(payload)
    if "scores_path" in values:
        values["scores_path"] = _resolve(base, values["scores_path"], f"{task}.scores_path")
    try:
        return ClassifierSettings(**values)
    except TypeError as exc:
        raise ConfigError(task, str(exc)) from exc


def config_from_dict(payload: Mapping[str, Any], base_dir: Path) -> PipelineConfig:
    known = {item.name for item in fields(PipelineConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config key")
    if "keywords_path" not in payload:
        raise ConfigError("keywords_path", "required")

    values: dict[str, Any] = {}
    for name, value in payload.items():
        if name in PATH_FIELDS:
            values[name] = _resolve(base_dir, value, name)
        elif name in ("junk", "landslide"):
            values[name] = _classifier_settings(base_dir, name, value)
        elif name == "queue_capacities":
            if not isinstance(value, dict):
                raise ConfigError(name, "must be an object of queue name to capacity")
            values[name] = {str(key): int(capacity) for key, capacity in value.items()}
        else:
            values[name] = value
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc


def load_config(path: Path) -> PipelineConfig:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config", f"{path} must hold a JSON object")
    config = config_from_dict(payload, path.resolve().parent)
    logger.info("loaded pipeline config from %s", path)
    return config


def config_to_dict(config: PipelineConfig) -> dict[str, Any]:
    payload: dict[str, Any] = {}
    for item in fields(PipelineConfig):
        value = getattr(config, item.name)
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, ClassifierSettings):
            value = {
                sub.name: (str(v) if isinstance(v, Path) else v)
                for sub in fields(ClassifierSettings)
                for v in [getattr(value, sub.name)]
            }
        elif isinstance(value, Mapping):
            value = dict(value)
        payload[item.name] = value
    return payload
