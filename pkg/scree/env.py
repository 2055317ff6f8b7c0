from __future__ import annotations

from dataclasses import dataclass, field
import importlib.util
import logging
import os
from pathlib import Path
import platform
import sys
from typing import Iterable

from scree.media import get_image_cache_dir

KNOWN_PACKAGES = (
    "numpy",
    "requests",
    "geopy",
    "scipy",
    "tqdm",
    "tweepy",
)
BENCH_TIMEOUT_VAR = "SCREE_BENCH_TIMEOUT"
LOG_LEVEL_VAR = "SCREE_LOG_LEVEL"
DEFAULT_BENCH_TIMEOUT = 60.0
DEFAULT_LOG_LEVEL = "WARNING"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvironmentInfo:
    python_version: str
    state_dir: Path
    image_cache_dir: Path
    bench_timeout: float
    log_level: str
    is_tty: bool
    packages: set[str] = field(default_factory=set)


def get_state_dir() -> Path:
    xdg_state_home = os.environ.get("XDG_STATE_HOME")
    if xdg_state_home:
        state_dir = Path(xdg_state_home).expanduser()
    else:
        state_dir = Path("~/.local/state").expanduser()
    return state_dir / "scree"


def bench_timeout_from_env() -> float:
    raw = os.environ.get(BENCH_TIMEOUT_VAR, "").strip()
    if not raw:
        return DEFAULT_BENCH_TIMEOUT
    try:
        value = float(raw)
    except ValueError:
        value = -1.0
    if value <= 0:
        logger.warning("ignoring %s=%r; using %ss", BENCH_TIMEOUT_VAR, raw, DEFAULT_BENCH_TIMEOUT)
        return DEFAULT_BENCH_TIMEOUT
    return value


def log_level_from_env() -> str:
    raw = os.environ.get(LOG_LEVEL_VAR, "").strip().upper()
    return raw if raw in LOG_LEVELS else DEFAULT_LOG_LEVEL


def detect_environment(extra_packages: Iterable[str] = ()) -> EnvironmentInfo:
    package_names: set[str] = set(KNOWN_PACKAGES)
    package_names.update(extra_packages)

    available_packages = {
        name for name in package_names if importlib.util.find_spec(name) is not None
    }

    return EnvironmentInfo(
        python_version=platform.python_version(),
        state_dir=get_state_dir(),
        image_cache_dir=get_image_cache_dir(),
        bench_timeout=bench_timeout_from_env(),
        log_level=log_level_from_env(),
        is_tty=sys.stderr.isatty(),
        packages=available_packages,
    )


def has_package(env: EnvironmentInfo, name: str) -> bool:
    return name in env.packages
