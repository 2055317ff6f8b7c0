from __future__ import annotations

import logging
import os
from pathlib import Path
import posixpath
import threading
import time
from typing import Callable, Mapping, Protocol
from urllib.parse import urlsplit

import requests

from scree.models import ScreeError, image_id_for

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp"}
DEFAULT_FETCH_RETRIES = 2
DEFAULT_FETCH_BACKOFF = 0.1
HTTP_TIMEOUT = 10.0

logger = logging.getLogger(__name__)


class FetchError(ScreeError):
    def __init__(self, url: str, status: int | None = None, reason: str = "") -> None:
        detail = f"HTTP {status}" if status is not None else reason or "fetch failed"
        super().__init__(f"{detail}: {url}")
        self.url = url
        self.status = status


class ImageFetcher(Protocol):
    id: str
    honors_backoff: bool

    def fetch(self, url: str) -> bytes: ...


def get_image_cache_dir() -> Path:
    xdg_cache_home = os.environ.get("XDG_CACHE_HOME")
    if xdg_cache_home:
        base_dir = Path(xdg_cache_home).expanduser()
    else:
        base_dir = Path("~/.cache").expanduser()
    return base_dir / "scree" / "images"


def url_extension(url: str) -> str:
    suffix = posixpath.splitext(urlsplit(url).path)[1].lower()
    return suffix if suffix in IMAGE_EXTENSIONS else ""


def image_filename(url: str) -> str:
    """Content-addressed name: digest of the normalized URL plus its image extension."""
    return f"{image_id_for(url)}{url_extension(url)}"


class OfflineFetcher:
    id = "offline"
    honors_backoff = False

    def __init__(self, directory: Path) -> None:
        self.directory = directory

    def fetch(self, url: str) -> bytes:
        path = self.directory / image_filename(url)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise FetchError(url, status=404) from None
        except OSError as exc:
            raise FetchError(url, reason=str(exc)) from exc


class MemoryFetcher:
    id = "memory"
    honors_backoff = False

    def __init__(self, images: Mapping[str, bytes]) -> None:
        self.images = dict(images)
        self.calls: list[str] = []

    def fetch(self, url: str) -> bytes:
        self.calls.append(url)
        data = self.images.get(url)
        if data is None:
            raise FetchError(url, status=404)
        return data


class HttpFetcher:
    id = "http"
    honors_backoff = True

    def __init__(self, timeout: float = HTTP_TIMEOUT, user_agent: str = "scree") -> None:
        self.timeout = timeout
        self.session = requests.Session()
        self.session.headers["User-Agent"] = user_agent

    def fetch(self, url: str) -> bytes:
        try:
            response = self.session.get(url, timeout=self.timeout)
        except requests.RequestException as exc:
            raise FetchError(url, reason=str(exc)) from exc
        if response.status_code != 200:
            raise FetchError(url, status=response.status_code)
        return response.content


def fetch_with_retry(
    fetcher: ImageFetcher,
    url: str,
    retries: int = DEFAULT_FETCH_RETRIES,
    backoff: float = DEFAULT_FETCH_BACKOFF,
    sleep: Callable[[float], None] = time.sleep,
) -> bytes:
    """Try `retries + 1` times, doubling the wait after each failure."""
    attempts = max(0, retries) + 1
    delay = backoff
    for attempt in range(1, attempts + 1):
        try:
            return fetcher.fetch(url)
        except FetchError as exc:
            if attempt == attempts:
                raise
            logger.debug("fetch attempt %d/%d failed: %s", attempt, attempts, exc)
            if fetcher.honors_backoff and delay > 0:
                sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


def write_image(directory: Path, url: str, data: bytes) -> Path:
    """Write bytes under their content-addressed name; rewrites are idempotent."""
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / image_filename(url)
    tmp_path = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    try:
        tmp_path.write_bytes(data)
        os.replace(tmp_path, path)
    except OSError:
        tmp_path.unlink(missing_ok=True)
        raise
    return path
