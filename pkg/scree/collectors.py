from __future__ import annotations

from collections import OrderedDict
import csv
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
import queue as stdqueue
import threading
import time
from typing import Any, Iterable, Iterator, Protocol
import unicodedata

from scree.broker import MessageQueue, QueueClosedError
from scree.media import (
    DEFAULT_FETCH_BACKOFF,
    DEFAULT_FETCH_RETRIES,
    FetchError,
    ImageFetcher,
    fetch_with_retry,
    write_image,
)
from scree.models import (
    ImageRecord,
    ImageRef,
    TweetParseError,
    TweetSchemaError,
    extract_image_refs,
    normalize_url,
    parse_tweet,
    tweet_to_doc,
)
from scree.storage import DocStore

POLL_INTERVAL = 0.05

logger = logging.getLogger(__name__)


def normalize_text(text: str) -> str:
    return unicodedata.normalize("NFC", text).casefold()


@dataclass(frozen=True)
class KeywordList:
    entries: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("keyword list is empty")
        normalized = []
        for keyword, language in self.entries:
            folded = normalize_text(keyword).strip()
            if not folded:
                raise ValueError("keyword list contains an empty keyword")
            normalized.append((folded, language.strip().lower() or "und"))
        object.__setattr__(self, "entries", tuple(normalized))

    @classmethod
    def of(cls, keywords: Iterable[str], language: str = "und") -> "KeywordList":
        return cls(tuple((keyword, language) for keyword in keywords))

    @property
    def keywords(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(keyword for keyword, _ in self.entries))

    @property
    def languages(self) -> tuple[str, ...]:
        return tuple(sorted({language for _, language in self.entries}))

    def __len__(self) -> int:
        return len(self.entries)


def load_keywords(path: Path) -> KeywordList:
    """Read a `keyword,language` CSV; a header row is optional."""
    entries: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.reader(handle):
            if not row or not row[0].strip() or row[0].startswith("#"):
                continue
            if row[0].strip().lower() == "keyword" and len(entries) == 0:
                continue
            language = row[1] if len(row) > 1 else "und"
            entries.append((row[0], language))
    keywords = KeywordList(tuple(entries))
    logger.info(
        "loaded %d keywords in %d languages from %s",
        len(keywords),
        len(keywords.languages),
        path,
    )
    return keywords


def matches_keywords(text: str, keywords: KeywordList) -> bool:
    folded = normalize_text(text)
    return any(keyword in folded for keyword in keywords.keywords)


@dataclass(frozen=True)
class UrlCheck:
    first_seen: bool
    seq: int


class UrlDedupMap:
    def __init__(self, capacity: int | None = None) -> None:
        if capacity is not None and capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._seen: OrderedDict[str, int] = OrderedDict()
        self._next_seq = 0
        self._lock = threading.Lock()

    def check_and_record(self, url: str) -> UrlCheck:
        if not url:
            raise ValueError("url must be non-empty")
        key = normalize_url(url)
        with self._lock:
            seq = self._seen.get(key)
            if seq is not None:
                return UrlCheck(first_seen=False, seq=seq)
            if self.capacity is not None and len(self._seen) >= self.capacity:
                self._seen.popitem(last=False)
            seq = self._next_seq
            self._next_seq += 1
            self._seen[key] = seq
            return UrlCheck(first_seen=True, seq=seq)

    def __len__(self) -> int:
        with self._lock:
            return len(self._seen)

    def __contains__(self, url: object) -> bool:
        if not isinstance(url, str):
            return False
        with self._lock:
            return normalize_url(url) in self._seen


def check_and_record_url(seen: UrlDedupMap, url: str) -> UrlCheck:
    return seen.check_and_record(url)


class StreamSource(Protocol):
    def __iter__(self) -> Iterator[str]: ...


class ReplaySource:
    def __init__(self, path: Path, rate: float = 0.0) -> None:
        self.path = path
        self.rate = rate

    def __iter__(self) -> Iterator[str]:
        interval = 1.0 / self.rate if self.rate > 0 else 0.0
        start = time.monotonic()
        with open(self.path, encoding="utf-8") as handle:
            for index, line in enumerate(handle):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                if interval:
                    scheduled = start + index * interval
                    now = time.monotonic()
                    if now < scheduled:
                        time.sleep(scheduled - now)
                yield line


class ListSource:
    def __init__(self, lines: Iterable[str]) -> None:
        self.lines = list(lines)

    def __iter__(self) -> Iterator[str]:
        return iter(self.lines)


class LiveStreamSource:
    def __init__(self, bearer_token: str, keywords: KeywordList, buffer_size: int = 10_000) -> None:
        import tweepy

        self._buffer: stdqueue.Queue[str] = stdqueue.Queue(maxsize=buffer_size)
        source = self

        class _Client(tweepy.StreamingClient):
            def on_data(self, raw_data: bytes) -> None:
                line = _v2_to_fixture_line(raw_data)
                if line is not None:
                    source._buffer.put(line)

            def on_connection_error(self) -> None:
                logger.warning("live stream connection error; disconnecting")
                self.disconnect()

        self._client = _Client(bearer_token)
        rule = " OR ".join(f'"{keyword}"' for keyword in keywords.keywords)
        self._client.add_rules(tweepy.StreamRule(rule[:512]))
        self._thread: Any = None

    def __iter__(self) -> Iterator[str]:
        self._thread = self._client.filter(
            threaded=True,
            tweet_fields=["created_at", "lang", "entities", "geo"],
            expansions=["author_id", "attachments.media_keys", "geo.place_id"],
            media_fields=["url"],
            user_fields=["name", "location", "description"],
            place_fields=["full_name"],
        )
        while self._thread.is_alive() or not self._buffer.empty():
            try:
                yield self._buffer.get(timeout=1.0)
            except stdqueue.Empty:
                continue

    def close(self) -> None:
        self._client.disconnect()


def _v2_to_fixture_line(raw_data: bytes) -> str | None:
    try:
        payload = json.loads(raw_data)
    except json.JSONDecodeError:
        return None
    data = payload.get("data")
    if not isinstance(data, dict):
        return None
    includes = payload.get("includes") or {}
    users = includes.get("users") or [{}]
    places = includes.get("places") or []
    media = includes.get("media") or []
    user = users[0]
    doc: dict[str, Any] = {
        "id": data.get("id"),
        "text": data.get("text", ""),
        "lang": data.get("lang", "und"),
        "created_at": data.get("created_at"),
        "user": {
            "name": user.get("name", ""),
            "location": user.get("location"),
            "description": user.get("description"),
        },
        "entities": {
            "media": [{"media_url": item["url"]} for item in media if item.get("url")]
        },
    }
    if places:
        doc["place"] = {"full_name": places[0].get("full_name")}
    point = (data.get("geo") or {}).get("coordinates")
    if isinstance(point, dict) and point.get("type") == "Point":
        doc["coordinates"] = point
    return json.dumps(doc)


@dataclass
class CollectorSummary:
    seen: int = 0
    matched: int = 0
    refs_pushed: int = 0
    errors: int = 0

    def to_dict(self) -> dict[str, int]:
        return {
            "seen": self.seen,
            "matched": self.matched,
            "refs_pushed": self.refs_pushed,
            "errors": self.errors,
        }


def run_tweet_collector(
    source: StreamSource,
    keywords: KeywordList,
    tweet_store: DocStore,
    out_refs: MessageQueue[ImageRef],
) -> CollectorSummary:
    summary = CollectorSummary()
    for raw in source:
        summary.seen += 1
        try:
            tweet = parse_tweet(raw)
        except (TweetParseError, TweetSchemaError) as exc:
            summary.errors += 1
            logger.warning("skipping post #%d: %s", summary.seen, exc)
            continue
        if not matches_keywords(tweet.text, keywords):
            continue
        summary.matched += 1
        tweet_store.put_doc(tweet.id, tweet_to_doc(tweet))
        for ref in extract_image_refs(tweet):
            out_refs.push(ref)
            summary.refs_pushed += 1
    logger.info("tweet collector done: %s", summary.to_dict())
    return summary


@dataclass
class ImageCollectorSummary:
    received: int = 0
    fetched: int = 0
    skipped: int = 0
    fetch_failures: int = 0
    write_failures: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, counter: str, amount: int = 1) -> None:
        with self._lock:
            setattr(self, counter, getattr(self, counter) + amount)

    def to_dict(self) -> dict[str, int]:
        return {
            "received": self.received,
            "fetched": self.fetched,
            "skipped": self.skipped,
            "fetch_failures": self.fetch_failures,
            "write_failures": self.write_failures,
        }


def run_image_collector(
    in_refs: MessageQueue[ImageRef],
    fetcher: ImageFetcher,
    store_dir: Path,
    out_images: MessageQueue[ImageRecord],
    seen: UrlDedupMap | None = None,
    workers: int = 1,
    retries: int = DEFAULT_FETCH_RETRIES,
    backoff: float = DEFAULT_FETCH_BACKOFF,
) -> ImageCollectorSummary:
    seen = seen if seen is not None else UrlDedupMap()
    summary = ImageCollectorSummary()

    def handle(ref: ImageRef) -> None:
        summary.add("received")
        if not check_and_record_url(seen, ref.url).first_seen:
            summary.add("skipped")
            return
        try:
            data = fetch_with_retry(fetcher, ref.url, retries=retries, backoff=backoff)
        except FetchError as exc:
            summary.add("fetch_failures")
            logger.warning("giving up on image: %s", exc)
            return
        try:
            path = write_image(store_dir, ref.url, data)
        except OSError as exc:
            summary.add("write_failures")
            logger.error("could not save %s: %s", ref.url, exc)
            return
        summary.add("fetched")
        out_images.push(
            ImageRecord(
                tweet_id=ref.tweet_id,
                url=ref.url,
                local_path=str(path),
                bytes_len=len(data),
            )
        )

    def work() -> None:
        while True:
            try:
                ref = in_refs.pop(timeout=POLL_INTERVAL)
            except QueueClosedError:
                return
            if ref is not None:
                handle(ref)

    if workers <= 1:
        work()
    else:
        threads = [
            threading.Thread(target=work, name=f"scree-image-collector-{index}", daemon=True)
            for index in range(workers)
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
    logger.info("image collector done: %s", summary.to_dict())
    return summary
