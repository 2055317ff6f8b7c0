from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime, timezone
import hashlib
import json
from typing import Any, Mapping
from urllib.parse import urlsplit, urlunsplit


TASK_LABELS = {
    "junk": ("relevant", "not-relevant"),
    "landslide": ("landslide", "not-landslide"),
}
GEO_SOURCES = ("gps", "text", "place", "user_location", "profile_description", "none")
USER_KINDS = ("person", "organization")
ENTITY_KINDS = ("PERSON", "LOCATION", "ORGANIZATION", "OTHER")
VERDICT_FIELDS = ("duplicate", "junk", "landslide", "geo", "user_type")
TWITTER_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"
DEFAULT_DECISION_THRESHOLD = 0.5


class ScreeError(RuntimeError):
    pass


class TweetParseError(ScreeError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TweetSchemaError(ScreeError):
    def __init__(self, field_name: str, message: str | None = None) -> None:
        super().__init__(message or f"missing or invalid field: {field_name}")
        self.field = field_name


class VerdictAlreadySetError(ScreeError):
    pass


def normalize_url(url: str) -> str:
    """Strip the fragment and lowercase scheme and host; path and query are kept."""
    parts = urlsplit(url.strip())
    return urlunsplit(
        (parts.scheme.lower(), parts.netloc.lower(), parts.path, parts.query, "")
    )


def image_id_for(url: str) -> str:
    return hashlib.sha1(normalize_url(url).encode("utf-8")).hexdigest()


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class Tweet:
    id: str
    text: str
    lang: str = "und"
    created_at: int = 0
    gps: tuple[float, float] | None = None
    place_name: str | None = None
    author_name: str = ""
    author_location: str | None = None
    author_description: str | None = None
    image_urls: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise TweetSchemaError("id")
        if self.gps is not None:
            lat, lon = self.gps
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise TweetSchemaError(
                    "coordinates", f"coordinates out of range: {lat}, {lon}"
                )
        urls = tuple(self.image_urls)
        if any(not url for url in urls):
            raise TweetSchemaError("entities.media", "empty image url")
        object.__setattr__(self, "image_urls", urls)


@dataclass(frozen=True)
class ImageRef:
    tweet_id: str
    url: str

    def __post_init__(self) -> None:
        if not self.tweet_id or not self.url:
            raise ValueError("image reference needs both tweet_id and url")

    @property
    def image_id(self) -> str:
        return image_id_for(self.url)


@dataclass(frozen=True)
class Classification:
    task: str
    confidence: float
    positive: bool

    def __post_init__(self) -> None:
        if self.task not in TASK_LABELS:
            raise ValueError(f"unknown classification task: {self.task}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")

    @property
    def label(self) -> str:
        positive_label, negative_label = TASK_LABELS[self.task]
        return positive_label if self.positive else negative_label

    def to_doc(self) -> dict[str, Any]:
        return {"label": self.label, "confidence": self.confidence}

    @classmethod
    def from_doc(cls, task: str, doc: Mapping[str, Any]) -> "Classification":
        positive_label = TASK_LABELS[task][0]
        return cls(
            task=task,
            confidence=float(doc["confidence"]),
            positive=doc["label"] == positive_label,
        )


@dataclass(frozen=True)
class DuplicateVerdict:
    is_duplicate: bool
    ref_id: str | None = None
    distance: float | None = None

    def __post_init__(self) -> None:
        if self.is_duplicate and (self.ref_id is None or self.distance is None):
            raise ValueError("duplicate verdict needs ref_id and distance")
        if self.distance is not None and self.distance < 0:
            raise ValueError(f"negative distance: {self.distance}")

    def to_doc(self) -> dict[str, Any]:
        return {
            "is_duplicate": self.is_duplicate,
            "ref_id": self.ref_id,
            "distance": self.distance,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "DuplicateVerdict":
        distance = doc.get("distance")
        return cls(
            is_duplicate=bool(doc["is_duplicate"]),
            ref_id=doc.get("ref_id"),
            distance=None if distance is None else float(distance),
        )


@dataclass(frozen=True)
class GeoTag:
    country: str | None = None
    state: str | None = None
    county: str | None = None
    city: str | None = None
    source_field: str = "none"

    def __post_init__(self) -> None:
        if self.source_field not in GEO_SOURCES:
            raise ValueError(f"unknown geotag source: {self.source_field}")
        if self.source_field == "none" and any(
            (self.country, self.state, self.county, self.city)
        ):
            raise ValueError("geotag without a source cannot carry location fields")

    def to_doc(self) -> dict[str, Any]:
        return {
            "country": self.country,
            "state": self.state,
            "county": self.county,
            "city": self.city,
            "source": self.source_field,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "GeoTag":
        return cls(
            country=doc.get("country"),
            state=doc.get("state"),
            county=doc.get("county"),
            city=doc.get("city"),
            source_field=doc.get("source", "none"),
        )


@dataclass(frozen=True)
class UserType:
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in USER_KINDS:
            raise ValueError(f"unknown user type: {self.kind}")


@dataclass(frozen=True)
class NamedEntity:
    text: str
    kind: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.kind not in ENTITY_KINDS:
            raise ValueError(f"unknown entity kind: {self.kind}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid entity span: ({self.start}, {self.end})")

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end


@dataclass(frozen=True)
class ImageRecord:
    tweet_id: str
    url: str
    local_path: str = ""
    bytes_len: int = 0
    duplicate: DuplicateVerdict | None = None
    junk: Classification | None = None
    landslide: Classification | None = None
    geo: GeoTag | None = None
    user_type: UserType | None = None

    @property
    def image_id(self) -> str:
        return image_id_for(self.url)

    def with_verdicts(self, **verdicts: Any) -> "ImageRecord":
        for name, value in verdicts.items():
            if name not in VERDICT_FIELDS:
                raise ValueError(f"unknown verdict field: {name}")
            if value is not None and getattr(self, name) is not None:
                raise VerdictAlreadySetError(
                    f"verdict '{name}' already set for image {self.image_id}"
                )
        return replace(self, **verdicts)

    def to_doc(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "tweet_id": self.tweet_id,
            "url": self.url,
            "local_path": self.local_path,
            "bytes_len": self.bytes_len,
            "duplicate": self.duplicate.to_doc() if self.duplicate else None,
            "junk": self.junk.to_doc() if self.junk else None,
            "landslide": self.landslide.to_doc() if self.landslide else None,
            "geo": self.geo.to_doc() if self.geo else None,
            "user_type": self.user_type.kind if self.user_type else None,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "ImageRecord":
        return cls(
            tweet_id=doc["tweet_id"],
            url=doc["url"],
            local_path=doc.get("local_path", ""),
            bytes_len=int(doc.get("bytes_len", 0)),
            duplicate=DuplicateVerdict.from_doc(doc["duplicate"]) if doc.get("duplicate") else None,
            junk=Classification.from_doc("junk", doc["junk"]) if doc.get("junk") else None,
            landslide=(
                Classification.from_doc("landslide", doc["landslide"])
                if doc.get("landslide")
                else None
            ),
            geo=GeoTag.from_doc(doc["geo"]) if doc.get("geo") else None,
            user_type=UserType(doc["user_type"]) if doc.get("user_type") else None,
        )


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def parse_tweet(raw: str | bytes) -> Tweet:
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TweetParseError("invalid UTF-8", exc.start) from exc
    else:
        text = raw

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise TweetParseError(exc.msg, offset) from exc

    if not isinstance(doc, dict):
        raise TweetSchemaError("document", "post document must be a JSON object")
    return tweet_from_doc(doc)


def tweet_from_doc(doc: Mapping[str, Any]) -> Tweet:
    raw_id = doc.get("id_str", doc.get("id"))
    if isinstance(raw_id, bool) or not isinstance(raw_id, (str, int)) or raw_id == "":
        raise TweetSchemaError("id")
    text = doc.get("text", doc.get("full_text"))
    if not isinstance(text, str):
        raise TweetSchemaError("text")

    lang = doc.get("lang")
    place = doc.get("place")
    user = doc.get("user")
    place = place if isinstance(place, dict) else {}
    user = user if isinstance(user, dict) else {}

    return Tweet(
        id=str(raw_id),
        text=text,
        lang=lang if isinstance(lang, str) and lang else "und",
        created_at=_parse_timestamp(doc),
        gps=_parse_coordinates(doc.get("coordinates")),
        place_name=_optional_str(place.get("full_name") or place.get("name")),
        author_name=_optional_str(user.get("name")) or "",
        author_location=_optional_str(user.get("location")),
        author_description=_optional_str(user.get("description")),
        image_urls=tuple(_media_urls(doc.get("entities"))),
    )


def tweet_to_doc(tweet: Tweet) -> dict[str, Any]:
    """Fixture-schema document; `coordinates` is [latitude, longitude]."""
    doc: dict[str, Any] = {
        "id": tweet.id,
        "text": tweet.text,
        "lang": tweet.lang,
        "timestamp_ms": tweet.created_at,
    }
    if tweet.gps is not None:
        doc["coordinates"] = [tweet.gps[0], tweet.gps[1]]
    if tweet.place_name is not None:
        doc["place"] = {"full_name": tweet.place_name}
    user: dict[str, Any] = {"name": tweet.author_name}
    if tweet.author_location is not None:
        user["location"] = tweet.author_location
    if tweet.author_description is not None:
        user["description"] = tweet.author_description
    doc["user"] = user
    doc["entities"] = {"media": [{"media_url": url} for url in tweet.image_urls]}
    return doc


def serialize_tweet(tweet: Tweet) -> str:
    return json.dumps(tweet_to_doc(tweet), ensure_ascii=False, sort_keys=True)


def extract_image_refs(tweet: Tweet) -> list[ImageRef]:
    return [ImageRef(tweet_id=tweet.id, url=url) for url in tweet.image_urls]


def _optional_str(value: Any) -> str | None:
    if isinstance(value, str) and value.strip():
        return value
    return None


def _parse_timestamp(doc: Mapping[str, Any]) -> int:
    timestamp_ms = doc.get("timestamp_ms")
    if timestamp_ms is not None:
        try:
            return int(timestamp_ms)
        except (TypeError, ValueError):
            raise TweetSchemaError("timestamp_ms") from None

    created_at = doc.get("created_at")
    if created_at is None:
        return 0
    if isinstance(created_at, (int, float)) and not isinstance(created_at, bool):
        return int(created_at)
    if not isinstance(created_at, str):
        raise TweetSchemaError("created_at")

    try:
        moment = datetime.strptime(created_at, TWITTER_TIME_FORMAT)
    except ValueError:
        try:
            moment = datetime.fromisoformat(created_at.replace("Z", "+00:00"))
        except ValueError:
            raise TweetSchemaError("created_at") from None
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return int(moment.timestamp() * 1000)


def _parse_coordinates(value: Any) -> tuple[float, float] | None:
    if value is None:
        return None
    # GeoJSON point objects carry [longitude, latitude]; the bare fixture
    # list carries [latitude, longitude].
    if isinstance(value, dict):
        if value.get("type") != "Point":
            raise TweetSchemaError("coordinates")
        pair = value.get("coordinates")
        if not _is_number_pair(pair):
            raise TweetSchemaError("coordinates")
        return float(pair[1]), float(pair[0])
    if _is_number_pair(value):
        return float(value[0]), float(value[1])
    raise TweetSchemaError("coordinates")


def _is_number_pair(value: Any) -> bool:
    return (
        isinstance(value, (list, tuple))
        and len(value) == 2
        and all(
            isinstance(item, (int, float)) and not isinstance(item, bool)
            for item in value
        )
    )


def _media_urls(entities: Any) -> list[str]:
    if not isinstance(entities, dict):
        return []
    media = entities.get("media")
    if not isinstance(media, list):
        return []
    urls: list[str] = []
    for item in media:
        if not isinstance(item, dict):
            continue
        url = item.get("media_url_https") or item.get("media_url")
        if isinstance(url, str) and url.strip():
            urls.append(url.strip())
    return urls
