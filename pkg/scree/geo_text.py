from __future__ import annotations

import csv
from dataclasses import dataclass
import logging
from pathlib import Path
import re
from typing import Any, Callable, Iterable, Mapping, Protocol
import unicodedata

from geopy.exc import GeopyError
from geopy.extra.rate_limiter import RateLimiter
from geopy.geocoders import Nominatim
import numpy as np

from scree.cache import Cache, LruCache
from scree.models import ENTITY_KINDS, GeoTag, NamedEntity, ScreeError, Tweet, UserType

KIND_ORDER = ("city", "county", "state", "country")
REVERSE_RADIUS_KM = {"city": 50.0, "county": 100.0, "state": 500.0, "country": 2000.0}
EARTH_RADIUS_KM = 6371.0088
ROUTED_LANGUAGES = ("en", "fr", "es", "pt", "it")
FALLBACK_LANGUAGE = "ml"
TOKEN_PATTERN = re.compile(r"\w+")

logger = logging.getLogger(__name__)


class GeocoderError(ScreeError):
    pass


def normalize_query(query: str) -> str:
    return " ".join(unicodedata.normalize("NFC", query).casefold().split())


def primary_language(lang: str) -> str:
    return re.split(r"[-_]", lang.strip().lower(), maxsplit=1)[0]


@dataclass(frozen=True)
class GeoPlace:
    name: str
    kind: str
    country: str | None
    state: str | None = None
    county: str | None = None
    city: str | None = None
    lat: float | None = None
    lon: float | None = None

    def to_geotag(self, source_field: str) -> GeoTag:
        return GeoTag(
            country=self.country,
            state=self.state,
            county=self.county,
            city=self.city,
            source_field=source_field,
        )


class Gazetteer:
    def __init__(self, places: Iterable[GeoPlace]) -> None:
        self.places: list[GeoPlace] = []
        self._by_name: dict[str, list[GeoPlace]] = {}
        seen: set[tuple[str, str]] = set()
        for place in places:
            if place.kind not in KIND_ORDER:
                raise ValueError(f"unknown gazetteer kind {place.kind!r} for {place.name!r}")
            if place.lat is None or place.lon is None:
                raise ValueError(f"gazetteer row {place.name!r} has no coordinates")
            if not (-90.0 <= place.lat <= 90.0 and -180.0 <= place.lon <= 180.0):
                raise ValueError(f"gazetteer row {place.name!r} has invalid coordinates")
            key = (normalize_query(place.name), place.kind)
            if key in seen:
                raise ValueError(f"gazetteer name {place.name!r} repeated for kind {place.kind}")
            seen.add(key)
            self.places.append(place)
            self._by_name.setdefault(key[0], []).append(place)
        for candidates in self._by_name.values():
            candidates.sort(key=lambda item: KIND_ORDER.index(item.kind))

        self._by_kind: dict[str, tuple[list[GeoPlace], np.ndarray]] = {}
        for kind in KIND_ORDER:
            rows = [place for place in self.places if place.kind == kind]
            coords = np.radians(np.array([[p.lat, p.lon] for p in rows], dtype=np.float64))
            self._by_kind[kind] = (rows, coords.reshape(-1, 2))

    def __len__(self) -> int:
        return len(self.places)

    @property
    def names(self) -> list[str]:
        return [place.name for place in self.places]

    def forward(self, query: str) -> list[GeoPlace]:
        return list(self._by_name.get(normalize_query(query), ()))

    def reverse(self, lat: float, lon: float) -> GeoPlace | None:
        """Nearest row within the kind's radius, trying the most specific kind first."""
        point = np.radians([lat, lon])
        for kind in KIND_ORDER:
            rows, coords = self._by_kind[kind]
            if not rows:
                continue
            distances = haversine_km(point, coords)
            index = int(np.argmin(distances))
            if distances[index] <= REVERSE_RADIUS_KM[kind]:
                return rows[index]
        return None


def haversine_km(point: np.ndarray, coords: np.ndarray) -> np.ndarray:
    lat1, lon1 = point
    lat2 = coords[:, 0]
    lon2 = coords[:, 1]
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def _cell(row: Mapping[str, str | None], key: str) -> str | None:
    value = (row.get(key) or "").strip()
    return value or None


def load_gazetteer(path: Path) -> Gazetteer:
    places: list[GeoPlace] = []
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            name = _cell(row, "name")
            kind = _cell(row, "kind")
            if name is None or kind is None:
                continue
            places.append(
                GeoPlace(
                    name=name,
                    kind=kind,
                    country=_cell(row, "country"),
                    state=_cell(row, "state"),
                    county=_cell(row, "county"),
                    city=_cell(row, "city"),
                    lat=float(row["lat"]),
                    lon=float(row["lon"]),
                )
            )
    gazetteer = Gazetteer(places)
    logger.info("loaded %d gazetteer rows from %s", len(gazetteer), path)
    return gazetteer


class Geocoder(Protocol):
    id: str

    def forward(self, query: str) -> GeoPlace | None: ...

    def reverse(self, lat: float, lon: float) -> GeoPlace | None: ...


class GazetteerGeocoder:
    id = "gazetteer"

    def __init__(self, gazetteer: Gazetteer) -> None:
        self.gazetteer = gazetteer

    def forward(self, query: str) -> GeoPlace | None:
        candidates = self.gazetteer.forward(query)
        return candidates[0] if candidates else None

    def reverse(self, lat: float, lon: float) -> GeoPlace | None:
        return self.gazetteer.reverse(lat, lon)


class NominatimGeocoder:
    id = "nominatim"

    def __init__(self, user_agent: str = "scree", min_delay: float = 1.0, timeout: float = 10.0) -> None:
        self._client = Nominatim(user_agent=user_agent, timeout=timeout)
        self._geocode = RateLimiter(self._client.geocode, min_delay_seconds=min_delay, swallow_exceptions=False)
        self._reverse = RateLimiter(self._client.reverse, min_delay_seconds=min_delay, swallow_exceptions=False)

    def forward(self, query: str) -> GeoPlace | None:
        try:
            location = self._geocode(query, addressdetails=True, exactly_one=True)
        except GeopyError as exc:
            raise GeocoderError(f"geocoding {query!r} failed: {exc}") from exc
        return _place_from_location(query, location)

    def reverse(self, lat: float, lon: float) -> GeoPlace | None:
        try:
            location = self._reverse((lat, lon), addressdetails=True, exactly_one=True)
        except GeopyError as exc:
            raise GeocoderError(f"reverse geocoding ({lat}, {lon}) failed: {exc}") from exc
        return _place_from_location(f"{lat},{lon}", location)


def _place_from_location(name: str, location: Any) -> GeoPlace | None:
    if location is None:
        return None
    address = (location.raw or {}).get("address", {})
    city = address.get("city") or address.get("town") or address.get("village")
    county = address.get("county")
    state = address.get("state")
    kind = "city" if city else "county" if county else "state" if state else "country"
    return GeoPlace(
        name=name,
        kind=kind,
        country=address.get("country"),
        state=state,
        county=county,
        city=city,
        lat=location.latitude,
        lon=location.longitude,
    )


def load_dictionary(path: Path) -> dict[str, str]:
    """Read `phrase<TAB>entity_kind` lines; `#` starts a comment line."""
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            phrase, sep, kind = line.partition("\t")
            kind = kind.strip().upper()
            if not sep or kind not in ENTITY_KINDS:
                raise ValueError(f"{path}:{line_no}: expected phrase<TAB>kind")
            entries[phrase.strip()] = kind
    return entries


class DictionaryTagger:
    def __init__(self, language: str, entries: Mapping[str, str]) -> None:
        self.language = language
        self._phrases: dict[tuple[str, ...], str] = {}
        for phrase, kind in entries.items():
            tokens = tuple(token.casefold() for token in TOKEN_PATTERN.findall(phrase))
            if tokens:
                self._phrases.setdefault(tokens, kind)
        self._max_tokens = max((len(tokens) for tokens in self._phrases), default=0)

    def __len__(self) -> int:
        return len(self._phrases)

    def _match_at(self, folded: list[str], tokens: list[re.Match[str]], index: int) -> tuple[int, str] | None:
        longest = min(self._max_tokens, len(folded) - index)
        for length in range(longest, 0, -1):
            kind = self._phrases.get(tuple(folded[index : index + length]))
            if kind is None:
                continue
            if kind == "PERSON" and not tokens[index].group()[0].isupper():
                continue
            return length, kind
        return None

    def tag(self, text: str) -> list[NamedEntity]:
        tokens = list(TOKEN_PATTERN.finditer(text))
        folded = [token.group().casefold() for token in tokens]
        entities: list[NamedEntity] = []
        index = 0
        while index < len(tokens):
            match = self._match_at(folded, tokens, index)
            if match is None:
                index += 1
                continue
            length, kind = match
            end_index = index + length
            while kind == "PERSON" and end_index < len(tokens):
                following = self._match_at(folded, tokens, end_index)
                if following is None or following[1] != "PERSON":
                    break
                end_index += following[0]
            start = tokens[index].start()
            end = tokens[end_index - 1].end()
            entities.append(NamedEntity(text=text[start:end], kind=kind, start=start, end=end))
            index = end_index
        return entities


class NamedEntityRecognizer:
    def __init__(
        self,
        taggers: Mapping[str, DictionaryTagger],
        fallback: DictionaryTagger,
        cache: Cache[tuple[str, str], tuple[NamedEntity, ...]] | None = None,
    ) -> None:
        self.taggers = dict(taggers)
        self.fallback = fallback
        self.cache: Cache[tuple[str, str], tuple[NamedEntity, ...]] = (
            cache if cache is not None else LruCache(10_000)
        )

    @classmethod
    def from_directory(
        cls,
        directory: Path | None,
        gazetteer: Gazetteer | None = None,
        cache: Cache[tuple[str, str], tuple[NamedEntity, ...]] | None = None,
    ) -> "NamedEntityRecognizer":
        locations = {name: "LOCATION" for name in (gazetteer.names if gazetteer else [])}
        taggers: dict[str, DictionaryTagger] = {}
        for language in (*ROUTED_LANGUAGES, FALLBACK_LANGUAGE):
            entries: dict[str, str] = dict(locations)
            path = directory / f"{language}.tsv" if directory is not None else None
            if path is not None and path.is_file():
                entries.update(load_dictionary(path))
            else:
                logger.debug("no NER dictionary for %s", language)
            taggers[language] = DictionaryTagger(language, entries)
        fallback = taggers.pop(FALLBACK_LANGUAGE)
        return cls(taggers, fallback, cache)

    def route(self, lang: str) -> str:
        primary = primary_language(lang)
        return primary if primary in self.taggers else FALLBACK_LANGUAGE

    def tagger_for(self, lang: str) -> DictionaryTagger:
        return self.taggers.get(self.route(lang), self.fallback)

    def tag(self, text: str, lang: str) -> list[NamedEntity]:
        normalized = unicodedata.normalize("NFC", text)
        if not normalized.strip():
            return []
        route = self.route(lang)
        tagger = self.tagger_for(lang)
        entities, _ = self.cache.get_or_compute(
            (route, normalized), lambda: tuple(tagger.tag(normalized))
        )
        return list(entities)


def ner_tag(text: str, lang: str, ner: NamedEntityRecognizer) -> list[NamedEntity]:
    return ner.tag(text, lang)


class GeoTagger:
    def __init__(
        self,
        geocoder: Geocoder,
        ner: NamedEntityRecognizer,
        cache: Cache[str, GeoPlace | None] | None = None,
    ) -> None:
        self.geocoder = geocoder
        self.ner = ner
        self.cache: Cache[str, GeoPlace | None] = cache if cache is not None else LruCache(10_000)

    def geotag(self, tweet: Tweet) -> GeoTag:
        sources: tuple[tuple[str, Callable[[], GeoPlace | None]], ...] = (
            ("gps", lambda: self._reverse(*tweet.gps) if tweet.gps is not None else None),
            ("text", lambda: self._first_entity_place(tweet.text, tweet.lang)),
            ("place", lambda: self._forward_field(tweet.place_name)),
            ("user_location", lambda: self._forward_field(tweet.author_location)),
            (
                "profile_description",
                lambda: self._first_entity_place(tweet.author_description, tweet.lang),
            ),
        )
        for source_field, resolve in sources:
            place = resolve()
            if place is not None and place.country:
                return place.to_geotag(source_field)
        return GeoTag()

    def _first_entity_place(self, text: str | None, lang: str) -> GeoPlace | None:
        if not text:
            return None
        for entity in self.ner.tag(text, lang):
            if entity.kind != "LOCATION":
                continue
            place = self._forward(entity.text)
            if _resolved(place):
                return place
        return None

    def _forward_field(self, value: str | None) -> GeoPlace | None:
        if not value or not value.strip():
            return None
        candidates = [value]
        parts = [part.strip() for part in value.split(",") if part.strip()]
        if len(parts) > 1:
            candidates.extend(parts)
        for candidate in candidates:
            place = self._forward(candidate)
            if _resolved(place):
                return place
        return None

    def _forward(self, query: str) -> GeoPlace | None:
        key = f"fwd:{normalize_query(query)}"
        try:
            place, _ = self.cache.get_or_compute(key, lambda: self.geocoder.forward(query))
        except GeocoderError as exc:
            logger.warning("%s", exc)
            return None
        return place

    def _reverse(self, lat: float, lon: float) -> GeoPlace | None:
        key = f"rev:{lat:.4f},{lon:.4f}"
        try:
            place, _ = self.cache.get_or_compute(key, lambda: self.geocoder.reverse(lat, lon))
        except GeocoderError as exc:
            logger.warning("%s", exc)
            return None
        return place


def _resolved(place: GeoPlace | None) -> bool:
    return place is not None and bool(place.country)


def geotag(tweet: Tweet, tagger: GeoTagger) -> GeoTag:
    return tagger.geotag(tweet)


def classify_user_type(author_name: str, ner: NamedEntityRecognizer) -> UserType:
    """Person when one PERSON entity covers at least half the name's non-space characters."""
    name = unicodedata.normalize("NFC", author_name)
    letters = sum(1 for char in name if not char.isspace())
    if letters == 0:
        return UserType("organization")
    for entity in ner_tag(name, "en", ner):
        if entity.kind != "PERSON":
            continue
        covered = sum(1 for char in entity.text if not char.isspace())
        if covered * 2 >= letters:
            return UserType("person")
    return UserType("organization")
