from __future__ import annotations

from pathlib import Path

import pytest

from scree.cache import LruCache, NoCache
from scree.geo_text import (
    DictionaryTagger,
    Gazetteer,
    GazetteerGeocoder,
    GeocoderError,
    GeoPlace,
    GeoTagger,
    NamedEntityRecognizer,
    classify_user_type,
    geotag,
    load_dictionary,
    load_gazetteer,
    ner_tag,
    normalize_query,
    primary_language,
)
from scree.models import GeoTag, Tweet


class CountingGeocoder:
    id = "counting"

    def __init__(self, inner: GazetteerGeocoder, failing: tuple[str, ...] = ()) -> None:
        self.inner = inner
        self.failing = failing
        self.forward_calls: list[str] = []
        self.reverse_calls = 0

    def forward(self, query: str) -> GeoPlace | None:
        self.forward_calls.append(query)
        if query in self.failing:
            raise GeocoderError(f"service down for {query}")
        return self.inner.forward(query)

    def reverse(self, lat: float, lon: float) -> GeoPlace | None:
        self.reverse_calls += 1
        return self.inner.reverse(lat, lon)


@pytest.fixture()
def gazetteer(gazetteer_path: Path) -> Gazetteer:
    return load_gazetteer(gazetteer_path)


@pytest.fixture()
def ner(ner_dir: Path, gazetteer: Gazetteer) -> NamedEntityRecognizer:
    return NamedEntityRecognizer.from_directory(ner_dir, gazetteer)


@pytest.fixture()
def geocoder(gazetteer: Gazetteer) -> CountingGeocoder:
    return CountingGeocoder(GazetteerGeocoder(gazetteer))


def test_normalize_query_and_language() -> None:
    assert normalize_query("  Guatemala   CITY ") == "guatemala city"
    assert primary_language("en-GB") == "en"
    assert primary_language("PT_br") == "pt"


def test_gazetteer_forward(gazetteer) -> None:
    assert len(gazetteer) == 11
    ooty = gazetteer.forward("OOTY")
    assert [place.city for place in ooty] == ["Ooty"]
    kerala = gazetteer.forward("kerala")[0]
    assert (kerala.kind, kerala.country, kerala.state) == ("state", "India", "Kerala")
    assert gazetteer.forward("Atlantis") == []


def test_gazetteer_reverse_prefers_specific_kinds(gazetteer) -> None:
    assert gazetteer.reverse(31.12, 77.2).city == "Shimla"
    assert gazetteer.reverse(10.6, 76.3).name == "Kerala"
    assert gazetteer.reverse(0.0, 0.0) is None


def test_gazetteer_rejects_bad_rows() -> None:
    with pytest.raises(ValueError):
        Gazetteer([GeoPlace("X", "village", "Y", lat=0.0, lon=0.0)])
    with pytest.raises(ValueError):
        Gazetteer([GeoPlace("X", "city", "Y", lat=95.0, lon=0.0)])
    with pytest.raises(ValueError):
        Gazetteer([GeoPlace("X", "city", "Y", lat=1.0, lon=1.0), GeoPlace("x", "city", "Z", lat=2.0, lon=2.0)])


def test_load_dictionary(tmp_path: Path) -> None:
    path = tmp_path / "en.tsv"
    path.write_text("# comment\nMaria\tperson\nRed Cross\tORGANIZATION\n", encoding="utf-8")
    assert load_dictionary(path) == {"Maria": "PERSON", "Red Cross": "ORGANIZATION"}
    path.write_text("Maria PERSON\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_dictionary(path)


def test_tagger_longest_match_and_person_span() -> None:
    tagger = DictionaryTagger("en", {"Guatemala": "LOCATION", "Guatemala City": "LOCATION", "Ravi": "PERSON", "Sharma": "PERSON"})
    text = "Ravi Sharma says Guatemala City road closed"
    entities = tagger.tag(text)
    assert [(e.text, e.kind) for e in entities] == [("Ravi Sharma", "PERSON"), ("Guatemala City", "LOCATION")]
    assert text[entities[1].start : entities[1].end] == "Guatemala City"
    assert tagger.tag("ravi went home") == []


def test_person_span_stops_at_unknown_tokens() -> None:
    tagger = DictionaryTagger("en", {"Smith": "PERSON", "John": "PERSON"})
    assert [(e.text, e.kind) for e in tagger.tag("Smith Geological Ltd")] == [("Smith", "PERSON")]
    assert [e.text for e in tagger.tag("John Smith")] == ["John Smith"]
    assert [e.text for e in tagger.tag("John Geological Survey Office")] == ["John"]


def test_ner_routes_languages(ner: NamedEntityRecognizer) -> None:
    assert ner.route("en-US") == "en"
    assert ner.route("ja") == "ml"
    assert ner.route("und") == "ml"
    entities = ner_tag("deslizamiento cerca de Medellin", "es", ner)
    assert [(e.text, e.kind) for e in entities] == [("Medellin", "LOCATION")]
    assert ner.tag("   ", "en") == []


def test_ner_caches_by_route_and_text(ner: NamedEntityRecognizer) -> None:
    ner.tag("landslide in Shimla", "en")
    ner.tag("landslide in Shimla", "en-GB")
    stats = ner.cache.stats()
    assert (stats.misses, stats.hits) == (1, 1)


def test_geotag_prefers_gps(geocoder, ner) -> None:
    tweet = Tweet(id="1", text="landslide in Kathmandu", gps=(31.1, 77.17), author_location="Seattle")
    tag = GeoTagger(geocoder, ner).geotag(tweet)
    assert tag == GeoTag(country="India", state="Himachal Pradesh", county="Shimla", city="Shimla", source_field="gps")


@pytest.mark.parametrize(
    ("fields", "source", "country"),
    [
        ({"text": "landslide near Kathmandu"}, "text", "Nepal"),
        ({"text": "landslide", "place_name": "Baguio"}, "place", "Philippines"),
        ({"text": "landslide", "place_name": "Atlantis", "author_location": "Somewhere, Bogor"}, "user_location", "Indonesia"),
        ({"text": "landslide", "author_description": "Weather updates from Kerala"}, "profile_description", "India"),
        ({"text": "landslide", "author_location": "the moon"}, "none", None),
    ],
)
def test_geotag_cascade(geocoder, ner, fields: dict, source: str, country: str | None) -> None:
    tag = GeoTagger(geocoder, ner).geotag(Tweet(id="1", **fields))
    assert tag.source_field == source
    assert tag.country == country


def test_geotag_far_gps_falls_through(geocoder, ner) -> None:
    tweet = Tweet(id="1", text="landslide", gps=(0.0, 0.0), place_name="Medellin")
    tag = GeoTagger(geocoder, ner).geotag(tweet)
    assert (tag.source_field, tag.city) == ("place", "Medellin")


def test_geotag_caches_lookups(geocoder, ner) -> None:
    tagger = GeoTagger(geocoder, ner, cache=LruCache(16))
    for n in range(5):
        tagger.geotag(Tweet(id=str(n), text="landslide", place_name="Darjeeling"))
    assert geocoder.forward_calls == ["Darjeeling"]


def test_geocoder_errors_skip_the_source(gazetteer, ner) -> None:
    failing = CountingGeocoder(GazetteerGeocoder(gazetteer), failing=("Ooty",))
    tweet = Tweet(id="1", text="landslide", place_name="Ooty", author_location="Darjeeling")
    tag = GeoTagger(failing, ner).geotag(tweet)
    assert (tag.source_field, tag.city) == ("user_location", "Darjeeling")


@pytest.mark.parametrize(
    ("name", "kind"),
    [
        ("Ravi Sharma", "person"),
        ("Maria", "person"),
        ("Hill Road Authority", "organization"),
        ("Regional News Service", "organization"),
        ("maria lopez", "organization"),
        ("", "organization"),
        ("Maria Lopez Disaster Relief Network", "organization"),
        ("John Smith", "person"),
        ("Smith Geological Ltd", "organization"),
        ("John Geological Survey Office", "organization"),
        ("British Geological Survey", "organization"),
    ],
)
def test_user_type(ner, name: str, kind: str) -> None:
    assert classify_user_type(name, ner).kind == kind


@pytest.mark.parametrize(
    ("fields", "source", "city"),
    [
        ({"text": "landslide near Kathmandu", "place_name": "Baguio"}, "text", "Kathmandu"),
        ({"text": "landslide", "place_name": "Baguio", "author_location": "Bogor"}, "place", "Baguio"),
        (
            {"text": "landslide", "author_location": "Darjeeling", "author_description": "Reporting from Ooty"},
            "user_location",
            "Darjeeling",
        ),
        ({"text": "landslide in Medellin", "gps": (47.6, -122.3)}, "gps", "Seattle"),
    ],
)
def test_geotag_conflicting_sources(geocoder, ner, fields: dict, source: str, city: str) -> None:
    tag = geotag(Tweet(id="1", **fields), GeoTagger(geocoder, ner))
    assert (tag.source_field, tag.city) == (source, city)


def test_geotag_output_ignores_cache_state(gazetteer, ner_dir: Path) -> None:
    tweets = [
        Tweet(id="1", text="landslide near Kathmandu", place_name="Baguio"),
        Tweet(id="2", text="landslide", place_name="Atlantis", author_location="Somewhere, Bogor"),
        Tweet(id="3", text="landslide", gps=(31.1, 77.17)),
        Tweet(id="4", text="landslide", author_description="Weather updates from Kerala"),
        Tweet(id="5", text="landslide", author_location="the moon"),
        Tweet(id="6", text="slide on the road to Shimla", lang="es"),
    ]
    uncached = GeoTagger(
        GazetteerGeocoder(gazetteer),
        NamedEntityRecognizer.from_directory(ner_dir, gazetteer, cache=NoCache()),
        cache=NoCache(),
    )
    tiny = GeoTagger(
        GazetteerGeocoder(gazetteer),
        NamedEntityRecognizer.from_directory(ner_dir, gazetteer, cache=LruCache(1)),
        cache=LruCache(1),
    )
    expected = [uncached.geotag(tweet) for tweet in tweets]
    for _ in range(3):
        assert [tiny.geotag(tweet) for tweet in tweets] == expected
        assert [tiny.geotag(tweet) for tweet in reversed(tweets)] == expected[::-1]
