from __future__ import annotations

from collections import Counter
import csv
from dataclasses import asdict, dataclass, field
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from scree.dedup import LabeledPair
from scree.media import image_filename
from scree.models import Tweet, image_id_for, serialize_tweet

JUNK_SHARE = 0.76
DUPLICATE_SHARE = 0.09
LANDSLIDE_SHARE_OF_REMAINING = 0.0084
REPOST_SHARE = 0.02
OFF_TOPIC_SHARE = 0.1
DEFAULT_IMAGES = 1000
DEFAULT_SYNTH_DIM = 32
SYNTH_DUPLICATE_THRESHOLD = 1.0
DEFAULT_SEED = 42
BASE_TIMESTAMP_MS = 1_546_300_800_000
IMAGE_URL = "https://pbs.example.org/media/{index:07d}.jpg"
OFF_TOPIC_URL = "https://pbs.example.org/other/{index:07d}.jpg"

KEYWORDS = (
    ("landslide", "en"),
    ("mudslide", "en"),
    ("rockfall", "en"),
    ("glissement de terrain", "fr"),
    ("deslizamiento", "es"),
    ("frana", "it"),
    ("deslizamento", "pt"),
)
LANGUAGE_WEIGHTS = {"en": 0.7, "fr": 0.08, "es": 0.1, "it": 0.06, "pt": 0.06}
POST_TEMPLATES = {
    "en": "{keyword} reported on the hill road",
    "fr": "{keyword} sur la route",
    "es": "{keyword} en la carretera",
    "it": "{keyword} sulla strada",
    "pt": "{keyword} na estrada",
}
OFF_TOPIC_TEXTS = (
    "lovely sunset over the bay",
    "new cafe opened downtown",
    "match day with friends",
)

# name, kind, country, state, county, city, lat, lon; cities sit far apart.
GAZETTEER_ROWS = (
    ("Ooty", "city", "India", "Tamil Nadu", "Nilgiris", "Ooty", 11.41, 76.70),
    ("Shimla", "city", "India", "Himachal Pradesh", "Shimla", "Shimla", 31.10, 77.17),
    ("Darjeeling", "city", "India", "West Bengal", "Darjeeling", "Darjeeling", 27.04, 88.26),
    ("Kathmandu", "city", "Nepal", "Bagmati", "Kathmandu", "Kathmandu", 27.71, 85.32),
    ("Baguio", "city", "Philippines", "Benguet", "", "Baguio", 16.40, 120.60),
    ("Medellin", "city", "Colombia", "Antioquia", "", "Medellin", 6.24, -75.58),
    ("Seattle", "city", "United States", "Washington", "King County", "Seattle", 47.61, -122.33),
    ("Bogor", "city", "Indonesia", "West Java", "", "Bogor", -6.60, 106.80),
    ("Guatemala City", "city", "Guatemala", "Guatemala", "", "Guatemala City", 14.63, -90.51),
    ("Kerala", "state", "India", "Kerala", "", "", 10.50, 76.20),
    ("Nepal", "country", "Nepal", "", "", "", 28.39, 84.12),
)
GIVEN_NAMES = ("Maria", "Ravi", "Anita", "John", "Sofia", "Kenji", "Amara", "Lucas")
SURNAMES = ("Lopez", "Sharma", "Okafor", "Smith", "Rossi", "Tanaka", "Silva", "Nair")
ORGANIZATIONS = (
    "Hill Road Authority",
    "Disaster Relief Network",
    "Mountain Weather Desk",
    "Slope Safety Council",
    "Regional News Service",
)
PLANTED_SOURCES = ("gps", "text", "place", "user_location", "profile_description", "none")
PLANTED_SOURCE_WEIGHTS = (0.05, 0.2, 0.15, 0.3, 0.1, 0.2)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlantedCounts:
    images: int
    junk: int
    duplicate: int
    remaining: int
    landslide: int
    tweets: int = 0
    matched_tweets: int = 0
    reposts: int = 0
    refs: int = 0

    @classmethod
    def for_images(cls, images: int) -> "PlantedCounts":
        if images < 1:
            raise ValueError(f"images must be >= 1, got {images}")
        junk = round(images * JUNK_SHARE)
        duplicate = round(images * DUPLICATE_SHARE)
        remaining = images - junk - duplicate
        if remaining < 1:
            raise ValueError(f"{images} images leave no room for non-junk originals")
        landslide = round(remaining * LANDSLIDE_SHARE_OF_REMAINING)
        return cls(images, junk, duplicate, remaining, landslide)


@dataclass(frozen=True)
class Deployment:
    root: Path
    config_path: Path
    corpus_path: Path
    keywords_path: Path
    fixture_dir: Path
    gazetteer_path: Path
    ner_dir: Path
    pairs_path: Path
    gold_path: Path
    manifest_path: Path
    counts: PlantedCounts
    expected: dict[str, Any] = field(default_factory=dict)


@dataclass
class _Image:
    role: str
    payload: bytes
    landslide: bool = False
    url: str = ""


@dataclass
class _Post:
    source: str
    place: tuple[Any, ...] | None
    user_kind: str
    author_name: str


def write_keywords(path: Path, keywords: Iterable[tuple[str, str]] = KEYWORDS) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("keyword", "language"))
        writer.writerows(keywords)
    return path


def write_gazetteer(path: Path, rows: Iterable[Sequence[Any]] = GAZETTEER_ROWS) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("name", "kind", "country", "state", "county", "city", "lat", "lon"))
        writer.writerows(rows)
    return path


def write_ner_dictionaries(directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    people = [f"{name}\tPERSON" for name in (*GIVEN_NAMES, *SURNAMES)]
    organizations = [f"{name}\tORGANIZATION" for name in ORGANIZATIONS]
    for language in (*POST_TEMPLATES, "ml"):
        lines = ["# phrase<TAB>kind", *people]
        if language == "en":
            lines.extend(organizations)
        (directory / f"{language}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def generate_pairs(duplicates: int = 460, distinct: int = 140, seed: int = 0) -> list[LabeledPair]:
    rng = np.random.default_rng(seed)
    low = np.abs(rng.normal(3.0, 1.8, duplicates))
    high = np.abs(rng.normal(9.5, 1.8, distinct))
    pairs = [LabeledPair(round(float(value), 3), True) for value in low]
    pairs += [LabeledPair(round(float(value), 3), False) for value in high]
    order = rng.permutation(len(pairs))
    return [pairs[index] for index in order]


def write_pairs(path: Path, pairs: Iterable[LabeledPair]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("distance", "is_duplicate"))
        for pair in pairs:
            writer.writerow((repr(pair.distance), int(pair.is_duplicate)))
    return path


def near_duplicate_vectors(
    base: np.ndarray, count: int, noise: float, rng: np.random.Generator
) -> np.ndarray:
    base = np.asarray(base, dtype=np.float32)
    jitter = rng.uniform(-noise, noise, size=(count, base.shape[0])).astype(np.float32)
    return base[np.newaxis, :] + jitter


def _plant_images(counts: PlantedCounts, rng: np.random.Generator) -> list[_Image]:
    remaining = [_Image("remaining", b"scree-img:r%d:" % index + rng.bytes(48)) for index in range(counts.remaining)]
    for index in rng.choice(counts.remaining, size=counts.landslide, replace=False):
        remaining[int(index)].landslide = True
    junk = [_Image("junk", b"scree-img:j%d:" % index + rng.bytes(48)) for index in range(counts.junk)]
    duplicates = [
        _Image("duplicate", remaining[int(index)].payload)
        for index in rng.integers(0, counts.remaining, size=counts.duplicate)
    ]
    half = counts.junk // 2
    first = remaining + junk[:half]
    second = duplicates + junk[half:]
    order = [first[index] for index in rng.permutation(len(first))]
    order += [second[index] for index in rng.permutation(len(second))]
    for index, image in enumerate(order):
        image.url = IMAGE_URL.format(index=index)
    return order


def _plant_post(rng: np.random.Generator) -> _Post:
    source = str(rng.choice(PLANTED_SOURCES, p=PLANTED_SOURCE_WEIGHTS))
    cities = [row for row in GAZETTEER_ROWS if row[1] == "city"]
    place = cities[int(rng.integers(len(cities)))] if source != "none" else None
    if rng.random() < 0.6:
        name = f"{GIVEN_NAMES[int(rng.integers(len(GIVEN_NAMES)))]} {SURNAMES[int(rng.integers(len(SURNAMES)))]}"
        return _Post(source, place, "person", name)
    return _Post(source, place, "organization", ORGANIZATIONS[int(rng.integers(len(ORGANIZATIONS)))])


def _language(rng: np.random.Generator) -> str:
    languages = list(LANGUAGE_WEIGHTS)
    return str(rng.choice(languages, p=list(LANGUAGE_WEIGHTS.values())))


def _keyword(language: str, rng: np.random.Generator) -> str:
    options = [keyword for keyword, lang in KEYWORDS if lang == language]
    return options[int(rng.integers(len(options)))]


def _tweet(index: int, post: _Post, urls: Sequence[str], rng: np.random.Generator) -> Tweet:
    language = _language(rng)
    text = POST_TEMPLATES[language].format(keyword=_keyword(language, rng))
    gps = place_name = location = description = None
    if post.place is not None:
        name, _, country, *_rest, lat, lon = post.place
        if post.source == "gps":
            gps = (lat, lon)
        elif post.source == "text":
            text = f"{text} {name}"
        elif post.source == "place":
            place_name = name
        elif post.source == "user_location":
            location = f"{name}, {country}"
        elif post.source == "profile_description":
            description = f"Updates from {name}"
    return Tweet(
        id=str(10**17 + index),
        text=text,
        lang=language,
        created_at=BASE_TIMESTAMP_MS + index * 1000,
        gps=gps,
        place_name=place_name,
        author_name=post.author_name,
        author_location=location,
        author_description=description,
        image_urls=tuple(urls),
    )


def _write_scores(path: Path, scores: Iterable[tuple[str, float]]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("id", "score"))
        writer.writerows(scores)
    return path


def _score(rng: np.random.Generator, positive: bool) -> float:
    low, high = (0.55, 0.99) if positive else (0.01, 0.45)
    return round(float(rng.uniform(low, high)), 4)


def generate_deployment(
    root: Path,
    images: int = DEFAULT_IMAGES,
    dim: int = DEFAULT_SYNTH_DIM,
    seed: int = DEFAULT_SEED,
) -> Deployment:
    """Write a complete offline deployment under `root`; deterministic per seed."""
    rng = np.random.default_rng(seed)
    planted = PlantedCounts.for_images(images)
    root.mkdir(parents=True, exist_ok=True)
    fixture_dir = root / "fixtures" / "images"
    fixture_dir.mkdir(parents=True, exist_ok=True)

    order = _plant_images(planted, rng)
    for image in order:
        (fixture_dir / image_filename(image.url)).write_bytes(image.payload)

    tweets: list[Tweet] = []
    geotag_sources: Counter[str] = Counter()
    user_types: Counter[str] = Counter()
    by_user_type: Counter[str] = Counter()
    countries: Counter[str] = Counter()
    cursor = 0
    while cursor < len(order):
        size = 2 if rng.random() < 0.3 and cursor + 1 < len(order) else 1
        batch = order[cursor : cursor + size]
        cursor += size
        post = _plant_post(rng)
        tweets.append(_tweet(len(tweets), post, [image.url for image in batch], rng))
        geotag_sources[post.source] += 1
        user_types[post.user_kind] += 1
        for image in batch:
            if image.role == "remaining" and image.landslide:
                by_user_type[post.user_kind] += 1
                if post.place is not None:
                    countries[post.place[2]] += 1
    matched = len(tweets)

    reposts = round(images * REPOST_SHARE)
    for _ in range(reposts):
        original = order[int(rng.integers(len(order)))]
        tweets.append(_tweet(len(tweets), _plant_post(rng), [original.url], rng))

    off_topic = round(matched * OFF_TOPIC_SHARE)
    corpus_lines = [serialize_tweet(tweet) for tweet in tweets]
    for index in range(off_topic):
        tweet = Tweet(
            id=str(2 * 10**17 + index),
            text=OFF_TOPIC_TEXTS[index % len(OFF_TOPIC_TEXTS)],
            lang="en",
            created_at=BASE_TIMESTAMP_MS + index * 1000,
            author_name="Someone Else",
            image_urls=(OFF_TOPIC_URL.format(index=index),),
        )
        position = int(rng.integers(len(corpus_lines) + 1))
        corpus_lines.insert(position, serialize_tweet(tweet))

    corpus_path = root / "corpus.jsonl"
    corpus_path.write_text("\n".join(corpus_lines) + "\n", encoding="utf-8")
    keywords_path = write_keywords(root / "keywords.csv")
    gazetteer_path = write_gazetteer(root / "gazetteer.csv")
    ner_dir = write_ner_dictionaries(root / "ner")
    _write_scores(
        root / "junk_scores.csv",
        ((image.url, _score(rng, image.role != "junk")) for image in order),
    )
    _write_scores(
        root / "landslide_scores.csv",
        ((image.url, _score(rng, image.role == "remaining" and image.landslide)) for image in order),
    )
    gold_path = root / "landslide_gold.csv"
    with open(gold_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("id", "label"))
        for image in order:
            if image.role == "remaining":
                label = "landslide" if image.landslide else "not-landslide"
                writer.writerow((image_id_for(image.url), label))
    pairs_path = write_pairs(root / "pairs.csv", generate_pairs(seed=seed))

    config = {
        "keywords_path": "keywords.csv",
        "corpus_path": "corpus.jsonl",
        "store_dir": "store",
        "image_dir": "store/images",
        "fetcher": "offline",
        "fixture_image_dir": "fixtures/images",
        "feature_dim": dim,
        "duplicate_threshold": SYNTH_DUPLICATE_THRESHOLD,
        "junk": {"backend": "lookup", "scores_path": "junk_scores.csv"},
        "landslide": {"backend": "lookup", "scores_path": "landslide_scores.csv"},
        "gazetteer_path": "gazetteer.csv",
        "ner_dir": "ner",
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")

    counts = PlantedCounts(
        images=planted.images,
        junk=planted.junk,
        duplicate=planted.duplicate,
        remaining=planted.remaining,
        landslide=planted.landslide,
        tweets=len(tweets) + off_topic,
        matched_tweets=len(tweets),
        reposts=reposts,
        refs=len(order) + reposts,
    )
    expected = {
        "geotag_sources": dict(geotag_sources),
        "user_types": dict(user_types),
        "landslide_by_user_type": dict(by_user_type),
        "top_countries": sorted(countries.items(), key=lambda item: (-item[1], item[0]))[:10],
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(
        json.dumps({"counts": asdict(counts), "expected": expected, "seed": seed}, indent=2) + "\n",
        encoding="utf-8",
    )
    logger.info("generated deployment with %d images under %s", images, root)
    return Deployment(
        root=root,
        config_path=config_path,
        corpus_path=corpus_path,
        keywords_path=keywords_path,
        fixture_dir=fixture_dir,
        gazetteer_path=gazetteer_path,
        ner_dir=ner_dir,
        pairs_path=pairs_path,
        gold_path=gold_path,
        manifest_path=manifest_path,
        counts=counts,
        expected=expected,
    )
