from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from scree.broker import Queue
from scree.collectors import (
    KeywordList,
    ListSource,
    ReplaySource,
    UrlDedupMap,
    check_and_record_url,
    load_keywords,
    matches_keywords,
    run_image_collector,
    run_tweet_collector,
)
from scree.media import MemoryFetcher, image_filename
from scree.models import ImageRecord, ImageRef
from scree.storage import DocStore

from conftest import tweet_doc, write_corpus

KEYWORDS = KeywordList.of(["landslide", "mudslide"], "en")


def drain(queue: Queue) -> list:
    items = []
    while queue.depth:
        items.append(queue.pop())
    return items


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("Massive landslide blocks highway", True),
        ("LANDSLIDE!", True),
        ("mudslides again near the pass", True),
        ("hillside erosion", False),
        ("", False),
    ],
)
def test_matches_keywords(text: str, expected: bool) -> None:
    assert matches_keywords(text, KEYWORDS) is expected


def test_matching_folds_unicode() -> None:
    keywords = KeywordList.of(["glissement de terrain", "deslizamiento"], "fr")
    assert matches_keywords("GLISSEMENT DE TERRAIN à Nice", keywords)
    assert matches_keywords("Deslizamiento en Medellín", keywords)


def test_empty_keyword_list_rejected() -> None:
    with pytest.raises(ValueError):
        KeywordList(())
    with pytest.raises(ValueError):
        KeywordList.of(["  "])


def test_load_keywords_skips_header_and_comments(tmp_path: Path) -> None:
    path = tmp_path / "keywords.csv"
    path.write_text(
        "keyword,language\n# seed list\nlandslide,en\nfrana,it\n\nmudslide,EN\n",
        encoding="utf-8",
    )
    keywords = load_keywords(path)
    assert keywords.keywords == ("landslide", "frana", "mudslide")
    assert keywords.languages == ("en", "it")


def test_tweet_collector_counts(tmp_path: Path) -> None:
    docs = [
        tweet_doc("1", "Landslide on NH5", ["http://img/1.jpg", "http://img/2.jpg"]),
        tweet_doc("2", "mudslide closes road", ["http://img/3.jpg"]),
        tweet_doc("3", "LANDSLIDE warning", ["http://img/4.jpg", "http://img/5.jpg"]),
        tweet_doc("4", "small landslide, no photo"),
        tweet_doc("5", "another landslide", ["http://img/6.jpg"]),
    ]
    docs += [tweet_doc(str(n), "sunny day in the hills", ["http://img/x.jpg"]) for n in range(6, 11)]
    store = DocStore(tmp_path / "tweets.log")
    refs: Queue[ImageRef] = Queue("image_refs")

    summary = run_tweet_collector(ReplaySource(write_corpus(tmp_path / "c.jsonl", docs)), KEYWORDS, store, refs)

    assert summary.to_dict() == {"seen": 10, "matched": 5, "refs_pushed": 6, "errors": 0}
    assert store.count == 5
    pushed = drain(refs)
    assert [ref.url for ref in pushed] == [f"http://img/{n}.jpg" for n in range(1, 7)]
    assert pushed[0].tweet_id == "1"


def test_tweet_collector_four_matches(tmp_path: Path) -> None:
    docs = [
        tweet_doc("1", "landslide", ["u1", "u2"]),
        tweet_doc("2", "landslide", ["u3"]),
        tweet_doc("3", "landslide", ["u4", "u5"]),
        tweet_doc("4", "landslide", ["u6"]),
    ] + [tweet_doc(str(n), "nothing to see") for n in range(5, 11)]
    refs: Queue[ImageRef] = Queue("image_refs")
    summary = run_tweet_collector(
        ReplaySource(write_corpus(tmp_path / "c.jsonl", docs)),
        KEYWORDS,
        DocStore(tmp_path / "tweets.log"),
        refs,
    )
    assert (summary.matched, summary.refs_pushed) == (4, 6)
    assert refs.depth == 6


def test_tweet_collector_empty_corpus(tmp_path: Path) -> None:
    refs: Queue[ImageRef] = Queue("image_refs")
    summary = run_tweet_collector(ListSource([]), KEYWORDS, DocStore(tmp_path / "t.log"), refs)
    assert summary.to_dict() == {"seen": 0, "matched": 0, "refs_pushed": 0, "errors": 0}


def test_tweet_collector_skips_malformed_lines(tmp_path: Path) -> None:
    lines = ['{"id": "1", "text": ', '{"text": "landslide"}', '{"id": "3", "text": "landslide"}']
    refs: Queue[ImageRef] = Queue("image_refs")
    summary = run_tweet_collector(ListSource(lines), KEYWORDS, DocStore(tmp_path / "t.log"), refs)
    assert summary.seen == 3
    assert summary.errors == 2
    assert summary.matched == 1


def test_replay_source_skips_blank_lines(tmp_path: Path) -> None:
    path = tmp_path / "c.jsonl"
    path.write_text('{"a": 1}\n\n   \n{"b": 2}\n', encoding="utf-8")
    assert list(ReplaySource(path)) == ['{"a": 1}', '{"b": 2}']


def test_url_map_first_seen() -> None:
    seen = UrlDedupMap()
    first = check_and_record_url(seen, "http://img/a.jpg")
    again = check_and_record_url(seen, "HTTP://IMG/a.jpg#frag")
    assert first.first_seen
    assert not again.first_seen
    assert again.seq == first.seq
    assert len(seen) == 1
    assert "http://img/a.jpg" in seen


def test_bounded_url_map_evicts_oldest() -> None:
    seen = UrlDedupMap(capacity=2)
    for url in ("u1", "u2", "u3"):
        assert check_and_record_url(seen, url).first_seen
    assert len(seen) == 2
    assert check_and_record_url(seen, "u1").first_seen


def test_url_map_rejects_empty_url() -> None:
    with pytest.raises(ValueError):
        UrlDedupMap().check_and_record("")


def test_image_collector_skips_repeated_urls(tmp_path: Path) -> None:
    refs: Queue[ImageRef] = Queue("image_refs")
    images: Queue[ImageRecord] = Queue("images")
    for tweet_id, url in (("1", "http://img/u1.jpg"), ("2", "http://img/u1.jpg"), ("3", "http://img/u2.jpg")):
        refs.push(ImageRef(tweet_id, url))
    refs.close()
    fetcher = MemoryFetcher({"http://img/u1.jpg": b"one", "http://img/u2.jpg": b"two"})

    summary = run_image_collector(refs, fetcher, tmp_path / "images", images)

    assert (summary.fetched, summary.skipped, summary.fetch_failures) == (2, 1, 0)
    records = drain(images)
    assert [record.tweet_id for record in records] == ["1", "3"]
    assert Path(records[0].local_path).read_bytes() == b"one"
    assert records[1].bytes_len == 3
    assert fetcher.calls == ["http://img/u1.jpg", "http://img/u2.jpg"]


def test_image_collector_records_fetch_failures(tmp_path: Path) -> None:
    refs: Queue[ImageRef] = Queue("image_refs")
    images: Queue[ImageRecord] = Queue("images")
    refs.push(ImageRef("1", "http://img/missing.jpg"))
    refs.close()
    fetcher = MemoryFetcher({})

    summary = run_image_collector(refs, fetcher, tmp_path / "images", images, retries=2, backoff=0.0)

    assert summary.fetch_failures == 1
    assert summary.fetched == 0
    assert len(fetcher.calls) == 3
    assert images.depth == 0


def test_parallel_image_collector_writes_each_url_once(tmp_path: Path) -> None:
    urls = [f"http://img/{n}.png" for n in range(50)]
    refs: Queue[ImageRef] = Queue("image_refs", capacity=512)
    images: Queue[ImageRecord] = Queue("images", capacity=512)
    for repeat in range(5):
        for n, url in enumerate(urls):
            refs.push(ImageRef(f"{repeat}-{n}", url))
    refs.close()
    fetcher = MemoryFetcher({url: url.encode() for url in urls})
    store_dir = tmp_path / "images"

    summary = run_image_collector(refs, fetcher, store_dir, images, workers=4)

    assert summary.fetched == 50
    assert summary.skipped == 200
    assert images.depth == 50
    assert sorted(path.name for path in store_dir.iterdir()) == sorted(image_filename(url) for url in urls)


def test_random_url_streams_fetch_each_url_once(tmp_path: Path) -> None:
    rng = np.random.default_rng(99)
    for stream in range(100):
        distinct = int(rng.integers(1, 40))
        urls = [f"http://img/{stream}/{n}.jpg" for n in range(distinct)]
        picks = [urls[int(i)] for i in rng.integers(0, distinct, size=int(rng.integers(distinct, 4 * distinct)))]
        picks.extend(urls)
        rng.shuffle(picks)
        refs: Queue[ImageRef] = Queue("image_refs", capacity=len(picks))
        images: Queue[ImageRecord] = Queue("images", capacity=len(picks))
        for n, url in enumerate(picks):
            refs.push(ImageRef(str(n), url))
        refs.close()
        store_dir = tmp_path / str(stream)

        summary = run_image_collector(
            refs, MemoryFetcher({url: url.encode() for url in urls}), store_dir, images, workers=int(rng.integers(1, 5))
        )

        assert summary.fetched == distinct
        assert summary.skipped == len(picks) - distinct
        assert sorted(record.url for record in drain(images)) == sorted(urls)
        assert len(list(store_dir.iterdir())) == distinct
