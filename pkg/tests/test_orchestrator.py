from __future__ import annotations

from collections import deque
from itertools import permutations
import json
from pathlib import Path
import random
import threading
import time
from typing import Iterator

import pytest

from scree.broker import MessageQueue, Queue, QueueClosedError, QueueStats
from scree.collectors import ListSource
from scree.config import ConfigError, config_from_dict, load_config
from scree.media import MemoryFetcher
from scree.models import Classification, DuplicateVerdict, GeoTag, ImageRecord, UserType, canonical_json
from scree.orchestrator import (
    PROCESSOR_KINDS,
    DuplicateVerdictError,
    JoinState,
    Pipeline,
    ReportTally,
    UnknownImageError,
    VerdictMessage,
    image_manager,
    run_pipeline,
    run_processor,
)
from scree.storage import DocStore
from scree.synth import generate_deployment

from conftest import tweet_doc


def record(n: int) -> ImageRecord:
    return ImageRecord(tweet_id=f"t{n}", url=f"http://img/{n}.jpg")


def not_duplicate(record: ImageRecord) -> DuplicateVerdict:
    return DuplicateVerdict(False)


def relevant(record: ImageRecord) -> Classification:
    return Classification("junk", 0.9, True)


def no_landslide(record: ImageRecord) -> Classification:
    return Classification("landslide", 0.2, False)


FAKE_PROCESSORS = {"duplicate": not_duplicate, "junk": relevant, "landslide": no_landslide}


def test_join_completes_after_all_kinds() -> None:
    join = JoinState()
    image = record(1)
    join.register(image)
    assert join.add(VerdictMessage(image.image_id, "junk", relevant(image))) is None
    assert join.add(VerdictMessage(image.image_id, "duplicate", not_duplicate(image))) is None
    done = join.add(VerdictMessage(image.image_id, "landslide", no_landslide(image)))
    assert done is not None and done.complete
    assert set(done.verdicts) == set(PROCESSOR_KINDS)
    assert image.image_id not in join
    assert len(join) == 0


def test_join_rejects_contract_violations() -> None:
    join = JoinState()
    image = record(1)
    join.register(image)
    with pytest.raises(DuplicateVerdictError):
        join.register(image)
    join.add(VerdictMessage(image.image_id, "junk", relevant(image)))
    with pytest.raises(DuplicateVerdictError):
        join.add(VerdictMessage(image.image_id, "junk", relevant(image)))
    with pytest.raises(UnknownImageError):
        join.add(VerdictMessage("nope", "junk", relevant(image)))


def test_join_counts_errors_as_verdicts() -> None:
    join = JoinState()
    image = record(1)
    join.register(image)
    join.add(VerdictMessage(image.image_id, "duplicate", error="boom"))
    join.add(VerdictMessage(image.image_id, "junk", relevant(image)))
    done = join.add(VerdictMessage(image.image_id, "landslide", no_landslide(image)))
    assert done is not None
    assert done.errors == {"duplicate": "boom"}


def test_run_processor_wraps_errors() -> None:
    inputs: Queue[ImageRecord] = Queue("junk_in")
    outputs: Queue[VerdictMessage] = Queue("junk_out")
    inputs.push(record(1))
    inputs.push(record(2))
    inputs.close()

    def picky(image: ImageRecord) -> Classification:
        if image.url.endswith("2.jpg"):
            raise ValueError("unreadable image")
        return relevant(image)

    assert run_processor("junk", picky, inputs, outputs) == 2
    first, second = outputs.pop(), outputs.pop()
    assert first.verdict == relevant(record(1)) and first.error is None
    assert second.verdict is None and second.error == "unreadable image"


def run_manager(tmp_path: Path, records: list[ImageRecord], processors: dict) -> tuple:
    images: Queue[ImageRecord] = Queue("images")
    inputs = {kind: Queue(f"{kind}_in", capacity=4) for kind in PROCESSOR_KINDS}
    outputs = {kind: Queue(f"{kind}_out", capacity=4) for kind in PROCESSOR_KINDS}

    def work(kind: str) -> None:
        run_processor(kind, processors[kind], inputs[kind], outputs[kind])
        outputs[kind].close()

    threads = [threading.Thread(target=work, args=(kind,)) for kind in PROCESSOR_KINDS]
    for thread in threads:
        thread.start()
    def feed() -> None:
        for item in records:
            images.push(item)
        images.close()

    feeder = threading.Thread(target=feed)
    feeder.start()
    store = DocStore(tmp_path / "images.log")
    persisted: list[ImageRecord] = []
    summary = image_manager(images, inputs, outputs, JoinState(), store, on_persist=persisted.append)
    feeder.join()
    for thread in threads:
        thread.join()
    return summary, store, persisted


def test_image_manager_persists_every_image(tmp_path: Path) -> None:
    records = [record(n) for n in range(50)]
    summary, store, persisted = run_manager(tmp_path, records, FAKE_PROCESSORS)
    assert (summary.dispatched, summary.persisted, summary.failed) == (50, 50, 0)
    assert store.count == 50
    assert [r.url for r in persisted] == [r.url for r in records]
    doc = store.get_doc(records[0].image_id)
    assert doc["junk"] == {"label": "relevant", "confidence": 0.9}
    assert doc["duplicate"]["is_duplicate"] is False
    store.close()


def test_image_manager_fails_images_with_processor_errors(tmp_path: Path) -> None:
    def flaky_landslide(image: ImageRecord) -> Classification:
        if image.url.endswith("/3.jpg"):
            raise RuntimeError("model crashed")
        return no_landslide(image)

    processors = {**FAKE_PROCESSORS, "landslide": flaky_landslide}
    summary, store, _ = run_manager(tmp_path, [record(n) for n in range(5)], processors)
    assert (summary.persisted, summary.failed) == (4, 1)
    assert record(3).image_id not in store
    assert "landslide: model crashed" in summary.failures[0]
    store.close()


def number_of(image: ImageRecord) -> int:
    return int(image.url.rsplit("/", 1)[1].split(".")[0])


def scored_duplicate(image: ImageRecord) -> DuplicateVerdict:
    n = number_of(image)
    if n % 3 == 0:
        return DuplicateVerdict(True, f"ref{n // 3}", (n % 7) / 2)
    return DuplicateVerdict(False)


def scored_junk(image: ImageRecord) -> Classification:
    n = number_of(image)
    return Classification("junk", (n % 10) / 10, n % 10 >= 5)


def scored_landslide(image: ImageRecord) -> Classification:
    n = number_of(image)
    return Classification("landslide", (n * 7 % 11) / 10, n * 7 % 11 >= 5)


SCORED_PROCESSORS = {"duplicate": scored_duplicate, "junk": scored_junk, "landslide": scored_landslide}


def merged_doc(image: ImageRecord) -> str:
    verdicts = {kind: processor(image) for kind, processor in SCORED_PROCESSORS.items()}
    return canonical_json(image.with_verdicts(**verdicts).to_doc())


def test_join_result_ignores_arrival_order() -> None:
    image = record(12)
    docs = set()
    for order in permutations(PROCESSOR_KINDS):
        join = JoinState()
        join.register(image)
        done = None
        for kind in order:
            done = join.add(VerdictMessage(image.image_id, kind, SCORED_PROCESSORS[kind](image)))
        assert done is not None
        docs.add(canonical_json(done.record.with_verdicts(**done.verdicts).to_doc()))
    assert docs == {merged_doc(image)}


def test_processor_delays_do_not_change_persisted_documents(tmp_path: Path) -> None:
    def delayed(kind: str, seed: int):
        rng = random.Random(seed)

        def process(image: ImageRecord):
            time.sleep(rng.random() * 0.001)
            return SCORED_PROCESSORS[kind](image)

        return process

    records = [record(n) for n in range(1000)]
    processors = {kind: delayed(kind, seed) for seed, kind in enumerate(PROCESSOR_KINDS)}
    summary, store, _ = run_manager(tmp_path, records, processors)
    assert (summary.persisted, summary.failed) == (1000, 0)
    for image in records:
        assert canonical_json(store.get_doc(image.image_id)) == merged_doc(image)
    store.close()


class ListQueue:
    def __init__(self, name: str) -> None:
        self.name = name
        self.items: deque = deque()
        self.closed = False
        self.pushed = 0

    def push(self, msg, timeout: float | None = None) -> bool:
        self.items.append(msg)
        self.pushed += 1
        return True

    def pop(self, timeout: float | None = None):
        if self.items:
            return self.items.popleft()
        if self.closed:
            raise QueueClosedError(f"queue '{self.name}' is closed")
        return None

    def close(self) -> None:
        self.closed = True

    def stats(self) -> QueueStats:
        return QueueStats(self.name, 0, len(self.items), self.pushed, self.pushed - len(self.items), self.closed)


def test_run_processor_takes_any_message_queue() -> None:
    inputs: MessageQueue[ImageRecord] = ListQueue("landslide_in")
    outputs: MessageQueue[VerdictMessage] = ListQueue("landslide_out")
    for n in range(3):
        inputs.push(record(n))
    inputs.close()
    assert run_processor("landslide", scored_landslide, inputs, outputs) == 3
    assert outputs.stats().depth == 3
    assert outputs.pop().verdict == scored_landslide(record(0))


def test_tally_funnel_and_countries() -> None:
    tally = ReportTally()
    person = UserType("person")
    org = UserType("organization")
    india = GeoTag(country="India", city="Ooty", source_field="text")
    nepal = GeoTag(country="Nepal", source_field="place")

    def add(n: int, relevant: bool, duplicate: bool, landslide: bool, geo: GeoTag, user: UserType, tweet: str) -> None:
        tally.add(
            ImageRecord(
                tweet_id=tweet,
                url=f"http://img/{n}.jpg",
                duplicate=DuplicateVerdict(True, "x", 0.0) if duplicate else DuplicateVerdict(False),
                junk=Classification("junk", 0.9 if relevant else 0.1, relevant),
                landslide=Classification("landslide", 0.9 if landslide else 0.1, landslide),
                geo=geo,
                user_type=user,
            )
        )

    add(1, False, False, True, india, person, "a")
    add(2, True, True, True, india, person, "a")
    add(3, True, False, True, nepal, org, "b")
    add(4, True, False, True, india, person, "c")
    add(5, True, False, True, nepal, person, "d")
    add(6, True, False, False, india, person, "e")
    add(7, True, False, True, india, org, "f")

    assert dict(tally.funnel) == {"junk": 1, "duplicate": 1, "remaining": 5, "landslide": 4}
    pct = tally.funnel_percentages()
    assert pct["junk_removed_pct"] == pytest.approx(100 / 7)
    assert pct["landslide_of_remaining_pct"] == pytest.approx(80.0)
    assert tally.top_countries() == [("India", 2), ("Nepal", 2)]
    assert dict(tally.landslide_by_user_type) == {"person": 2, "organization": 2}
    assert dict(tally.geotag_sources) == {"text": 4, "place": 2}
    assert sum(tally.user_types.values()) == 6


def test_empty_tally_percentages_are_zero() -> None:
    assert set(ReportTally().funnel_percentages().values()) == {0.0}


def small_config(tmp_path: Path, gazetteer_path: Path, ner_dir: Path):
    (tmp_path / "keywords.csv").write_text("landslide,en\n", encoding="utf-8")
    return config_from_dict(
        {
            "keywords_path": "keywords.csv",
            "fixture_image_dir": "fixtures",
            "store_dir": "store",
            "image_dir": "store/images",
            "gazetteer_path": str(gazetteer_path),
            "ner_dir": str(ner_dir),
        },
        tmp_path,
    )


def test_pipeline_with_injected_components(tmp_path: Path, gazetteer_path: Path, ner_dir: Path) -> None:
    config = small_config(tmp_path, gazetteer_path, ner_dir)
    docs = [
        tweet_doc("1", "landslide near Shimla", ["http://img/1.jpg", "http://img/2.jpg"], author="Ravi Sharma"),
        tweet_doc("2", "nice weather", ["http://img/3.jpg"]),
        tweet_doc("3", "landslide again", ["http://img/1.jpg"], place={"full_name": "Baguio"}),
    ]
    fetcher = MemoryFetcher({f"http://img/{n}.jpg": b"img%d" % n for n in range(1, 4)})
    pipeline = Pipeline(
        config,
        source=ListSource(json.dumps(doc) for doc in docs),
        fetcher=fetcher,
        processors=FAKE_PROCESSORS,
    )
    events = pipeline.events.subscribe()
    report = pipeline.run()

    assert report.ok, report.failures
    assert report.tweets == {"seen": 3, "matched": 2, "refs_pushed": 3, "errors": 0}
    assert (report.images["fetched"], report.images["skipped"]) == (2, 1)
    assert report.persisted == 2
    assert report.geotag_sources == {"text": 1}
    assert report.user_types == {"person": 1}
    assert report.verdicts["junk"] == {"relevant": 2}

    with DocStore(config.store_dir / "images.log") as store:
        docs_by_url = {doc["url"]: doc for _, doc in store.scan()}
    assert docs_by_url["http://img/1.jpg"]["geo"]["city"] == "Shimla"
    assert docs_by_url["http://img/2.jpg"]["user_type"] == "person"

    kinds = []
    while (event := events.receive(timeout=0.01)) is not None:
        kinds.append(event.kind)
    assert kinds.count("image_persisted") == 2
    assert kinds.count("stage_finished") == 6


class BrokenSource:
    def __iter__(self) -> Iterator[str]:
        yield json.dumps(tweet_doc("1", "landslide", ["http://img/1.jpg"]))
        raise OSError("stream dropped")


def test_crashed_stage_still_drains(tmp_path: Path, gazetteer_path: Path, ner_dir: Path) -> None:
    config = small_config(tmp_path, gazetteer_path, ner_dir)
    fetcher = MemoryFetcher({"http://img/1.jpg": b"one"})
    report = Pipeline(config, source=BrokenSource(), fetcher=fetcher, processors=FAKE_PROCESSORS).run()
    assert not report.ok
    assert any("tweet_collector crashed: stream dropped" in failure for failure in report.failures)
    assert report.persisted == 1


def test_pipeline_requires_all_processors(tmp_path: Path, gazetteer_path: Path, ner_dir: Path) -> None:
    config = small_config(tmp_path, gazetteer_path, ner_dir)
    with pytest.raises(ConfigError, match="landslide"):
        Pipeline(config, source=ListSource([]), processors={"duplicate": not_duplicate, "junk": relevant})


def check_funnel(report, counts, expected) -> None:
    assert report.ok, report.failures
    assert report.tweets == {
        "seen": counts.tweets,
        "matched": counts.matched_tweets,
        "refs_pushed": counts.refs,
        "errors": 0,
    }
    assert report.images["fetched"] == counts.images
    assert report.images["skipped"] == counts.reposts
    assert report.persisted == counts.images
    assert report.funnel["junk"] == counts.junk
    assert report.funnel["duplicate"] == counts.duplicate
    assert report.funnel["remaining"] == counts.remaining
    assert report.funnel["landslide"] == counts.landslide
    assert report.geotag_sources == expected["geotag_sources"]
    assert report.user_types == expected["user_types"]
    assert report.landslide_by_user_type == expected["landslide_by_user_type"]
    assert report.top_countries == [tuple(item) for item in expected["top_countries"]]


def test_deployment_funnel(deployment, tmp_path: Path) -> None:
    config = load_config(deployment.config_path).with_overrides(store_dir=tmp_path / "store")
    report = run_pipeline(config)
    check_funnel(report, deployment.counts, deployment.expected)
    assert report.funnel["junk_removed_pct"] == pytest.approx(76.0)
    assert report.funnel["duplicate_removed_pct"] == pytest.approx(9.0)
    assert report.funnel["remaining_pct"] == pytest.approx(15.0)

    path = report.write(tmp_path / "out")
    saved = json.loads(path.read_text(encoding="utf-8"))
    assert saved["persisted"] == deployment.counts.images
    assert all(queue["depth"] == 0 for queue in saved["queues"])


def test_rerun_over_same_store_marks_everything_duplicate(deployment, tmp_path: Path) -> None:
    config = load_config(deployment.config_path).with_overrides(store_dir=tmp_path / "store")
    run_pipeline(config)
    again = run_pipeline(config)
    assert again.ok, again.failures
    assert again.verdicts["duplicate"] == {"duplicate": deployment.counts.images}


@pytest.mark.slow
def test_full_size_funnel(tmp_path: Path) -> None:
    deployment = generate_deployment(tmp_path / "deployment", images=50_000, seed=3)
    config = load_config(deployment.config_path).with_overrides(store_dir=tmp_path / "store")
    report = run_pipeline(config)
    check_funnel(report, deployment.counts, deployment.expected)
    assert report.funnel["junk_removed_pct"] == pytest.approx(76.0)
    assert report.funnel["duplicate_removed_pct"] == pytest.approx(9.0)
    assert report.funnel["remaining_pct"] == pytest.approx(15.0)
    assert report.funnel["landslide_of_remaining_pct"] == pytest.approx(0.84)
