from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
import json
import logging
from pathlib import Path
import threading
import time
from typing import Any, Callable, Mapping, Union

from scree.broker import Broker, Channel, MessageQueue, QueueClosedError
from scree.cache import LruCache
from scree.classifiers import ClassifierRegistry, classify
from scree.collectors import (
    CollectorSummary,
    ImageCollectorSummary,
    ReplaySource,
    StreamSource,
    UrlDedupMap,
    load_keywords,
    run_image_collector,
    run_tweet_collector,
)
from scree.config import ConfigError, PipelineConfig
from scree.dedup import (
    DuplicateFilter,
    FeatureExtractor,
    FeatureIndex,
    PrecomputedExtractor,
    StubExtractor,
)
from scree.geo_text import (
    Gazetteer,
    GazetteerGeocoder,
    Geocoder,
    GeoTagger,
    NamedEntityRecognizer,
    NominatimGeocoder,
    classify_user_type,
    load_gazetteer,
)
from scree.media import HttpFetcher, ImageFetcher, OfflineFetcher
from scree.models import (
    TASK_LABELS,
    Classification,
    DuplicateVerdict,
    GeoTag,
    ImageRecord,
    ScreeError,
    UserType,
    tweet_from_doc,
)
from scree.storage import DocStore, Stores, open_stores

PROCESSOR_KINDS = ("duplicate", "junk", "landslide")
REFS_QUEUE = "image_refs"
IMAGES_QUEUE = "images"
EVENTS_CHANNEL = "events"
POLL_INTERVAL = 0.05
TOP_COUNTRIES = 10
REPORT_FILENAME = "run_report.json"

logger = logging.getLogger(__name__)

Verdict = Union[DuplicateVerdict, Classification]
Processor = Callable[[ImageRecord], Verdict]


class UnknownImageError(ScreeError):
    pass


class DuplicateVerdictError(ScreeError):
    pass


@dataclass(frozen=True)
class VerdictMessage:
    image_id: str
    kind: str
    verdict: Verdict | None = None
    error: str | None = None


@dataclass(frozen=True)
class PipelineEvent:
    kind: str
    subject: str
    detail: Mapping[str, Any] = field(default_factory=dict)


@dataclass
class PendingImage:
    record: ImageRecord
    verdicts: dict[str, Verdict] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.verdicts) + len(self.errors) == len(PROCESSOR_KINDS)


class JoinState:
    def __init__(self) -> None:
        self._pending: dict[str, PendingImage] = {}

    def __len__(self) -> int:
        return len(self._pending)

    def __contains__(self, image_id: object) -> bool:
        return image_id in self._pending

    def register(self, record: ImageRecord) -> None:
        if record.image_id in self._pending:
            raise DuplicateVerdictError(f"image {record.image_id} is already in flight")
        self._pending[record.image_id] = PendingImage(record)

    def add(self, message: VerdictMessage) -> PendingImage | None:
        """Record one verdict; returns the entry, removed from the state, once all kinds are in."""
        pending = self._pending.get(message.image_id)
        if pending is None:
            raise UnknownImageError(f"{message.kind} verdict for unknown image {message.image_id}")
        if message.kind not in PROCESSOR_KINDS:
            raise DuplicateVerdictError(f"unknown verdict kind {message.kind!r}")
        if message.kind in pending.verdicts or message.kind in pending.errors:
            raise DuplicateVerdictError(
                f"second {message.kind} verdict for image {message.image_id}"
            )
        if message.error is not None or message.verdict is None:
            pending.errors[message.kind] = message.error or "no verdict"
        else:
            pending.verdicts[message.kind] = message.verdict
        if not pending.complete:
            return None
        del self._pending[message.image_id]
        return pending


@dataclass
class ImageManagerSummary:
    dispatched: int = 0
    persisted: int = 0
    failed: int = 0
    skipped: int = 0
    unknown_verdicts: int = 0
    failures: list[str] = field(default_factory=list)


def image_manager(
    in_queue: MessageQueue[ImageRecord],
    processor_inputs: Mapping[str, MessageQueue[ImageRecord]],
    processor_outputs: Mapping[str, MessageQueue[VerdictMessage]],
    join: JoinState,
    image_index: DocStore,
    merge: Callable[[ImageRecord], ImageRecord] | None = None,
    events: Channel[PipelineEvent] | None = None,
    on_persist: Callable[[ImageRecord], None] | None = None,
) -> ImageManagerSummary:
    summary = ImageManagerSummary()
    open_outputs = dict(processor_outputs)

    def publish(kind: str, subject: str, **detail: Any) -> None:
        if events is not None:
            events.publish(PipelineEvent(kind, subject, detail))

    def finish(pending: PendingImage) -> None:
        image_id = pending.record.image_id
        if pending.errors:
            summary.failed += 1
            reasons = "; ".join(f"{kind}: {error}" for kind, error in sorted(pending.errors.items()))
            summary.failures.append(f"image {image_id}: {reasons}")
            publish("image_failed", image_id, errors=dict(pending.errors))
            return
        record = pending.record.with_verdicts(**pending.verdicts)
        try:
            if merge is not None:
                record = merge(record)
            image_index.put_doc(image_id, record.to_doc())
        except ScreeError as exc:
            summary.failed += 1
            summary.failures.append(f"image {image_id}: {exc}")
            logger.error("could not persist image %s: %s", image_id, exc)
            publish("image_failed", image_id, errors={"persist": str(exc)})
            return
        summary.persisted += 1
        if on_persist is not None:
            on_persist(record)
        publish("image_persisted", image_id, tweet_id=record.tweet_id)

    def accept(message: VerdictMessage) -> None:
        try:
            completed = join.add(message)
        except UnknownImageError as exc:
            summary.unknown_verdicts += 1
            logger.warning("dropping verdict: %s", exc)
            return
        except DuplicateVerdictError as exc:
            summary.failures.append(str(exc))
            logger.error("verdict contract violation: %s", exc)
            return
        if completed is not None:
            finish(completed)

    def collect(kind: str, timeout: float) -> bool:
        try:
            message = open_outputs[kind].pop(timeout)
        except QueueClosedError:
            del open_outputs[kind]
            return False
        if message is None:
            return False
        accept(message)
        return True

    def drain_available() -> int:
        drained = 0
        for kind in list(open_outputs):
            while kind in open_outputs and collect(kind, 0):
                drained += 1
        return drained

    def dispatch(record: ImageRecord) -> None:
        try:
            join.register(record)
        except DuplicateVerdictError as exc:
            summary.skipped += 1
            logger.warning("skipping image: %s", exc)
            return
        summary.dispatched += 1
        for queue in processor_inputs.values():
            # Keep joining verdicts while a processor queue is full.
            while not queue.push(record, timeout=POLL_INTERVAL):
                drain_available()

    input_open = True
    while input_open or open_outputs:
        progressed = drain_available()
        if input_open:
            try:
                record = in_queue.pop(timeout=0 if progressed else POLL_INTERVAL)
            except QueueClosedError:
                input_open = False
                for queue in processor_inputs.values():
                    queue.close()
                continue
            if record is not None:
                dispatch(record)
        elif not progressed and open_outputs:
            collect(next(iter(open_outputs)), POLL_INTERVAL)

    logger.info(
        "image manager done: dispatched=%d persisted=%d failed=%d",
        summary.dispatched,
        summary.persisted,
        summary.failed,
    )
    return summary


class _Countdown:
    def __init__(self, count: int, on_zero: Callable[[], None]) -> None:
        self._count = count
        self._on_zero = on_zero
        self._lock = threading.Lock()

    def done(self) -> None:
        with self._lock:
            self._count -= 1
            last = self._count == 0
        if last:
            self._on_zero()


def run_processor(
    kind: str,
    processor: Processor,
    in_queue: MessageQueue[ImageRecord],
    out_queue: MessageQueue[VerdictMessage],
) -> int:
    """Turn images into verdict messages until the input queue is closed; returns the count."""
    processed = 0
    while True:
        try:
            record = in_queue.pop(timeout=POLL_INTERVAL)
        except QueueClosedError:
            return processed
        if record is None:
            continue
        try:
            message = VerdictMessage(record.image_id, kind, verdict=processor(record))
        except Exception as exc:
            logger.exception("%s processor failed on image %s", kind, record.image_id)
            message = VerdictMessage(record.image_id, kind, error=str(exc) or type(exc).__name__)
        out_queue.push(message)
        processed += 1


class TweetTagger:
    def __init__(
        self,
        tweet_store: DocStore,
        geotagger: GeoTagger,
        ner: NamedEntityRecognizer,
        capacity: int = 10_000,
    ) -> None:
        self.tweet_store = tweet_store
        self.geotagger = geotagger
        self.ner = ner
        self.cache: LruCache[str, tuple[GeoTag, UserType]] = LruCache(capacity)

    def tag(self, tweet_id: str) -> tuple[GeoTag, UserType]:
        value, _ = self.cache.get_or_compute(tweet_id, lambda: self._compute(tweet_id))
        return value

    def _compute(self, tweet_id: str) -> tuple[GeoTag, UserType]:
        doc = self.tweet_store.get_doc(tweet_id)
        if doc is None:
            raise ScreeError(f"tweet {tweet_id} is not in the tweet index")
        tweet = tweet_from_doc(doc)
        return self.geotagger.geotag(tweet), classify_user_type(tweet.author_name, self.ner)

    def merge(self, record: ImageRecord) -> ImageRecord:
        geo, user_type = self.tag(record.tweet_id)
        return record.with_verdicts(geo=geo, user_type=user_type)


def _percent(part: int, whole: int) -> float:
    return part / whole * 100 if whole else 0.0


class ReportTally:
    def __init__(self) -> None:
        self.images = 0
        self.duplicate = Counter[str]()
        self.junk = Counter[str]()
        self.landslide = Counter[str]()
        self.funnel = Counter[str]()
        self.geotag_sources = Counter[str]()
        self.user_types = Counter[str]()
        self.landslide_by_user_type = Counter[str]()
        self.landslide_countries = Counter[str]()
        self._tweets: set[str] = set()
        self._lock = threading.Lock()

    def add(self, record: ImageRecord) -> None:
        with self._lock:
            self.images += 1
            if record.duplicate is not None:
                self.duplicate["duplicate" if record.duplicate.is_duplicate else "not-duplicate"] += 1
            if record.junk is not None:
                self.junk[record.junk.label] += 1
            if record.landslide is not None:
                self.landslide[record.landslide.label] += 1
            if record.tweet_id not in self._tweets:
                self._tweets.add(record.tweet_id)
                if record.geo is not None:
                    self.geotag_sources[record.geo.source_field] += 1
                if record.user_type is not None:
                    self.user_types[record.user_type.kind] += 1

            relevant = record.junk is not None and record.junk.positive
            duplicate = record.duplicate is not None and record.duplicate.is_duplicate
            if not relevant:
                self.funnel["junk"] += 1
            elif duplicate:
                self.funnel["duplicate"] += 1
            else:
                self.funnel["remaining"] += 1
                if record.landslide is not None and record.landslide.positive:
                    self.funnel["landslide"] += 1
                    if record.user_type is not None:
                        self.landslide_by_user_type[record.user_type.kind] += 1
                    if record.geo is not None and record.geo.country:
                        self.landslide_countries[record.geo.country] += 1

    def funnel_percentages(self) -> dict[str, float]:
        return {
            "junk_removed_pct": _percent(self.funnel["junk"], self.images),
            "duplicate_removed_pct": _percent(self.funnel["duplicate"], self.images),
            "remaining_pct": _percent(self.funnel["remaining"], self.images),
            "landslide_of_remaining_pct": _percent(self.funnel["landslide"], self.funnel["remaining"]),
        }

    def top_countries(self, limit: int = TOP_COUNTRIES) -> list[tuple[str, int]]:
        return sorted(self.landslide_countries.items(), key=lambda item: (-item[1], item[0]))[:limit]


@dataclass
class RunReport:
    ok: bool
    elapsed_s: float
    tweets: dict[str, int]
    images: dict[str, int]
    persisted: int
    failed_images: int
    verdicts: dict[str, dict[str, int]]
    funnel: dict[str, Any]
    geotag_sources: dict[str, int]
    user_types: dict[str, int]
    landslide_by_user_type: dict[str, int]
    top_countries: list[tuple[str, int]]
    queues: list[dict[str, Any]]
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["top_countries"] = [[country, count] for country, count in self.top_countries]
        return payload

    def write(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / REPORT_FILENAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def build_extractor(config: PipelineConfig) -> FeatureExtractor:
    if config.extractor == "precomputed":
        assert config.features_path is not None
        extractor: FeatureExtractor = PrecomputedExtractor(config.features_path)
        if extractor.dim != config.feature_dim:
            raise ConfigError(
                "feature_dim",
                f"{config.feature_dim} does not match precomputed features ({extractor.dim})",
            )
        return extractor
    return StubExtractor(config.feature_dim)


def build_fetcher(config: PipelineConfig) -> ImageFetcher:
    if config.fetcher == "http":
        return HttpFetcher()
    assert config.fixture_image_dir is not None
    return OfflineFetcher(config.fixture_image_dir)


def build_geocoder(config: PipelineConfig, gazetteer: Gazetteer) -> Geocoder:
    if config.geocoder == "nominatim":
        return NominatimGeocoder(config.geocoder_user_agent, config.geocoder_min_delay)
    return GazetteerGeocoder(gazetteer)


def build_processors(
    config: PipelineConfig, extractor: FeatureExtractor, index: FeatureIndex
) -> dict[str, Processor]:
    registry = ClassifierRegistry(extractor)
    processors: dict[str, Processor] = {
        "duplicate": DuplicateFilter(extractor, index, config.duplicate_threshold).process
    }
    for task in TASK_LABELS:
        choice = registry.resolve(task, getattr(config, task))
        if choice.classifier is None:
            raise ConfigError(f"{task}.backend", choice.reason)
        logger.info("%s classifier: %s", task, choice.reason)
        processors[task] = lambda record, classifier=choice.classifier: classify(classifier, record)
    return processors


class Pipeline:
    def __init__(
        self,
        config: PipelineConfig,
        source: StreamSource | None = None,
        fetcher: ImageFetcher | None = None,
        processors: Mapping[str, Processor] | None = None,
        tweet_tagger: TweetTagger | None = None,
    ) -> None:
        self.config = config
        self.broker = Broker(config.queue_capacity, dict(config.queue_capacities))
        self.events: Channel[PipelineEvent] = self.broker.channel(EVENTS_CHANNEL)
        self.join = JoinState()
        self.keywords = load_keywords(config.keywords_path)
        if source is None:
            if config.corpus_path is None:
                raise ConfigError("corpus_path", "required to replay a corpus")
            source = ReplaySource(config.corpus_path, config.replay_rate)
        self.source = source
        self.fetcher = fetcher if fetcher is not None else build_fetcher(config)
        self.stores: Stores = open_stores(config.store_dir, config.fsync)
        self.index: FeatureIndex | None = None
        try:
            if processors is None:
                extractor = build_extractor(config)
                self.index = FeatureIndex(extractor.dim, self.stores.feature_index_path)
                processors = build_processors(config, extractor, self.index)
            missing = set(PROCESSOR_KINDS) - set(processors)
            if missing:
                raise ConfigError("processors", f"missing {', '.join(sorted(missing))}")
            self.processors = dict(processors)
            if tweet_tagger is None:
                gazetteer = load_gazetteer(config.gazetteer_path) if config.gazetteer_path else Gazetteer([])
                ner = NamedEntityRecognizer.from_directory(
                    config.ner_dir, gazetteer, LruCache(config.ner_cache_capacity)
                )
                geotagger = GeoTagger(
                    build_geocoder(config, gazetteer), ner, LruCache(config.geo_cache_capacity)
                )
                tweet_tagger = TweetTagger(
                    self.stores.tweets, geotagger, ner, config.tweet_cache_capacity
                )
        except BaseException:
            self.close()
            raise
        self.tweet_tagger = tweet_tagger
        self.tally = ReportTally()
        self._failures: list[str] = []
        self._results: dict[str, Any] = {}
        self._lock = threading.Lock()

    def _fail(self, message: str) -> None:
        with self._lock:
            self._failures.append(message)

    def _stage(self, name: str, target: Callable[[], Any], on_exit: Callable[[], None]) -> threading.Thread:
        def run() -> None:
            try:
                result = target()
                with self._lock:
                    self._results[name] = result
            except Exception as exc:
                logger.exception("stage %s crashed", name)
                self._fail(f"stage {name} crashed: {exc}")
            finally:
                on_exit()
                self.events.publish(PipelineEvent("stage_finished", name))

        return threading.Thread(target=run, name=f"scree-{name}", daemon=True)

    def run(self) -> RunReport:
        config = self.config
        started = time.monotonic()
        refs = self.broker.queue(REFS_QUEUE)
        images = self.broker.queue(IMAGES_QUEUE)
        inputs = {kind: self.broker.queue(f"{kind}_in") for kind in PROCESSOR_KINDS}
        outputs = {kind: self.broker.queue(f"{kind}_out") for kind in PROCESSOR_KINDS}
        workers = {
            "duplicate": config.duplicate_workers,
            "junk": config.junk_workers,
            "landslide": config.landslide_workers,
        }

        threads = [
            self._stage(
                "tweet_collector",
                lambda: run_tweet_collector(self.source, self.keywords, self.stores.tweets, refs),
                refs.close,
            ),
            self._stage(
                "image_collector",
                lambda: run_image_collector(
                    refs,
                    self.fetcher,
                    config.image_dir,
                    images,
                    UrlDedupMap(config.url_map_capacity),
                    workers=config.collector_workers,
                    retries=config.fetch_retries,
                    backoff=config.fetch_backoff,
                ),
                images.close,
            ),
            self._stage(
                "image_manager",
                lambda: image_manager(
                    images,
                    inputs,
                    outputs,
                    self.join,
                    self.stores.images,
                    merge=self.tweet_tagger.merge if self.tweet_tagger else None,
                    events=self.events,
                    on_persist=self.tally.add,
                ),
                self._after_image_manager,
            ),
        ]
        for kind in PROCESSOR_KINDS:
            countdown = _Countdown(workers[kind], outputs[kind].close)
            for index in range(workers[kind]):
                threads.append(
                    self._stage(
                        f"{kind}_{index}",
                        lambda kind=kind: run_processor(kind, self.processors[kind], inputs[kind], outputs[kind]),
                        countdown.done,
                    )
                )

        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        if not self.broker.is_drained() or len(self.join) > 0:
            self._fail(
                f"pipeline stopped with queued messages or {len(self.join)} images awaiting verdicts"
            )
        try:
            return self._report(dict(self._results), time.monotonic() - started)
        finally:
            self.close()

    def _after_image_manager(self) -> None:
        # Unblocks upstream and downstream workers when the manager exits early.
        with self._lock:
            finished = "image_manager" in self._results
        if finished:
            return
        self.broker.close_all()

    def _report(self, results: Mapping[str, Any], elapsed: float) -> RunReport:
        tweets: CollectorSummary = results.get("tweet_collector") or CollectorSummary()
        collected: ImageCollectorSummary = results.get("image_collector") or ImageCollectorSummary()
        manager: ImageManagerSummary = results.get("image_manager") or ImageManagerSummary()
        tally = self.tally
        failures = list(self._failures) + manager.failures
        return RunReport(
            ok=not failures,
            elapsed_s=elapsed,
            tweets=tweets.to_dict(),
            images={
                **collected.to_dict(),
                "dispatched": manager.dispatched,
                "unknown_verdicts": manager.unknown_verdicts,
            },
            persisted=manager.persisted,
            failed_images=manager.failed,
            verdicts={
                "duplicate": dict(tally.duplicate),
                "junk": dict(tally.junk),
                "landslide": dict(tally.landslide),
            },
            funnel={**dict(tally.funnel), **tally.funnel_percentages()},
            geotag_sources=dict(tally.geotag_sources),
            user_types=dict(tally.user_types),
            landslide_by_user_type=dict(tally.landslide_by_user_type),
            top_countries=tally.top_countries(),
            queues=[asdict(stats) for stats in self.broker.stats()],
            failures=failures,
        )

    def close(self) -> None:
        if self.index is not None:
            self.index.close()
        self.stores.close()


def run_pipeline(config: PipelineConfig, **overrides: Any) -> RunReport:
    return Pipeline(config, **overrides).run()
