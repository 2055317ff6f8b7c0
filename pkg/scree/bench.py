from __future__ import annotations

import csv
from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
import re
import threading
import time
from typing import Any, Callable, Iterable, Protocol, Sequence

import numpy as np
from scipy.stats import kendalltau
from tqdm import tqdm

from scree.broker import Broker, QueueClosedError
from scree.cache import LruCache, NoCache
from scree.classifiers.stub import StubClassifier
from scree.dedup import (
    DEFAULT_THRESHOLD,
    DuplicateFilter,
    FeatureIndex,
    FeatureVector,
    StubExtractor,
)
from scree.geo_text import GeoPlace, GeoTagger, NamedEntityRecognizer, normalize_query
from scree.models import Classification, ScreeError, Tweet

TARGET_NAMES = ("duplicate_filter", "junk_filter", "landslide_detector", "geolocation_tagger")
CACHE_MODES = ("none", "cold", "warm")
DEFAULT_LOADS = tuple(2**n for n in range(13))
DEFAULT_REPEATS = 5
DEFAULT_SEED = 42
DEFAULT_BENCH_DIM = 256
DEFAULT_GEOCODER_DELAY = 0.01
DEFAULT_UNIQUE_KEYS = 16
CSV_COLUMNS = ("target", "load", "repeat", "latency_s", "throughput_ips", "status")
CSV_FILENAME = "bench.csv"
SUMMARY_FILENAME = "bench_summary.json"
POLL_INTERVAL = 0.01

logger = logging.getLogger(__name__)

LOAD_TERM = re.compile(r"^\s*(\d+)\s*(?:\^\s*(\d+))?\s*$")


class BenchError(ScreeError):
    pass


@dataclass(frozen=True)
class LoadPoint:
    target: str
    load: int
    repeat: int
    latency_s: float | None
    throughput_ips: float | None
    status: str = "ok"

    def __post_init__(self) -> None:
        if self.load < 1:
            raise ValueError(f"load must be >= 1, got {self.load}")

    @classmethod
    def measured(cls, target: str, load: int, repeat: int, latency_s: float) -> "LoadPoint":
        return cls(target, load, repeat, latency_s, load / max(latency_s, 1e-9))

    @classmethod
    def failed(cls, target: str, load: int, repeat: int, status: str) -> "LoadPoint":
        return cls(target, load, repeat, None, None, status)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class BenchTarget(Protocol):
    name: str

    def inputs(self, load: int, rng: np.random.Generator) -> list[Any]: ...

    def start(self, rng: np.random.Generator) -> Callable[[Any], Any]: ...


def _random_vectors(count: int, dim: int, rng: np.random.Generator, prefix: str) -> list[FeatureVector]:
    matrix = rng.standard_normal((count, dim), dtype=np.float32)
    return [FeatureVector(f"{prefix}{index}", row) for index, row in enumerate(matrix)]


class DuplicateFilterTarget:
    def __init__(
        self,
        dim: int = DEFAULT_BENCH_DIM,
        prefill: int = 0,
        threshold: float = DEFAULT_THRESHOLD,
    ) -> None:
        if prefill < 0:
            raise ValueError(f"prefill must be >= 0, got {prefill}")
        self.dim = dim
        self.prefill = prefill
        self.threshold = threshold
        self.name = "duplicate_filter" if prefill == 0 else f"duplicate_filter@{prefill}"

    def inputs(self, load: int, rng: np.random.Generator) -> list[FeatureVector]:
        return _random_vectors(load, self.dim, rng, "q")

    def start(self, rng: np.random.Generator) -> Callable[[FeatureVector], Any]:
        index = FeatureIndex(self.dim)
        for fv in _random_vectors(self.prefill, self.dim, rng, "p"):
            index.insert(fv.owner_id, fv)
        return DuplicateFilter(StubExtractor(self.dim), index, self.threshold).check


class ClassifierTarget:
    def __init__(self, task: str, dim: int = DEFAULT_BENCH_DIM, cost: float = 0.0, seed: int = 0) -> None:
        self.task = task
        self.dim = dim
        self.cost = cost
        self.seed = seed
        self.name = "junk_filter" if task == "junk" else "landslide_detector"

    def inputs(self, load: int, rng: np.random.Generator) -> list[FeatureVector]:
        return _random_vectors(load, self.dim, rng, "q")

    def start(self, rng: np.random.Generator) -> Callable[[FeatureVector], Classification]:
        classifier = StubClassifier.seeded(self.task, self.dim, self.seed, synthetic_cost=self.cost)

        def process(fv: FeatureVector) -> Classification:
            score = classifier.score_vector(fv)
            return Classification(self.task, score, score >= classifier.threshold)

        return process


class DelayedGeocoder:
    id = "delayed"

    def __init__(self, delay: float = DEFAULT_GEOCODER_DELAY) -> None:
        self.delay = delay
        self.calls = 0
        self._lock = threading.Lock()

    def _wait(self) -> None:
        with self._lock:
            self.calls += 1
        if self.delay > 0:
            time.sleep(self.delay)

    def forward(self, query: str) -> GeoPlace | None:
        self._wait()
        name = normalize_query(query)
        return GeoPlace(name=name, kind="city", country=f"country of {name}", city=name)

    def reverse(self, lat: float, lon: float) -> GeoPlace | None:
        self._wait()
        return None


class GeolocationTarget:
    def __init__(
        self,
        cache: str = "cold",
        delay: float = DEFAULT_GEOCODER_DELAY,
        unique_keys: int = DEFAULT_UNIQUE_KEYS,
    ) -> None:
        if cache not in CACHE_MODES:
            raise ValueError(f"unknown cache mode {cache!r}")
        if unique_keys < 1:
            raise ValueError(f"unique_keys must be >= 1, got {unique_keys}")
        self.cache = cache
        self.delay = delay
        self.unique_keys = unique_keys
        self.name = f"geolocation_tagger@{cache}"

    def _post(self, index: int, key: int) -> Tweet:
        return Tweet(id=f"bench-{index}", text="landslide", lang="en", place_name=f"place {key:04d}")

    def inputs(self, load: int, rng: np.random.Generator) -> list[Tweet]:
        keys = rng.permutation(np.arange(load) % self.unique_keys)
        return [self._post(index, int(key)) for index, key in enumerate(keys)]

    def start(self, rng: np.random.Generator) -> Callable[[Tweet], Any]:
        ner = NamedEntityRecognizer.from_directory(None)
        cache = NoCache() if self.cache == "none" else LruCache(max(self.unique_keys, 1))
        tagger = GeoTagger(DelayedGeocoder(self.delay), ner, cache)
        if self.cache == "warm":
            for key in range(self.unique_keys):
                tagger.geotag(self._post(-1, key))
        return tagger.geotag


def make_targets(
    name: str,
    dim: int = DEFAULT_BENCH_DIM,
    prefill: Sequence[int] = (0,),
    cost: float = 0.0,
    delay: float = DEFAULT_GEOCODER_DELAY,
    unique_keys: int = DEFAULT_UNIQUE_KEYS,
    caches: Sequence[str] = CACHE_MODES,
    seed: int = DEFAULT_SEED,
) -> list[BenchTarget]:
    if name == "duplicate_filter":
        return [DuplicateFilterTarget(dim, size) for size in prefill]
    if name == "junk_filter":
        return [ClassifierTarget("junk", dim, cost, seed)]
    if name == "landslide_detector":
        return [ClassifierTarget("landslide", dim, cost, seed)]
    if name == "geolocation_tagger":
        return [GeolocationTarget(mode, delay, unique_keys) for mode in caches]
    raise BenchError(f"unknown bench target '{name}' (expected one of {', '.join(TARGET_NAMES)})")


def parse_loads(text: str) -> list[int]:
    """Parse `2^0..2^12`, `1,2,4` or a mix of both into a list of loads."""
    loads: list[int] = []
    for part in text.split(","):
        if not part.strip():
            continue
        if ".." in part:
            low, high = part.split("..", 1)
            base_low, exp_low = _load_term(low)
            base_high, exp_high = _load_term(high)
            if exp_low is not None and exp_high is not None and base_low == base_high:
                loads.extend(base_low**n for n in range(exp_low, exp_high + 1))
                continue
            loads.extend(range(_term_value(base_low, exp_low), _term_value(base_high, exp_high) + 1))
            continue
        base, exponent = _load_term(part)
        loads.append(_term_value(base, exponent))
    if not loads or any(load < 1 for load in loads):
        raise ValueError(f"invalid load list: {text!r}")
    return loads


def _load_term(text: str) -> tuple[int, int | None]:
    match = LOAD_TERM.match(text)
    if match is None:
        raise ValueError(f"invalid load term: {text!r}")
    exponent = match.group(2)
    return int(match.group(1)), int(exponent) if exponent is not None else None


def _term_value(base: int, exponent: int | None) -> int:
    return base if exponent is None else base**exponent


@dataclass
class BurstResult:
    latency_s: float | None
    status: str
    outputs: list[Any] = field(default_factory=list)


def run_burst(
    processor: Callable[[Any], Any],
    items: Sequence[Any],
    timeout: float,
    rate: float | None = None,
    workers: int = 1,
) -> BurstResult:
    broker = Broker(default_capacity=max(len(items), 1))
    inbox = broker.queue("bench_in")
    outbox = broker.queue("bench_out")
    stop = threading.Event()
    errors: list[str] = []

    def work() -> None:
        while not stop.is_set():
            try:
                item = inbox.pop(timeout=POLL_INTERVAL)
            except QueueClosedError:
                return
            if item is None:
                continue
            try:
                outbox.push((True, processor(item)))
            except Exception as exc:
                logger.exception("bench processor failed")
                errors.append(str(exc))
                outbox.push((False, None))

    threads = [threading.Thread(target=work, name=f"scree-bench-{index}", daemon=True) for index in range(workers)]
    for thread in threads:
        thread.start()

    started = time.perf_counter()
    deadline = started + timeout
    for index, item in enumerate(items):
        if rate:
            delay = started + index / rate - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        inbox.push(item)
    inbox.close()

    outputs: list[Any] = []
    try:
        while len(outputs) < len(items):
            remaining = deadline - time.perf_counter()
            if remaining <= 0:
                return BurstResult(None, "timeout")
            message = outbox.pop(timeout=min(remaining, POLL_INTERVAL))
            if message is not None:
                outputs.append(message[1])
        latency = time.perf_counter() - started
    finally:
        stop.set()
        for thread in threads:
            thread.join()
    return BurstResult(latency, "error" if errors else "ok", outputs)


def run_bench(
    target: BenchTarget,
    loads: Iterable[int] = DEFAULT_LOADS,
    repeats: int = DEFAULT_REPEATS,
    seed: int = DEFAULT_SEED,
    timeout: float = 60.0,
    rate: float | None = None,
    workers: int = 1,
    progress: bool = False,
) -> list[LoadPoint]:
    loads = list(loads)
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    points: list[LoadPoint] = []
    with tqdm(total=len(loads) * repeats, desc=target.name, disable=not progress, leave=False) as bar:
        for load in loads:
            for repeat in range(repeats):
                rng = np.random.default_rng([seed, load, repeat])
                processor = target.start(rng)
                items = target.inputs(load, rng)
                result = run_burst(processor, items, timeout, rate, workers)
                if result.latency_s is None or result.status != "ok":
                    logger.warning("%s load %d repeat %d: %s", target.name, load, repeat, result.status)
                    points.append(LoadPoint.failed(target.name, load, repeat, result.status))
                else:
                    points.append(LoadPoint.measured(target.name, load, repeat, result.latency_s))
                bar.update()
    return points


def _format(value: float | None) -> str:
    return "" if value is None else repr(value)


def summarize(points: Sequence[LoadPoint]) -> dict[str, Any]:
    by_target: dict[str, dict[int, list[LoadPoint]]] = {}
    for point in points:
        by_target.setdefault(point.target, {}).setdefault(point.load, []).append(point)

    summary: dict[str, Any] = {}
    for target, by_load in by_target.items():
        rows = []
        for load in sorted(by_load):
            measured = [point for point in by_load[load] if point.ok]
            latencies = np.array([point.latency_s for point in measured], dtype=np.float64)
            throughputs = np.array([point.throughput_ips for point in measured], dtype=np.float64)
            rows.append(
                {
                    "load": load,
                    "repeats": len(by_load[load]),
                    "failed": len(by_load[load]) - len(measured),
                    "latency_mean": float(latencies.mean()) if measured else None,
                    "latency_std": float(latencies.std()) if measured else None,
                    "throughput_mean": float(throughputs.mean()) if measured else None,
                    "throughput_std": float(throughputs.std()) if measured else None,
                }
            )
        summary[target] = {"loads": rows, "latency_trend": latency_trend(rows)}
    return summary


def latency_trend(rows: Sequence[dict[str, Any]]) -> float | None:
    pairs = [(row["load"], row["latency_mean"]) for row in rows if row["latency_mean"] is not None]
    if len(pairs) < 2:
        return None
    tau, _ = kendalltau([load for load, _ in pairs], [latency for _, latency in pairs])
    return None if math.isnan(tau) else float(tau)


def emit_report(points: Sequence[LoadPoint], directory: Path) -> tuple[Path, Path]:
    """Write `bench.csv` (one row per repeat) and `bench_summary.json`."""
    if not points:
        raise BenchError("no bench points to report")
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / CSV_FILENAME
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for point in points:
            writer.writerow(
                [
                    point.target,
                    point.load,
                    point.repeat,
                    _format(point.latency_s),
                    _format(point.throughput_ips),
                    point.status,
                ]
            )
    summary_path = directory / SUMMARY_FILENAME
    summary_path.write_text(json.dumps(summarize(points), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, summary_path
