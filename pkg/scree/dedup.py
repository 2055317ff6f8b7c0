from __future__ import annotations

import csv
from dataclasses import dataclass, field
import hashlib
import logging
import math
from pathlib import Path
import struct
import threading
from typing import Iterable, Protocol, Sequence

import numpy as np

from scree.models import ConfusionMatrix, DuplicateVerdict, ImageRecord, ScreeError

DEFAULT_DIMENSION = 2048
DEFAULT_THRESHOLD = 7.1
SCAN_CHUNK_ROWS = 1024

# Index file: magic, u16 version, u32 dim, then (u32 id length, id, dim x float32) records.
# Vectors are float64 in memory.
INDEX_MAGIC = b"SCFI"
INDEX_VERSION = 1
INDEX_HEADER = struct.Struct("<4sHI")
ID_LENGTH = struct.Struct("<I")

logger = logging.getLogger(__name__)


class DimensionMismatchError(ScreeError):
    def __init__(self, expected: int, actual: int) -> None:
        super().__init__(f"dimension mismatch: {expected} != {actual}")
        self.expected = expected
        self.actual = actual


class DuplicateFeatureIdError(ScreeError):
    pass


class MissingFeatureError(ScreeError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureVector:
    owner_id: str
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError(f"feature vector must be 1-D and non-empty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"feature vector for {self.owner_id!r} has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def l2_distance(a: FeatureVector, b: FeatureVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatchError(a.dim, b.dim)
    diff = a.values - b.values
    return float(np.sqrt(np.dot(diff, diff)))


class FeatureIndex:
    def __init__(self, dim: int = DEFAULT_DIMENSION, path: Path | None = None) -> None:
        if dim < 1:
            raise ValueError(f"dimension must be >= 1, got {dim}")
        self.dim = dim
        self.path = path
        self._ids: list[str] = []
        self._positions: dict[str, int] = {}
        self._matrix = np.empty((0, dim), dtype=np.float64)
        self._size = 0
        self._lock = threading.Lock()
        self._file = None
        if path is not None:
            self._open(path)

    def __len__(self) -> int:
        return self._size

    @property
    def size(self) -> int:
        return self._size

    def __contains__(self, owner_id: object) -> bool:
        return owner_id in self._positions

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def vector(self, owner_id: str) -> FeatureVector:
        position = self._positions.get(owner_id)
        if position is None:
            raise MissingFeatureError(f"no feature for id {owner_id}")
        return FeatureVector(owner_id, self._matrix[position].copy())

    def _grow(self, needed: int) -> None:
        capacity = self._matrix.shape[0]
        if needed <= capacity:
            return
        new_capacity = max(needed, capacity * 2, 64)
        grown = np.empty((new_capacity, self.dim), dtype=np.float64)
        grown[: self._size] = self._matrix[: self._size]
        self._matrix = grown

    def _append(self, owner_id: str, values: np.ndarray) -> None:
        self._grow(self._size + 1)
        self._matrix[self._size] = values
        self._positions[owner_id] = self._size
        self._ids.append(owner_id)
        self._size += 1

    def insert(self, owner_id: str, fv: FeatureVector) -> None:
        if not owner_id:
            raise ValueError("feature id must be non-empty")
        if fv.dim != self.dim:
            raise DimensionMismatchError(self.dim, fv.dim)
        with self._lock:
            if owner_id in self._positions:
                raise DuplicateFeatureIdError(f"feature id already indexed: {owner_id}")
            self._append(owner_id, fv.values)
            if self._file is not None:
                self._file.write(_encode_record(owner_id, fv.values))
                self._file.flush()

    def nearest(self, fv: FeatureVector) -> tuple[str, float] | None:
        """Nearest entry and its distance; the earliest inserted entry wins ties."""
        if fv.dim != self.dim:
            raise DimensionMismatchError(self.dim, fv.dim)
        with self._lock:
            size = self._size
            matrix = self._matrix
        if size == 0:
            return None
        query = fv.values
        best_row = -1
        best_sq = math.inf
        for start in range(0, size, SCAN_CHUNK_ROWS):
            chunk = matrix[start : min(start + SCAN_CHUNK_ROWS, size)] - query
            squared = np.einsum("ij,ij->i", chunk, chunk)
            row = int(np.argmin(squared))
            if squared[row] < best_sq:
                best_sq = float(squared[row])
                best_row = start + row
        return self._ids[best_row], math.sqrt(best_sq)

    def _open(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists() and path.stat().st_size > 0:
            dim, records, valid_end = read_feature_file(path)
            if dim != self.dim:
                raise DimensionMismatchError(self.dim, dim)
            for owner_id, values in records:
                if owner_id in self._positions:
                    logger.warning("%s: ignoring repeated id %s", path, owner_id)
                    continue
                self._append(owner_id, values)
            if valid_end < path.stat().st_size:
                logger.warning("%s: dropping torn trailing feature record", path)
                with open(path, "r+b") as handle:
                    handle.truncate(valid_end)
            logger.info("%s: loaded %d features", path, self._size)
        else:
            with open(path, "wb") as handle:
                handle.write(INDEX_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, self.dim))
        self._file = open(path, "ab")

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


def _encode_record(owner_id: str, values: np.ndarray) -> bytes:
    raw_id = owner_id.encode("utf-8")
    return ID_LENGTH.pack(len(raw_id)) + raw_id + values.astype("<f4").tobytes()


def read_feature_file(path: Path) -> tuple[int, list[tuple[str, np.ndarray]], int]:
    data = path.read_bytes()
    if len(data) < INDEX_HEADER.size:
        raise ScreeError(f"{path}: truncated feature index header")
    magic, version, dim = INDEX_HEADER.unpack_from(data, 0)
    if magic != INDEX_MAGIC or version != INDEX_VERSION:
        raise ScreeError(f"{path}: not a feature index (magic {magic!r}, v{version})")
    vector_bytes = dim * 4
    records: list[tuple[str, np.ndarray]] = []
    pos = INDEX_HEADER.size
    while pos + ID_LENGTH.size <= len(data):
        (id_length,) = ID_LENGTH.unpack_from(data, pos)
        end = pos + ID_LENGTH.size + id_length + vector_bytes
        if end > len(data):
            break
        id_start = pos + ID_LENGTH.size
        owner_id = data[id_start : id_start + id_length].decode("utf-8")
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=id_start + id_length)
        records.append((owner_id, values.astype(np.float64)))
        pos = end
    return dim, records, pos


def write_feature_file(path: Path, dim: int, entries: Iterable[tuple[str, np.ndarray]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(INDEX_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, dim))
        for owner_id, values in entries:
            if len(values) != dim:
                raise DimensionMismatchError(dim, len(values))
            handle.write(_encode_record(owner_id, np.asarray(values)))


def find_duplicate(index: FeatureIndex, fv: FeatureVector, threshold: float) -> DuplicateVerdict:
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    found = index.nearest(fv)
    if found is None:
        return DuplicateVerdict(is_duplicate=False)
    ref_id, distance = found
    if distance <= threshold:
        return DuplicateVerdict(is_duplicate=True, ref_id=ref_id, distance=distance)
    return DuplicateVerdict(is_duplicate=False)


def insert_feature(index: FeatureIndex, owner_id: str, fv: FeatureVector) -> None:
    index.insert(owner_id, fv)


class FeatureExtractor(Protocol):
    id: str
    dim: int

    def extract(self, record: ImageRecord) -> FeatureVector: ...


class StubExtractor:
    id = "stub"

    def __init__(self, dim: int = DEFAULT_DIMENSION) -> None:
        self.dim = dim

    def extract_bytes(self, owner_id: str, data: bytes) -> FeatureVector:
        seed = int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")
        rng = np.random.default_rng(seed)
        return FeatureVector(owner_id, rng.standard_normal(self.dim, dtype=np.float32))

    def extract(self, record: ImageRecord) -> FeatureVector:
        data = Path(record.local_path).read_bytes()
        return self.extract_bytes(record.image_id, data)


class PrecomputedExtractor:
    id = "precomputed"

    def __init__(self, path: Path) -> None:
        dim, records, _ = read_feature_file(path)
        self.dim = dim
        self.path = path
        self._vectors = {owner_id: values for owner_id, values in records}
        logger.info("loaded %d precomputed features from %s", len(self._vectors), path)

    def extract(self, record: ImageRecord) -> FeatureVector:
        values = self._vectors.get(record.image_id)
        if values is None:
            values = self._vectors.get(record.url)
        if values is None:
            raise MissingFeatureError(
                f"no precomputed feature for image {record.image_id} ({record.url})"
            )
        return FeatureVector(record.image_id, values)


class DuplicateFilter:
    task = "duplicate"

    def __init__(
        self,
        extractor: FeatureExtractor,
        index: FeatureIndex,
        threshold: float = DEFAULT_THRESHOLD,
    ) -> None:
        if threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {threshold}")
        if extractor.dim != index.dim:
            raise DimensionMismatchError(index.dim, extractor.dim)
        self.extractor = extractor
        self.index = index
        self.threshold = threshold
        self._lock = threading.Lock()

    def check(self, fv: FeatureVector) -> DuplicateVerdict:
        with self._lock:
            verdict = find_duplicate(self.index, fv, self.threshold)
            if not verdict.is_duplicate and fv.owner_id not in self.index:
                self.index.insert(fv.owner_id, fv)
            return verdict

    def process(self, record: ImageRecord) -> DuplicateVerdict:
        return self.check(self.extractor.extract(record))


def mcc(cm: ConfusionMatrix) -> float:
    denominator = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if denominator == 0:
        return 0.0
    value = (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denominator)
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class LabeledPair:
    distance: float
    is_duplicate: bool

    def __post_init__(self) -> None:
        if not math.isfinite(self.distance) or self.distance < 0:
            raise ValueError(f"pair distance must be finite and >= 0, got {self.distance}")


@dataclass(frozen=True)
class ThresholdTuneResult:
    best_threshold: float
    best_mcc: float
    curve: list[tuple[float, float]] = field(default_factory=list)


def threshold_grid(t_min: float = 0.0, t_max: float = 12.0, step: float = 0.1) -> list[float]:
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    if t_max < t_min:
        raise ValueError(f"empty threshold range [{t_min}, {t_max}]")
    count = int(math.floor((t_max - t_min) / step + 1e-9)) + 1
    return [round(t_min + index * step, 10) for index in range(count)]


def confusion_at(pairs: Sequence[LabeledPair], threshold: float) -> ConfusionMatrix:
    tp = fp = fn = tn = 0
    for pair in pairs:
        predicted = pair.distance <= threshold
        if predicted and pair.is_duplicate:
            tp += 1
        elif predicted:
            fp += 1
        elif pair.is_duplicate:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def tune_threshold(
    pairs: Sequence[LabeledPair],
    t_min: float = 0.0,
    t_max: float = 12.0,
    step: float = 0.1,
) -> ThresholdTuneResult:
    """Grid search for the threshold with the highest MCC; ties keep the smallest threshold."""
    if not pairs:
        raise ValueError("threshold tuning needs at least one labeled pair")
    grid = threshold_grid(t_min, t_max, step)
    positives = np.sort(np.array([p.distance for p in pairs if p.is_duplicate], dtype=np.float64))
    negatives = np.sort(np.array([p.distance for p in pairs if not p.is_duplicate], dtype=np.float64))
    thresholds = np.array(grid, dtype=np.float64)
    tp_counts = np.searchsorted(positives, thresholds, side="right")
    fp_counts = np.searchsorted(negatives, thresholds, side="right")

    curve: list[tuple[float, float]] = []
    best_threshold = grid[0]
    best_mcc = -math.inf
    for threshold, tp, fp in zip(grid, tp_counts.tolist(), fp_counts.tolist()):
        cm = ConfusionMatrix(tp=tp, fp=fp, fn=len(positives) - tp, tn=len(negatives) - fp)
        score = mcc(cm)
        curve.append((threshold, score))
        if score > best_mcc:
            best_threshold = threshold
            best_mcc = score
    return ThresholdTuneResult(best_threshold=best_threshold, best_mcc=best_mcc, curve=curve)


def _parse_flag(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in {"1", "true", "yes", "duplicate", "dup"}:
        return True
    if lowered in {"0", "false", "no", "not-duplicate", "non-duplicate"}:
        return False
    raise ValueError(f"not a duplicate flag: {value!r}")


def load_labeled_pairs(path: Path, max_distance: float | None = None) -> list[LabeledPair]:
    pairs: list[LabeledPair] = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or not row[0].strip():
                continue
            if line_no == 1 and row[0].strip().lower() == "distance":
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{line_no}: expected distance,is_duplicate")
            pair = LabeledPair(float(row[0]), _parse_flag(row[1]))
            if max_distance is not None and pair.distance > max_distance:
                dropped += 1
                continue
            pairs.append(pair)
    if dropped:
        logger.info("dropped %d pairs farther than %s", dropped, max_distance)
    return pairs
