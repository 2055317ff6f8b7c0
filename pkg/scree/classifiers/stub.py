from __future__ import annotations

import math
import time

import numpy as np

from scree.dedup import DimensionMismatchError, FeatureExtractor, FeatureVector
from scree.models import DEFAULT_DECISION_THRESHOLD, TASK_LABELS, ImageRecord


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    exp_z = math.exp(z)
    return exp_z / (1.0 + exp_z)


class StubClassifier:
    id = "stub"

    def __init__(
        self,
        task: str,
        weights: np.ndarray,
        extractor: FeatureExtractor | None = None,
        bias: float = 0.0,
        threshold: float = DEFAULT_DECISION_THRESHOLD,
        synthetic_cost: float = 0.0,
    ) -> None:
        if task not in TASK_LABELS:
            raise ValueError(f"unknown classification task: {task}")
        self.task = task
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise ValueError("weights must be a 1-D vector")
        if extractor is not None and extractor.dim != self.weights.shape[0]:
            raise DimensionMismatchError(self.weights.shape[0], extractor.dim)
        self.extractor = extractor
        self.bias = bias
        self.threshold = threshold
        self.synthetic_cost = synthetic_cost

    @classmethod
    def seeded(
        cls,
        task: str,
        dim: int,
        seed: int = 0,
        extractor: FeatureExtractor | None = None,
        bias: float = 0.0,
        threshold: float = DEFAULT_DECISION_THRESHOLD,
        synthetic_cost: float = 0.0,
    ) -> "StubClassifier":
        rng = np.random.default_rng(seed)
        weights = rng.standard_normal(dim) / math.sqrt(dim)
        return cls(task, weights, extractor, bias, threshold, synthetic_cost)

    def score_vector(self, fv: FeatureVector) -> float:
        if fv.dim != self.weights.shape[0]:
            raise DimensionMismatchError(self.weights.shape[0], fv.dim)
        if self.synthetic_cost > 0:
            time.sleep(self.synthetic_cost)
        z = float(np.dot(self.weights, fv.values)) + self.bias
        return sigmoid(z)

    def score(self, record: ImageRecord) -> float:
        if self.extractor is None:
            raise ValueError("stub classifier needs a feature extractor to score images")
        return self.score_vector(self.extractor.extract(record))
