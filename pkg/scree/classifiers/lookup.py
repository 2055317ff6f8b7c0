from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Mapping

from scree.classifiers.base import MissingScoreError
from scree.models import DEFAULT_DECISION_THRESHOLD, TASK_LABELS, ImageRecord

logger = logging.getLogger(__name__)


def load_scores(path: Path) -> dict[str, float]:
    scores: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or not row[0].strip():
                continue
            if line_no == 1 and row[0].strip().lower() == "id":
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{line_no}: expected id,score")
            score = float(row[1])
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"{path}:{line_no}: score outside [0, 1]: {score}")
            scores[row[0].strip()] = score
    logger.info("loaded %d scores from %s", len(scores), path)
    return scores


class LookupClassifier:
    id = "lookup"

    def __init__(
        self,
        task: str,
        scores: Mapping[str, float],
        threshold: float = DEFAULT_DECISION_THRESHOLD,
    ) -> None:
        if task not in TASK_LABELS:
            raise ValueError(f"unknown classification task: {task}")
        self.task = task
        self.scores = dict(scores)
        self.threshold = threshold

    @classmethod
    def from_file(cls, task: str, path: Path, threshold: float = DEFAULT_DECISION_THRESHOLD) -> "LookupClassifier":
        return cls(task, load_scores(path), threshold)

    def score(self, record: ImageRecord) -> float:
        score = self.scores.get(record.image_id)
        if score is None:
            score = self.scores.get(record.url)
        if score is None:
            raise MissingScoreError(record.image_id)
        return score
