from __future__ import annotations

from typing import Protocol

from scree.models import Classification, ImageRecord, ScreeError


class MissingScoreError(ScreeError):
    def __init__(self, image_id: str) -> None:
        super().__init__(f"no score for image id {image_id}")
        self.image_id = image_id


class BinaryClassifier(Protocol):
    id: str
    task: str
    threshold: float

    def score(self, record: ImageRecord) -> float: ...


def classify(classifier: BinaryClassifier, record: ImageRecord) -> Classification:
    """Positive iff the positive-class probability reaches the classifier's threshold."""
    confidence = float(classifier.score(record))
    return Classification(
        task=classifier.task,
        confidence=confidence,
        positive=confidence >= classifier.threshold,
    )
