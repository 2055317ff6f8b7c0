from __future__ import annotations

from dataclasses import dataclass

from scree.classifiers.base import BinaryClassifier
from scree.classifiers.lookup import LookupClassifier
from scree.classifiers.stub import StubClassifier
from scree.config import CLASSIFIER_BACKENDS, ClassifierSettings
from scree.dedup import FeatureExtractor
from scree.models import TASK_LABELS

# Distinct stub weight vectors per task for the same configured seed.
TASK_SEED_OFFSETS = {"junk": 0, "landslide": 1}


@dataclass(frozen=True)
class ClassifierChoice:
    classifier: BinaryClassifier | None
    reason: str


class ClassifierRegistry:
    def __init__(self, extractor: FeatureExtractor | None = None) -> None:
        self.extractor = extractor

    def resolve(self, task: str, settings: ClassifierSettings) -> ClassifierChoice:
        if task not in TASK_LABELS:
            return ClassifierChoice(None, f"Unknown task: {task}")
        if settings.backend == "lookup":
            if settings.scores_path is None:
                return ClassifierChoice(None, f"Backend 'lookup' for {task} needs a scores file.")
            if not settings.scores_path.is_file():
                return ClassifierChoice(None, f"Scores file not found: {settings.scores_path}")
            classifier = LookupClassifier.from_file(task, settings.scores_path, settings.threshold)
            return ClassifierChoice(classifier, f"Loaded {len(classifier.scores)} {task} scores")
        if settings.backend == "stub":
            if self.extractor is None:
                return ClassifierChoice(None, "Backend 'stub' needs a feature extractor.")
            stub = StubClassifier.seeded(
                task,
                self.extractor.dim,
                seed=settings.seed + TASK_SEED_OFFSETS[task],
                extractor=self.extractor,
                bias=settings.bias,
                threshold=settings.threshold,
                synthetic_cost=settings.synthetic_cost,
            )
            return ClassifierChoice(stub, f"Seeded stub {task} classifier")
        return ClassifierChoice(None, f"Unknown backend: {settings.backend}")

    def supported_backend_ids(self) -> list[str]:
        return list(CLASSIFIER_BACKENDS)
