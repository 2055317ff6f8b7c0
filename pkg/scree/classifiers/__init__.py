from __future__ import annotations

from scree.classifiers.base import BinaryClassifier, MissingScoreError, classify
from scree.classifiers.registry import ClassifierRegistry

__all__ = ["BinaryClassifier", "ClassifierRegistry", "MissingScoreError", "classify"]
