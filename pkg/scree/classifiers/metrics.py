from __future__ import annotations

from collections import Counter
import csv
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable, Sequence

from scree.dedup import mcc
from scree.models import ConfusionMatrix, ScreeError


class EvaluationError(ScreeError):
    def __init__(
        self,
        message: str,
        missing_gold: Sequence[str] = (),
        missing_predictions: Sequence[str] = (),
        duplicates: Sequence[str] = (),
    ) -> None:
        super().__init__(message)
        self.missing_gold = list(missing_gold)
        self.missing_predictions = list(missing_predictions)
        self.duplicates = list(duplicates)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict[str, float]:
        return {
            "precision": round_half_up(self.precision),
            "recall": round_half_up(self.recall),
            "f1": round_half_up(self.f1),
        }


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    positive: ClassScores
    negative: ClassScores
    macro: ClassScores
    mcc: float
    positive_label: str = "positive"
    negative_label: str = "negative"
    support_positive: int = 0
    support_negative: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": round_half_up(self.accuracy),
            "mcc": round_half_up(self.mcc),
            "classes": {
                self.positive_label: {**self.positive.to_dict(), "support": self.support_positive},
                self.negative_label: {**self.negative.to_dict(), "support": self.support_negative},
            },
            "macro": self.macro.to_dict(),
        }


def round_half_up(value: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def _class_scores(tp: int, fp: int, fn: int) -> ClassScores:
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassScores(precision * 100, recall * 100, f1 * 100)


def metrics_from_confusion(
    cm: ConfusionMatrix,
    positive_label: str = "positive",
    negative_label: str = "negative",
) -> MetricsReport:
    if cm.total == 0:
        raise EvaluationError("cannot score an empty confusion matrix")
    positive = _class_scores(cm.tp, cm.fp, cm.fn)
    negative = _class_scores(cm.tn, cm.fn, cm.fp)
    macro = ClassScores(
        (positive.precision + negative.precision) / 2,
        (positive.recall + negative.recall) / 2,
        (positive.f1 + negative.f1) / 2,
    )
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total * 100,
        positive=positive,
        negative=negative,
        macro=macro,
        mcc=mcc(cm) * 100,
        positive_label=positive_label,
        negative_label=negative_label,
        support_positive=cm.tp + cm.fn,
        support_negative=cm.tn + cm.fp,
    )


def _duplicated(ids: Iterable[str]) -> list[str]:
    return sorted(item for item, count in Counter(ids).items() if count > 1)


def evaluate(
    predictions: Sequence[tuple[str, str]],
    gold: Sequence[tuple[str, str]],
    positive_label: str = "landslide",
) -> ConfusionMatrix:
    """Strict join of predicted and gold labels on id; anything unmatched is an error."""
    duplicates = _duplicated(item_id for item_id, _ in predictions) + _duplicated(
        item_id for item_id, _ in gold
    )
    if duplicates:
        raise EvaluationError(
            f"repeated ids: {', '.join(duplicates[:10])}", duplicates=duplicates
        )
    gold_labels = dict(gold)
    predicted_labels = dict(predictions)
    missing_gold = sorted(set(predicted_labels) - set(gold_labels))
    missing_predictions = sorted(set(gold_labels) - set(predicted_labels))
    if missing_gold or missing_predictions:
        raise EvaluationError(
            f"{len(missing_gold)} predictions without gold labels, "
            f"{len(missing_predictions)} gold labels without predictions",
            missing_gold=missing_gold,
            missing_predictions=missing_predictions,
        )

    tp = fp = fn = tn = 0
    for item_id, predicted in predicted_labels.items():
        actual_positive = gold_labels[item_id] == positive_label
        if predicted == positive_label:
            if actual_positive:
                tp += 1
            else:
                fp += 1
        elif actual_positive:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def lexicon_baseline(gold: Sequence[tuple[str, str]], positive_label: str = "landslide") -> ConfusionMatrix:
    positives = sum(1 for _, label in gold if label == positive_label)
    return ConfusionMatrix(tp=positives, fp=len(gold) - positives, fn=0, tn=0)


def load_labels(path: Path) -> list[tuple[str, str]]:
    labels: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row or not row[0].strip():
                continue
            if line_no == 1 and [cell.strip().lower() for cell in row[:2]] == ["id", "label"]:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{line_no}: expected id,label")
            labels.append((row[0].strip(), row[1].strip()))
    return labels


def format_table(report: MetricsReport) -> str:
    rows = [
        (report.positive_label, report.positive),
        (report.negative_label, report.negative),
        ("macro avg", report.macro),
    ]
    width = max(len(name) for name, _ in rows)
    lines = [f"{'class'.ljust(width)}  {'precision':>9}  {'recall':>7}  {'f1':>7}"]
    for name, scores in rows:
        lines.append(
            f"{name.ljust(width)}  {round_half_up(scores.precision):>9.2f}"
            f"  {round_half_up(scores.recall):>7.2f}  {round_half_up(scores.f1):>7.2f}"
        )
    lines.append(f"{'accuracy'.ljust(width)}  {round_half_up(report.accuracy):>9.2f}")
    lines.append(f"{'mcc'.ljust(width)}  {round_half_up(report.mcc):>9.2f}")
    return "\n".join(lines)
