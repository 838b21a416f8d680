"""Top-K accuracy, confusion matrices and the per-epoch metrics report"""

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from beamcast.beamnet import predict_topk
from beamcast.errors import ConfigurationError, EvaluationError
from beamcast.path_utils import atomic_write_text

logger = logging.getLogger(__name__)

DEFAULT_TOPK = (1, 3, 5)
CSV_COLUMNS = ("epoch", "loss", "top1", "top3", "top5", "lr", "seconds")


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Boolean per sample: true label among the k highest logits"""
    ranked = predict_topk(logits, k)
    return np.any(ranked == np.asarray(labels)[:, None], axis=1)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k_list: Any = DEFAULT_TOPK) -> dict[int, float]:
    """
    Fraction of samples whose label is in the top-k predictions, for each k.

    Values of k larger than the number of classes are skipped.

    Raises:
        EvaluationError: if there are no samples
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EvaluationError("Cannot evaluate an empty split")
    num_classes = logits.shape[1]
    return {int(k): float(np.mean(topk_hits(logits, labels, int(k)))) for k in k_list if int(k) <= num_classes}


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> np.ndarray:
    """counts[true, predicted] as int64 [Q, Q]"""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    flat = np.bincount(labels * num_classes + predictions, minlength=num_classes * num_classes)
    return flat.reshape(num_classes, num_classes)


@dataclass
class ConfusionSummary:
    """Row-normalized sub-matrix over the n most populous true classes"""

    classes: np.ndarray  # true-class indices, by descending count
    percentages: np.ndarray  # [n, n], each row sums to <= 100
    outside: np.ndarray  # [n] percent of each row predicted outside the sub-matrix
    counts: np.ndarray  # [n] samples per listed class


def confusion_topn(matrix: np.ndarray, n: int) -> ConfusionSummary:
    """
    Restrict a confusion matrix to its n most populous true classes.

    Rows are ordered by descending true-class count (lower class index first
    on ties); entries are percentages of the row total. Predictions that land
    outside the selected classes are reported in `outside`.
    """
    matrix = np.asarray(matrix)
    num_classes = matrix.shape[0]
    if not 1 <= n <= num_classes:
        raise ConfigurationError(f"n must be in [1, {num_classes}], got {n}", "confusion_topn")
    row_totals = matrix.sum(axis=1)
    classes = np.argsort(-row_totals, kind="stable")[:n]
    sub = matrix[np.ix_(classes, classes)].astype(np.float64)
    totals = row_totals[classes].astype(np.float64)
    safe = np.where(totals > 0, totals, 1.0)[:, None]
    percentages = np.where(totals[:, None] > 0, 100.0 * sub / safe, 0.0)
    outside = np.where(totals > 0, 100.0 - percentages.sum(axis=1), 0.0)
    return ConfusionSummary(classes, percentages, outside, row_totals[classes])


def confusion_to_csv(matrix: np.ndarray) -> str:
    """Confusion matrix as a CSV grid with a header row of predicted classes"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["true\\pred"] + list(range(matrix.shape[1])))
    for true_class, row in enumerate(matrix):
        writer.writerow([true_class] + [int(v) for v in row])
    return buffer.getvalue()


@dataclass
class EpochRecord:
    """One line of the training curve; top-k fields are None on epochs without evaluation"""

    epoch: int
    loss: float
    lr: float
    seconds: float
    top1: Optional[float] = None
    top3: Optional[float] = None
    top5: Optional[float] = None

    def set_topk(self, topk: dict[int, float]) -> None:
        self.top1 = topk.get(1)
        self.top3 = topk.get(3)
        self.top5 = topk.get(5)


@dataclass
class EvaluationResult:
    topk: dict[int, float]
    confusion: np.ndarray
    num_samples: int

    @property
    def top1(self) -> float:
        return self.topk.get(1, float("nan"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_samples": self.num_samples,
            "topk": {str(k): v for k, v in sorted(self.topk.items())},
        }


@dataclass
class MetricsReport:
    """Training curve, final evaluation and summary for one run"""

    records: list[EpochRecord] = field(default_factory=list)
    final: Optional[EvaluationResult] = None
    config: dict[str, Any] = field(default_factory=dict)

    def add(self, record: EpochRecord) -> None:
        self.records.append(record)

    def prepend_history(self, earlier: list[EpochRecord], before_epoch: int) -> None:
        """Put a previous run's records for epochs < before_epoch ahead of this run's"""
        self.records[:0] = [r for r in earlier if r.epoch < before_epoch]

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def summary(self) -> dict[str, Any]:
        """Final summary record (last epoch, loss, final Top-K)"""
        summary: dict[str, Any] = {
            "record": "summary",
            "epochs_run": len(self.records),
            "last_epoch": self.records[-1].epoch if self.records else None,
            "final_loss": self.records[-1].loss if self.records else None,
            "total_seconds": round(sum(r.seconds for r in self.records), 3),
        }
        if self.final is not None:
            summary.update(self.final.to_dict())
        if self.config:
            summary["config"] = self.config
        return summary

    def to_jsonl(self) -> str:
        lines = [json.dumps({"record": "epoch", **asdict(r)}, sort_keys=True) for r in self.records]
        lines.append(json.dumps(self.summary(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(CSV_COLUMNS), lineterminator="\n")
        writer.writeheader()
        for record in self.records:
            row = asdict(record)
            writer.writerow({k: "" if row[k] is None else row[k] for k in CSV_COLUMNS})
        return buffer.getvalue()

    def write(self, directory: Union[str, Path]) -> dict[str, Path]:
        """Write metrics.jsonl, metrics.csv and (if evaluated) confusion.csv atomically"""
        directory = Path(directory)
        paths = {
            "jsonl": atomic_write_text(directory / "metrics.jsonl", self.to_jsonl()),
            "csv": atomic_write_text(directory / "metrics.csv", self.to_csv()),
        }
        if self.final is not None:
            paths["confusion"] = atomic_write_text(directory / "confusion.csv", confusion_to_csv(self.final.confusion))
        return paths


def read_epoch_records(path: Union[str, Path]) -> list[EpochRecord]:
    """Epoch rows of an existing metrics.jsonl; empty if the file is missing or unreadable"""
    path = Path(path)
    if not path.is_file():
        return []
    records = []
    try:
        for line in path.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            if row.get("record") == "epoch":
                records.append(EpochRecord(**{k: v for k, v in row.items() if k != "record"}))
    except (ValueError, TypeError, AttributeError) as e:
        logger.warning("Ignoring unreadable metrics history %s: %s", path, e)
        return []
    return records
