"""Speed-accuracy trade-off metrics and timing plumbing.

Two scores summarize a training run:

* inverse efficiency score (IES): mean epoch time divided by accuracy;
  lower is better.
* rate-correct score (RCS): correct classifications per unit of training
  time, i.e. accuracy * images_per_epoch * epochs / total time; higher is
  better.

IES depends only on accuracy and time; RCS additionally scales with the
dataset size, which is therefore an explicit input everywhere.  Mean epoch
time averages over all epochs, early ones included.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from typing import Callable, Sequence

__all__ = [
    "FLOP_CONVENTION",
    "MetricError",
    "CsvFormatError",
    "EpochRecord",
    "TradeoffReport",
    "ies",
    "rcs",
    "run_accuracy",
    "tradeoff_report",
    "timed_run",
    "write_epochs_csv",
    "read_epochs_csv",
]

# Stated in every report: one multiply-accumulate counts as two FLOPs.
FLOP_CONVENTION = "2 FLOPs per multiply-accumulate"

EPOCHS_CSV_HEADER = ("epoch", "wall_time_s", "correct", "total")


class MetricError(ValueError):
    """A metric was requested outside its domain (zero accuracy, zero time, ...)."""


class CsvFormatError(ValueError):
    """A CSV file violates the documented schema; carries the offending line."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class EpochRecord:
    """One epoch's raw measurements: wall time plus test-set correct counts."""

    epoch: int
    wall_time_s: float
    correct: int
    total: int

    def __post_init__(self):
        if self.wall_time_s <= 0.0:
            raise MetricError(f"epoch {self.epoch}: wall time must be positive, "
                              f"got {self.wall_time_s}")
        if not 0 <= self.correct <= self.total:
            raise MetricError(f"epoch {self.epoch}: need 0 <= correct <= total, "
                              f"got {self.correct}/{self.total}")

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


@dataclass(frozen=True)
class TradeoffReport:
    """IES and RCS together with the inputs they were computed from."""

    ies: float
    rcs: float
    mean_epoch_time_s: float
    accuracy: float
    images_per_epoch: int

    def to_json_dict(self) -> dict:
        return {
            "ies": self.ies,
            "rcs": self.rcs,
            "mean_epoch_time_s": self.mean_epoch_time_s,
            "accuracy": self.accuracy,
            "images_per_epoch": self.images_per_epoch,
            "flop_convention": FLOP_CONVENTION,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, d: dict) -> "TradeoffReport":
        return cls(ies=float(d["ies"]), rcs=float(d["rcs"]),
                   mean_epoch_time_s=float(d["mean_epoch_time_s"]),
                   accuracy=float(d["accuracy"]),
                   images_per_epoch=int(d["images_per_epoch"]))


def ies(mean_epoch_time_s: float, accuracy: float) -> float:
    """Inverse efficiency score: time / accuracy.  Undefined at accuracy 0."""
    if mean_epoch_time_s <= 0.0:
        raise MetricError(f"mean epoch time must be positive, got {mean_epoch_time_s}")
    if accuracy <= 0.0:
        raise MetricError(f"IES is undefined for accuracy {accuracy}")
    if accuracy > 1.0:
        raise MetricError(f"accuracy must lie in (0, 1], got {accuracy}")
    return mean_epoch_time_s / accuracy


def run_accuracy(records: Sequence[EpochRecord]) -> float:
    """Final-epoch top-1 accuracy of a run."""
    if not records:
        raise MetricError("cannot compute accuracy from zero epoch records")
    return records[-1].accuracy


def rcs(records: Sequence[EpochRecord], images_per_epoch: int) -> float:
    """Rate-correct score: correct classifications per second of training.

    Equals accuracy * images_per_epoch * epochs / total wall time, with the
    run's final accuracy.  The dataset size is an explicit input: reported
    values in the literature use the train+test image count for CIFAR-scale
    runs but the training-set size for ImageNet-scale runs, so no single
    convention can be baked in.  For new experiments use the training-set
    size.
    """
    if not records:
        raise MetricError("RCS needs at least one epoch record")
    if images_per_epoch <= 0:
        raise MetricError(f"images_per_epoch must be positive, got {images_per_epoch}")
    total_time = sum(r.wall_time_s for r in records)
    if total_time <= 0.0:
        raise MetricError("total training time must be positive")
    accuracy = run_accuracy(records)
    return accuracy * images_per_epoch * len(records) / total_time


def tradeoff_report(records: Sequence[EpochRecord], images_per_epoch: int) -> TradeoffReport:
    """Summarize a run; raises when the records cannot support the metrics."""
    if not records:
        raise MetricError("cannot build a trade-off report from zero epochs")
    accuracy = run_accuracy(records)
    mean_time = sum(r.wall_time_s for r in records) / len(records)
    return TradeoffReport(
        ies=ies(mean_time, accuracy),
        rcs=rcs(records, images_per_epoch),
        mean_epoch_time_s=mean_time,
        accuracy=accuracy,
        images_per_epoch=images_per_epoch,
    )


def timed_run(fn: Callable[[], object]) -> tuple[object, float]:
    """Run ``fn`` and return (result, monotonic wall seconds)."""
    start = time.perf_counter()
    result = fn()
    return result, time.perf_counter() - start


def write_epochs_csv(path, records: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCHS_CSV_HEADER)
        for r in records:
            writer.writerow([r.epoch, repr(r.wall_time_s), r.correct, r.total])


def read_epochs_csv(path) -> list[EpochRecord]:
    """Parse an epochs CSV; malformed content reports its line number."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EPOCHS_CSV_HEADER:
            raise CsvFormatError(path, 1,
                                 f"expected header {','.join(EPOCHS_CSV_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise CsvFormatError(path, line_no, f"expected 4 fields, got {len(row)}")
            try:
                record = EpochRecord(epoch=int(row[0]), wall_time_s=float(row[1]),
                                     correct=int(row[2]), total=int(row[3]))
            except (ValueError, MetricError) as exc:
                raise CsvFormatError(path, line_no, str(exc)) from exc
            records.append(record)
    return records
