"""Training and ablation harness: schedules, SGD loop, top-k evaluation.

The temperature of the kernel-attention softmax starts high (default 40) and
drops by a fixed decrement after each epoch until it reaches 1, where the
softmax is the standard one; starting sharp would produce near one-hot kernel
weights and stall early training.  The learning rate is piecewise-constant,
divided by a decay factor every fixed number of epochs.

Training is plain SGD with weight decay and no momentum.  Shuffling and
dropout draw from seedable counter-based generators, so two runs with the
same configuration produce identical accuracy trajectories (wall times
excepted).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .metrics import EpochRecord, TradeoffReport, timed_run, tradeoff_report
from .model import TinyCNN, build_model
from .tensor import GradientTape, Tensor, softmax_cross_entropy

__all__ = [
    "TemperatureSchedule",
    "TrainConfig",
    "TrainingDiverged",
    "temperature_at",
    "lr_at",
    "train",
    "evaluate_topk",
    "run_ablation",
    "write_ablation_csv",
    "parse_config_file",
    "ABLATION_KINDS",
    "ABLATION_CSV_HEADER",
]

ABLATION_KINDS = ("temperature", "kernels", "lr")
ABLATION_CSV_HEADER = ("setting", "top1", "top5", "mean_epoch_time_s", "params", "status")


@dataclass(frozen=True)
class TemperatureSchedule:
    """Linear anneal: start at t0, subtract ``decrement`` per epoch, clamp at ``floor``."""

    t0: float = 40.0
    decrement: float = 3.0
    floor: float = 1.0

    def __post_init__(self):
        if not self.t0 >= self.floor >= 1.0:
            raise ValueError(f"need t0 >= floor >= 1, got t0={self.t0}, floor={self.floor}")
        if self.decrement < 0.0:
            raise ValueError(f"decrement must be >= 0, got {self.decrement}")


def temperature_at(schedule: TemperatureSchedule, epoch: int) -> float:
    """Temperature in force during ``epoch`` (0-based)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(schedule.floor, schedule.t0 - schedule.decrement * epoch)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one training run."""

    epochs: int = 20
    batch_size: int = 32
    lr0: float = 0.1
    lr_decay_factor: float = 20.0
    lr_decay_every: int = 30
    weight_decay: float = 1e-4
    reduction: float = 0.0625
    seed: int = 0
    temperature: TemperatureSchedule = field(default_factory=TemperatureSchedule)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if min(self.batch_size, self.lr_decay_every) < 1:
            raise ValueError("batch_size and lr_decay_every must be positive")
        if self.lr0 <= 0.0 or self.weight_decay < 0.0:
            raise ValueError("lr0 must be positive and weight_decay non-negative")
        if self.lr_decay_factor <= 1.0:
            raise ValueError(f"lr_decay_factor must exceed 1, got {self.lr_decay_factor}")
        if not 0.0 < self.reduction <= 1.0:
            raise ValueError(f"reduction must be in (0, 1], got {self.reduction}")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Piecewise-constant decay: lr0 / factor ** floor(epoch / every)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return config.lr0 / config.lr_decay_factor ** (epoch // config.lr_decay_every)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite; names the epoch."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss = {loss}")
        self.epoch = epoch
        self.loss = loss


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start : start + batch_size]


def train(model: TinyCNN, train_set: Dataset, test_set: Dataset, config: TrainConfig,
          on_epoch: Callable[[int, float, float, float], None] | None = None,
          ) -> tuple[list[EpochRecord], TradeoffReport]:
    """SGD with weight decay over ``config.epochs`` epochs.

    Per epoch: set the softmax temperature and learning rate from their
    schedules, shuffle with the seeded generator, run minibatch updates, then
    evaluate top-1 on the test set.  The recorded wall time covers the
    training portion only.  ``on_epoch`` (if given) receives
    (epoch, temperature, lr, mean train loss) after each epoch.

    Returns the per-epoch records and the final trade-off report computed
    with images_per_epoch = len(train_set); zero-epoch runs cannot support a
    report and raise.
    """
    shuffle_ss, dropout_ss = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.Generator(np.random.Philox(shuffle_ss))
    dropout_rng = np.random.Generator(np.random.Philox(dropout_ss))
    params = model.parameters()
    records: list[EpochRecord] = []

    for epoch in range(config.epochs):
        temperature = temperature_at(config.temperature, epoch)
        lr = lr_at(config, epoch)
        model.temperature = temperature
        order = shuffle_rng.permutation(len(train_set))

        def run_epoch() -> float:
            loss_sum, batches = 0.0, 0
            for batch in _batches(order, config.batch_size):
                xb = Tensor(train_set.images[batch])
                yb = train_set.labels[batch]
                with GradientTape() as tape:
                    logits = model.forward(xb, training=True, rng=dropout_rng)
                    loss = softmax_cross_entropy(logits, yb)
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    raise TrainingDiverged(epoch, loss_value)
                tape.backward(loss)
                for p in params:
                    if p.grad is not None:
                        p.data -= lr * (p.grad + config.weight_decay * p.data)
                        p.grad = None
                loss_sum += loss_value
                batches += 1
            return loss_sum / max(batches, 1)

        mean_loss, wall_time = timed_run(run_epoch)
        correct, total = evaluate_topk(model, test_set, 1)
        records.append(EpochRecord(epoch=epoch, wall_time_s=wall_time,
                                   correct=correct, total=total))
        if on_epoch is not None:
            on_epoch(epoch, temperature, lr, mean_loss)

    report = tradeoff_report(records, images_per_epoch=len(train_set))
    return records, report


def evaluate_topk(model: TinyCNN, dataset: Dataset, k: int,
                  batch_size: int = 256) -> tuple[int, int]:
    """Count samples whose true label is among the k highest logits.

    Ties rank by the lower class index (stable sort on descending logits).
    """
    if k < 1 or k > dataset.class_count:
        raise ValueError(f"k must lie in [1, {dataset.class_count}], got {k}")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        xb = Tensor(dataset.images[start : start + batch_size])
        yb = dataset.labels[start : start + batch_size]
        logits = model.forward(xb).data
        ranked = np.argsort(-logits, axis=1, kind="stable")[:, :k]
        correct += int((ranked == yb[:, None]).any(axis=1).sum())
    return correct, len(dataset)


def run_ablation(kind: str, grid: Sequence[float], config: TrainConfig,
                 train_set: Dataset, test_set: Dataset, *,
                 variant: str = "fmdconv", kernels: int = 4,
                 model_kwargs: dict | None = None) -> list[dict]:
    """One full train/evaluate per grid setting, shared seed.

    ``kind`` selects the swept hyper-parameter: initial temperature, kernel
    count, or initial learning rate.  A diverging row is recorded with its
    abort epoch and the sweep continues.
    """
    if kind not in ABLATION_KINDS:
        raise ValueError(f"kind must be one of {ABLATION_KINDS}, got {kind!r}")
    if not grid:
        raise ValueError("ablation grid must be non-empty")
    model_kwargs = dict(model_kwargs or {})
    rows = []
    for setting in grid:
        cfg, n_kernels = config, kernels
        if kind == "temperature":
            schedule = TemperatureSchedule(t0=float(setting),
                                           decrement=config.temperature.decrement,
                                           floor=config.temperature.floor)
            cfg = replace(config, temperature=schedule)
        elif kind == "lr":
            cfg = replace(config, lr0=float(setting))
        else:
            n_kernels = int(setting)
        model = build_model(variant, kernels=n_kernels, reduction=cfg.reduction,
                            class_count=train_set.class_count,
                            in_channels=train_set.images.shape[1],
                            seed=cfg.seed, **model_kwargs)
        row = {"setting": setting, "params": model.param_count()}
        try:
            records, _ = train(model, train_set, test_set, cfg)
        except TrainingDiverged as exc:
            row.update(top1=float("nan"), top5=float("nan"),
                       mean_epoch_time_s=float("nan"),
                       status=f"diverged@epoch{exc.epoch}")
        else:
            top1_correct, total = evaluate_topk(model, test_set, 1)
            k5 = min(5, test_set.class_count)
            top5_correct, _ = evaluate_topk(model, test_set, k5)
            row.update(top1=top1_correct / total, top5=top5_correct / total,
                       mean_epoch_time_s=sum(r.wall_time_s for r in records) / len(records),
                       status="ok")
        rows.append(row)
    return rows


def write_ablation_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_CSV_HEADER)
        for row in rows:
            writer.writerow([row["setting"], row["top1"], row["top5"],
                             row["mean_epoch_time_s"], row["params"], row["status"]])


def parse_config_file(path) -> dict:
    """Flat key-value training-config file: ``key = value`` lines, # comments.

    Recognized keys are the TrainConfig fields plus the schedule fields
    ``t0``, ``t_decrement`` and ``t_floor``.
    """
    int_keys = {"epochs", "batch_size", "lr_decay_every", "seed"}
    float_keys = {"lr0", "lr_decay_factor", "weight_decay", "reduction",
                  "t0", "t_decrement", "t_floor"}
    values: dict = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in int_keys:
                values[key] = int(value)
            elif key in float_keys:
                values[key] = float(value)
            else:
                raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
    return values
