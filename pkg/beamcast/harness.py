#!/usr/bin/env python3
"""
Training and evaluation harness
Adam with step decay on cross-entropy, periodic Top-K evaluation on the held-out
split, and learning-rate sweeps
"""

import csv
import io
import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from beamcast.airsim import Dataset
from beamcast.beamnet import ModelConfig, ModelParams, forward, init_params, predict_topk
from beamcast.errors import ConfigurationError, EvaluationError, NonFiniteLossError, TrainingError
from beamcast.metrics import (
    DEFAULT_TOPK,
    EpochRecord,
    EvaluationResult,
    MetricsReport,
    confusion_matrix,
    topk_accuracy,
)
from beamcast.numcore import AdamState, LrSchedule, adam_step, clip_grad_norm, cross_entropy, no_grad
from beamcast.pipeline import SplitSpec, StructScaler, fit_scaler, make_batches, prepare_batch, split_dataset

logger = logging.getLogger(__name__)

# RNG stream tags mixed with (seed, epoch[, batch])
_SHUFFLE_STREAM = 11
_DROPOUT_STREAM = 12


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and bookkeeping; epochs are 0-based internally"""

    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    milestones: tuple[int, ...] = (30, 60, 90)
    decay_factor: float = 0.1
    seed: int = 0
    eval_every: int = 5
    train_fraction: float = 0.8
    clip_grad_norm: Optional[float] = None
    eval_batch_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.epochs < 1:
            raise ConfigurationError(f"must be >= 1, got {self.epochs}", "train.epochs")
        if self.batch_size < 1:
            raise ConfigurationError(f"must be >= 1, got {self.batch_size}", "train.batch_size")
        if self.eval_batch_size < 1:
            raise ConfigurationError(f"must be >= 1, got {self.eval_batch_size}", "train.eval_batch_size")
        if self.eval_every < 1:
            raise ConfigurationError(f"must be >= 1, got {self.eval_every}", "train.eval_every")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ConfigurationError(f"must be a finite value >= 0, got {self.lr}", "train.lr")
        if list(self.milestones) != sorted(self.milestones):
            raise ConfigurationError(f"must be sorted ascending, got {list(self.milestones)}", "train.milestones")
        if self.milestones and self.milestones[-1] >= self.epochs:
            raise ConfigurationError(
                f"milestone {self.milestones[-1]} is not below epochs={self.epochs}", "train.milestones"
            )
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigurationError(f"must be in (0, 1), got {self.decay_factor}", "train.decay_factor")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError(f"must be in (0, 1), got {self.train_fraction}", "train.train_fraction")
        if self.clip_grad_norm is not None and not self.clip_grad_norm > 0:
            raise ConfigurationError(f"must be > 0, got {self.clip_grad_norm}", "train.clip_grad_norm")

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.milestones, self.decay_factor)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["milestones"] = list(self.milestones)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        return cls(**data)


@dataclass
class TrainResult:
    params: ModelParams
    report: MetricsReport
    adam_state: AdamState
    scaler: StructScaler
    train_indices: np.ndarray
    test_indices: np.ndarray
    last_epoch: int


@dataclass
class ResumeState:
    """Where a previous run stopped; training continues at epoch + 1"""

    params: ModelParams
    adam_state: AdamState
    scaler: StructScaler
    epoch: int


CheckpointCallback = Callable[[TrainResult], None]


def check_compatibility(model_cfg: ModelConfig, dataset: Dataset) -> None:
    """
    Raises:
        ConfigurationError: naming the model field that disagrees with the dataset manifest
    """
    if dataset.num_beams != model_cfg.num_beams:
        raise ConfigurationError(
            f"dataset has Q={dataset.num_beams} beams, model expects {model_cfg.num_beams}", "model.num_beams"
        )
    if dataset.image_size != model_cfg.image_size:
        raise ConfigurationError(
            f"dataset images are {dataset.image_size}px, model expects {model_cfg.image_size}px", "model.image_size"
        )


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    indices: Sequence[int],
    scaler: StructScaler,
    k_list: Sequence[int] = DEFAULT_TOPK,
    batch_size: int = 256,
) -> EvaluationResult:
    """
    Top-K accuracies and top-1 confusion matrix in eval mode (dropout off,
    batchnorm running statistics).

    Raises:
        EvaluationError: if indices is empty
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EvaluationError("Cannot evaluate an empty split")
    logits = predict_logits(params, dataset, indices, scaler, batch_size)
    labels = dataset.labels[indices]
    q = params.config.num_beams
    top1 = predict_topk(logits, 1)[:, 0]
    return EvaluationResult(
        topk=topk_accuracy(logits, labels, k_list),
        confusion=confusion_matrix(labels, top1, q),
        num_samples=int(indices.size),
    )


def predict_logits(
    params: ModelParams,
    dataset: Dataset,
    indices: Sequence[int],
    scaler: StructScaler,
    batch_size: int = 256,
) -> np.ndarray:
    """Eval-mode logits [n, Q] for the given samples"""
    chunks = []
    with no_grad():
        for idx in make_batches(indices, batch_size, None, shuffle=False):
            batch = prepare_batch(dataset, idx, scaler, train=False, dtype=params.dtype)
            chunks.append(forward(batch.images, batch.structs, params, train=False).data)
    return np.concatenate(chunks, axis=0)


def train_step(
    params: ModelParams,
    images: np.ndarray,
    structs: np.ndarray,
    labels: np.ndarray,
    state: AdamState,
    rng: Optional[np.random.Generator],
    clip: Optional[float] = None,
    epoch: int = 0,
    batch: int = 0,
) -> float:
    """One forward/backward/Adam update on a batch; returns the pre-update loss"""
    params.zero_grad()
    logits = forward(images, structs, params, train=True, rng=rng)
    loss = cross_entropy(logits, labels)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(epoch, batch, value)
    loss.backward()
    clip_grad_norm(params.named_parameters(), clip)
    adam_step(params.named_parameters(), state)
    return value


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: Dataset,
    resume: Optional[ResumeState] = None,
    on_checkpoint: Optional[CheckpointCallback] = None,
    k_list: Sequence[int] = DEFAULT_TOPK,
) -> TrainResult:
    """
    Train the beam predictor on the training split.

    The split is a seeded permutation of the dataset and the scaler is fit on
    the training split only. Shuffling, augmentation and dropout draw from
    streams derived from (seed, epoch, batch), so reference-mode runs are
    bit-reproducible. Held-out Top-K is measured every `eval_every` epochs and
    after the last epoch; `on_checkpoint` is called at each of those points.

    Raises:
        ConfigurationError: dataset and model disagree (Q or image size)
        NonFiniteLossError: loss became NaN/Inf (carries epoch and batch)
    """
    check_compatibility(model_cfg, dataset)
    train_idx, test_idx = split_dataset(len(dataset), SplitSpec(train_cfg.train_fraction, train_cfg.seed))
    if resume is not None:
        params, state, scaler = resume.params, resume.adam_state, resume.scaler
        start_epoch = resume.epoch + 1
        logger.info("Resuming after epoch %d", resume.epoch)
    else:
        params = init_params(model_cfg, train_cfg.seed)
        state = AdamState(lr=train_cfg.lr)
        scaler = fit_scaler(dataset.structs[train_idx])
        start_epoch = 0

    schedule = train_cfg.schedule()
    report = MetricsReport(config={"model": model_cfg.to_dict(), "train": train_cfg.to_dict()})
    result = TrainResult(params, report, state, scaler, train_idx, test_idx, start_epoch - 1)

    for epoch in range(start_epoch, train_cfg.epochs):
        started = time.perf_counter()
        state.lr = schedule.lr_at(epoch)
        shuffle_rng = np.random.default_rng([train_cfg.seed, _SHUFFLE_STREAM, epoch])
        batches = make_batches(train_idx, train_cfg.batch_size, shuffle_rng, shuffle=True)

        losses = []
        for b, idx in enumerate(batches):
            batch = prepare_batch(dataset, idx, scaler, train=True, epoch=epoch, seed=train_cfg.seed, dtype=params.dtype)
            dropout_rng = np.random.default_rng([train_cfg.seed, _DROPOUT_STREAM, epoch, b])
            loss = train_step(
                params,
                batch.images,
                batch.structs,
                batch.labels,
                state,
                dropout_rng,
                train_cfg.clip_grad_norm,
                epoch=epoch,
                batch=b,
            )
            losses.append(loss)

        record = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(losses)),
            lr=state.lr,
            seconds=round(time.perf_counter() - started, 3),
        )
        last = epoch == train_cfg.epochs - 1
        result.last_epoch = epoch
        if last or (epoch + 1) % train_cfg.eval_every == 0:
            evaluation = evaluate(params, dataset, test_idx, scaler, k_list, train_cfg.eval_batch_size)
            record.set_topk(evaluation.topk)
            if last:
                report.final = evaluation
        report.add(record)
        logger.info(
            "epoch %d/%d loss %.4f lr %.1e%s",
            epoch + 1,
            train_cfg.epochs,
            record.loss,
            record.lr,
            f" top1 {record.top1:.3f}" if record.top1 is not None else "",
        )
        if on_checkpoint is not None and record.top1 is not None:
            on_checkpoint(result)

    if report.final is None and len(test_idx):
        # resumed at or past the final epoch
        report.final = evaluate(params, dataset, test_idx, scaler, k_list, train_cfg.eval_batch_size)
    return result


@dataclass
class SweepArm:
    """Outcome of one learning rate: a finished run or a divergence"""

    lr: float
    status: str  # "ok" or "diverged"
    result: Optional[TrainResult] = None
    error: Optional[str] = None
    diverged_at: Optional[tuple[int, int]] = None

    @property
    def final_topk(self) -> dict[int, float]:
        if self.result is None or self.result.report.final is None:
            return {}
        return self.result.report.final.topk

    def row(self) -> dict[str, Any]:
        topk = self.final_topk
        return {
            "lr": self.lr,
            "status": self.status,
            "top1": topk.get(1, ""),
            "top3": topk.get(3, ""),
            "top5": topk.get(5, ""),
            "final_loss": self.result.report.losses[-1] if self.result and self.result.report.records else "",
        }


def dedupe_lrs(lrs: Sequence[float]) -> tuple[list[float], list[float]]:
    """(unique lrs in first-seen order, dropped duplicates)"""
    unique: list[float] = []
    dropped: list[float] = []
    for lr in lrs:
        (dropped if lr in unique else unique).append(float(lr))
    return unique, dropped


def lr_sweep(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: Dataset,
    lrs: Sequence[float],
    on_arm_end: Optional[Callable[[SweepArm], None]] = None,
) -> list[SweepArm]:
    """
    One full train + evaluate per learning rate, everything else identical.

    A diverging arm (non-finite loss) is recorded and the sweep continues.
    """
    unique, dropped = dedupe_lrs(lrs)
    if dropped:
        logger.warning("Ignoring duplicate learning rates: %s", dropped)
    if not unique:
        raise ConfigurationError("need at least one learning rate", "lrs")

    arms = []
    for lr in unique:
        arm_cfg = TrainConfig(**{**train_cfg.to_dict(), "lr": lr})
        logger.info("Sweep arm lr=%g", lr)
        try:
            arm = SweepArm(lr, "ok", result=train(model_cfg, arm_cfg, dataset))
        except NonFiniteLossError as e:
            logger.warning("lr=%g diverged at epoch %d batch %d", lr, e.epoch, e.batch)
            arm = SweepArm(lr, "diverged", error=str(e), diverged_at=(e.epoch, e.batch))
        except TrainingError as e:
            arm = SweepArm(lr, "diverged", error=str(e))
        arms.append(arm)
        if on_arm_end is not None:
            on_arm_end(arm)
    return arms


@dataclass
class SweepTable:
    arms: list[SweepArm] = field(default_factory=list)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(
            buffer, fieldnames=["lr", "status", "top1", "top3", "top5", "final_loss"], lineterminator="\n"
        )
        writer.writeheader()
        for arm in self.arms:
            writer.writerow(arm.row())
        return buffer.getvalue()
