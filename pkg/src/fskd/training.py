"""Teacher and student training loops with per-step metrics."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .backbone import Backbone
from .data.datasets import Dataset
from .data.iterate import ResolutionSetting, batch_iterator, standardize
from .distill import DistillConfig, DistillKind, distill_loss, total_loss
from .engine import SGD, GradTape, no_grad
from .heads import MarginHeadParams, cosface_loss

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "epoch", "lr", "task_loss", "distill_loss", "total_loss", "eval_acc")


class NumericError(RuntimeError):
    """A loss became NaN or infinite during training."""


@dataclass
class Schedule:
    lr: float = 0.05
    milestones: Tuple[int, ...] = (12, 17)
    decay: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    unit: str = "epoch"

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.unit not in ("epoch", "step"):
            raise ValueError("unit must be 'epoch' or 'step'")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 2:
            raise ValueError("lr must be positive, epochs >= 1 and batch_size >= 2")

    def lr_at(self, epoch: int, step: int = 0) -> float:
        """Learning rate for an epoch (or, for ``unit="step"``, a 0-based step)."""
        t = epoch if self.unit == "epoch" else step
        passed = sum(1 for m in self.milestones if t >= m)
        return self.lr * self.decay**passed

    def finished(self, epoch: int, step: int) -> bool:
        return epoch >= self.epochs if self.unit == "epoch" else step >= self.epochs


# The full-length digit recipe; the desk-scale default above is what the CLI uses.
FULL_DIGIT_SCHEDULE = Schedule(lr=0.01, milestones=(30, 60, 80), decay=0.1, epochs=90, batch_size=64)
FULL_FACE_SCHEDULE = Schedule(
    lr=0.1, milestones=(18000, 28000, 36000, 44000), decay=0.1, epochs=47000, batch_size=256, unit="step"
)


@dataclass
class TrainState:
    """Everything needed to resume: model, head, optimizer and progress."""

    backbone: Backbone
    head: MarginHeadParams
    optimizer: SGD
    step: int = 0
    epoch: int = 0
    metrics: List[Dict] = field(default_factory=list)

    @classmethod
    def create(cls, backbone: Backbone, head: MarginHeadParams, schedule: Schedule) -> "TrainState":
        params = backbone.parameters() + [head.W]
        opt = SGD(params, schedule.lr_at(0), schedule.momentum, schedule.weight_decay)
        return cls(backbone, head, opt)


class TeacherTaps:
    """Frozen teacher features for HR inputs, optionally precomputed per sample."""

    def __init__(self, teacher: Backbone, dataset: Optional[Dataset] = None, batch_size: int = 256):
        self.teacher = teacher
        self.cache: Optional[List[np.ndarray]] = None
        if dataset is not None:
            chunks = []
            for start in range(0, len(dataset), batch_size):
                x = standardize(dataset.images[start : start + batch_size])
                chunks.append([t.data for t in self._forward(x)])
            self.cache = [np.concatenate([c[i] for c in chunks]) for i in range(len(chunks[0]))]

    def _forward(self, hr: np.ndarray):
        with no_grad():
            _, taps = self.teacher.forward_with_taps(hr, training=False)
        return taps

    def __call__(self, hr: np.ndarray, indices: np.ndarray):
        if self.cache is not None:
            return [c[indices] for c in self.cache]
        return [t.data for t in self._forward(hr)]


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def train(
    state: TrainState,
    dataset: Dataset,
    schedule: Schedule,
    setting: ResolutionSetting,
    seed: int,
    distill: DistillConfig = DistillConfig(DistillKind.NONE),
    teacher: Optional[TeacherTaps] = None,
    evaluate: Optional[Callable[[], float]] = None,
    on_epoch_end: Optional[Callable[[TrainState], None]] = None,
) -> TrainState:
    """Run SGD from ``state.epoch`` until the schedule is exhausted.

    Without a teacher the network trains on ``setting``'s inputs with the
    CosFace loss only (a teacher run uses ``ResolutionSetting.single(1)``).
    With a teacher, every step adds the weighted distillation loss between
    teacher taps on HR inputs and student taps on LR inputs. One metrics row
    is appended per step; ``eval_acc`` is filled on the last step of an epoch
    when ``evaluate`` is given.
    """
    if distill.kind is not DistillKind.NONE and teacher is None:
        raise ValueError(f"distillation kind {distill.kind.value!r} needs a teacher")
    backbone, head, opt = state.backbone, state.head, state.optimizer
    epoch = state.epoch
    while not schedule.finished(epoch, state.step):
        batches = list(batch_iterator(dataset, setting, schedule.batch_size, seed, epoch))
        for i, batch in enumerate(batches):
            if schedule.finished(epoch, state.step):
                break
            opt.lr = schedule.lr_at(epoch, state.step)
            opt.zero_grad()
            with GradTape() as tape:
                emb, taps = backbone.forward_with_taps(batch.lr, training=True)
                task = cosface_loss(emb, batch.labels, head)
                dist = None
                if distill.kind is not DistillKind.NONE:
                    dist = distill_loss(teacher(batch.hr, batch.indices), taps, distill)
                loss = total_loss(task, dist, distill)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at step {state.step + 1}")
            tape.backward(loss)
            opt.step()
            state.step += 1
            row = {
                "step": state.step,
                "epoch": epoch,
                "lr": _fmt(opt.lr),
                "task_loss": _fmt(task.item()),
                "distill_loss": _fmt(None if dist is None else dist.item()),
                "total_loss": _fmt(value),
                "eval_acc": "",
            }
            last = i == len(batches) - 1 or schedule.finished(epoch, state.step)
            if last and evaluate is not None:
                row["eval_acc"] = _fmt(evaluate())
            state.metrics.append(row)
        epoch += 1
        state.epoch = epoch
        logger.info("epoch %d done: step %d loss %s eval %s", epoch, state.step, row["total_loss"], row["eval_acc"])
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state


def metrics_csv(rows: Iterable[Dict]) -> str:
    lines = [",".join(METRIC_FIELDS)]
    for r in rows:
        lines.append(",".join(str(r[k]) for k in METRIC_FIELDS))
    return "\n".join(lines) + "\n"
