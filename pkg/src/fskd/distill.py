"""Feature distillation losses between teacher and student feature taps.

All three losses take the lists of per-stage features produced by
:meth:`fskd.backbone.Backbone.forward_with_taps`. Teacher taps are expected to
come from a forward pass under :func:`fskd.engine.no_grad`, so gradients only
reach the student.
"""

import enum
from dataclasses import dataclass
from typing import Sequence

from .engine import NORM_EPS, Tensor, absolute, l2_norm, normalize, transpose, tsum
from .engine.tensor import as_tensor


class DistillKind(str, enum.Enum):
    NONE = "none"
    FITNET_L2 = "fitnet_l2"
    NORM_KD = "norm_kd"
    FSKD = "fskd"


class FlattenMode(str, enum.Enum):
    WHOLE_MAP = "whole_map"
    PER_LOCATION = "per_location"


@dataclass(frozen=True)
class DistillConfig:
    kind: DistillKind = DistillKind.FSKD
    lambda_distill: float = 5.0
    flatten_mode: FlattenMode = FlattenMode.WHOLE_MAP

    def __post_init__(self):
        object.__setattr__(self, "kind", DistillKind(self.kind))
        object.__setattr__(self, "flatten_mode", FlattenMode(self.flatten_mode))
        if not self.lambda_distill >= 0:
            raise ValueError("lambda_distill must be non-negative")


def _pairs(teacher_taps: Sequence, student_taps: Sequence):
    if len(teacher_taps) != len(student_taps):
        raise ValueError(f"teacher has {len(teacher_taps)} taps, student has {len(student_taps)}")
    if not teacher_taps:
        raise ValueError("no feature taps given")
    for i, (t, s) in enumerate(zip(teacher_taps, student_taps)):
        t, s = as_tensor(t), as_tensor(s)
        if t.shape != s.shape:
            raise ValueError(f"tap {i}: teacher shape {t.shape} != student shape {s.shape}")
        yield t.detach(), s


def _flat(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def fskd_loss(teacher_taps, student_taps, flatten_mode=FlattenMode.WHOLE_MAP, eps: float = NORM_EPS) -> Tensor:
    """Mean over taps of ``1 - cos(f_T, f_S)``, averaged over the batch.

    ``whole_map`` takes one cosine per sample over the flattened C*H*W map;
    ``per_location`` takes one cosine per spatial position over the channel
    vector and averages positions.
    """
    mode = FlattenMode(flatten_mode)
    terms = []
    for t, s in _pairs(teacher_taps, student_taps):
        if mode is FlattenMode.WHOLE_MAP or s.ndim == 2:
            t2, s2 = _flat(t), _flat(s)
            cos = tsum(normalize(t2, axes=1, eps=eps) * normalize(s2, axes=1, eps=eps), axis=1)
        else:
            n, c = s.shape[:2]
            t2 = transpose(t.reshape(n, c, -1), (0, 2, 1))
            s2 = transpose(s.reshape(n, c, -1), (0, 2, 1))
            cos = tsum(normalize(t2, axes=2, eps=eps) * normalize(s2, axes=2, eps=eps), axis=2)
        terms.append(1.0 - cos.mean())
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


def fitnet_loss(teacher_taps, student_taps) -> Tensor:
    """Mean over taps and samples of ``||f_T - f_S||_2`` on the raw features."""
    terms = [l2_norm(_flat(s) - _flat(t), axes=1).mean() for t, s in _pairs(teacher_taps, student_taps)]
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


def normkd_loss(teacher_taps, student_taps) -> Tensor:
    """Mean over taps and samples of ``| ||f_T||_2 - ||f_S||_2 |``.

    For a scalar the outer 2-norm is the absolute value.
    """
    terms = []
    for t, s in _pairs(teacher_taps, student_taps):
        diff = l2_norm(_flat(t), axes=1) - l2_norm(_flat(s), axes=1)
        terms.append(absolute(diff).mean())
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


def distill_loss(teacher_taps, student_taps, config: DistillConfig):
    """Dispatch on ``config.kind``; returns ``None`` for :attr:`DistillKind.NONE`."""
    if config.kind is DistillKind.NONE:
        return None
    if config.kind is DistillKind.FSKD:
        return fskd_loss(teacher_taps, student_taps, config.flatten_mode)
    if config.kind is DistillKind.FITNET_L2:
        return fitnet_loss(teacher_taps, student_taps)
    return normkd_loss(teacher_taps, student_taps)


def total_loss(task_loss, distill, config: DistillConfig):
    """``task + lambda * distill``; the task loss itself when there is nothing to add."""
    if distill is None or config.kind is DistillKind.NONE or config.lambda_distill == 0:
        return task_loss
    return task_loss + as_tensor(distill) * config.lambda_distill
