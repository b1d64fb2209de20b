"""Seeded HR/LR paired mini-batches."""

from dataclasses import dataclass
from typing import Iterator, Sequence, Tuple

import numpy as np

from .datasets import DataError, Dataset
from .resize import VALID_RATIOS, make_lr_batch

MEAN = 0.5
STD = 0.5


@dataclass(frozen=True)
class ResolutionSetting:
    """``single`` trains on one ratio; ``multiple`` draws a ratio per sample."""

    mode: str = "single"
    ratios: Tuple[int, ...] = (4,)

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(int(r) for r in self.ratios))
        if self.mode not in ("single", "multiple"):
            raise ValueError(f"mode must be 'single' or 'multiple', got {self.mode!r}")
        if any(r not in VALID_RATIOS for r in self.ratios):
            raise ValueError(f"ratios must be drawn from {VALID_RATIOS}, got {self.ratios}")
        if len(set(self.ratios)) != len(self.ratios):
            raise ValueError("ratios must be distinct")
        if self.mode == "single" and len(self.ratios) != 1:
            raise ValueError("single mode takes exactly one ratio")
        if self.mode == "multiple" and (len(self.ratios) < 2 or 1 not in self.ratios):
            raise ValueError("multiple mode needs at least two ratios including 1")

    @classmethod
    def single(cls, ratio: int) -> "ResolutionSetting":
        return cls("single", (ratio,))


@dataclass
class PairedBatch:
    hr: np.ndarray  # N x C x H x W, standardized
    lr: np.ndarray  # same shape as hr
    labels: np.ndarray
    ratios_used: np.ndarray
    indices: np.ndarray


def standardize(images: np.ndarray, mean: float = MEAN, std: float = STD) -> np.ndarray:
    """uint8 N x H x W x C -> float64 N x C x H x W scaled to [0, 1] then shifted."""
    x = np.asarray(images, dtype=np.float64) / 255.0
    return np.ascontiguousarray(((x - mean) / std).transpose(0, 3, 1, 2))


def degrade(images: np.ndarray, ratios: Sequence[int]) -> np.ndarray:
    """Per-sample :func:`make_lr` with the given ratio for each image."""
    ratios = np.asarray(ratios)
    out = np.empty_like(images)
    for r in np.unique(ratios):
        sel = ratios == r
        out[sel] = make_lr_batch(images[sel], int(r))
    return out


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch)])


def batch_iterator(
    dataset: Dataset,
    setting: ResolutionSetting,
    batch_size: int,
    seed: int,
    epoch: int = 0,
    flip: bool = None,
) -> Iterator[PairedBatch]:
    """Yield one epoch of shuffled :class:`PairedBatch` es.

    The order, the per-sample ratios and any flips are a pure function of
    ``(seed, epoch)``. ``hr`` always holds the undegraded image. A trailing
    batch of a single sample is dropped (batch statistics need two).
    """
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    if len(dataset) == 0:
        raise DataError("cannot iterate over an empty dataset")
    flip = dataset.is_face if flip is None else flip
    rng = epoch_rng(seed, epoch)
    order = rng.permutation(len(dataset))
    if setting.mode == "single":
        ratios = np.full(len(dataset), setting.ratios[0], dtype=np.int64)
    else:
        ratios = rng.choice(np.asarray(setting.ratios, dtype=np.int64), size=len(dataset))
    flips = rng.random(len(dataset)) < 0.5 if flip else np.zeros(len(dataset), dtype=bool)
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if len(idx) < 2:
            break
        hr = dataset.images[idx]
        f = flips[start : start + len(idx)]
        if f.any():
            hr = hr.copy()
            hr[f] = hr[f][:, :, ::-1]
        r = ratios[start : start + len(idx)]
        yield PairedBatch(standardize(hr), standardize(degrade(hr, r)), dataset.labels[idx], r, idx)
