"""Datasets, HR -> LR degradation, batching and evaluation protocols."""

from .datasets import DataError, Dataset, PairList, load_dataset, load_pair_list, save_binary, save_image_tree
from .evaluate import eval_classification, eval_identification, eval_verification
from .iterate import PairedBatch, ResolutionSetting, batch_iterator, standardize
from .resize import VALID_RATIOS, bilinear_resize, make_lr, make_lr_batch

__all__ = [
    "DataError",
    "Dataset",
    "PairList",
    "PairedBatch",
    "ResolutionSetting",
    "VALID_RATIOS",
    "batch_iterator",
    "bilinear_resize",
    "eval_classification",
    "eval_identification",
    "eval_verification",
    "load_dataset",
    "load_pair_list",
    "make_lr",
    "make_lr_batch",
    "save_binary",
    "save_image_tree",
    "standardize",
]
