"""Closed-set classification, 1:1 verification and 1:N identification.

``model`` is any object with ``embed(images)`` returning an N x d array for
uint8 N x H x W x C images; classification additionally needs
``predict(images)``. Images are degraded to the requested ratio first.
"""

import numpy as np

from .datasets import DataError, Dataset, PairList
from .resize import make_lr_batch


def _unit(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def eval_classification(model, dataset: Dataset, ratio: int = 1) -> float:
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    pred = model.predict(make_lr_batch(dataset.images, ratio))
    return float(np.mean(pred == dataset.labels))


def best_threshold_accuracy(scores: np.ndarray, same: np.ndarray):
    """Accuracy at the best single threshold (predict same when score > t).

    Candidate thresholds are the midpoints between consecutive sorted
    scores, plus one below the minimum and one above the maximum.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    s = np.unique(scores)
    cands = np.concatenate([[s[0] - 1.0], (s[:-1] + s[1:]) / 2.0, [s[-1] + 1.0]])
    accs = [(np.mean((scores > t) == same), t) for t in cands]
    best = max(accs, key=lambda a: a[0])
    return float(best[0]), float(best[1])


def verification_scores(model, pairs: PairList, ratio: int = 1) -> np.ndarray:
    ea = _unit(model.embed(make_lr_batch(pairs.images_a, ratio)))
    eb = _unit(model.embed(make_lr_batch(pairs.images_b, ratio)))
    return np.sum(ea * eb, axis=1)


def eval_verification(model, pairs: PairList, ratio: int = 1, folds: int = 1) -> float:
    """Verification accuracy from cosine scores of normalized embeddings.

    ``folds=1`` reports accuracy at the best threshold over all pairs. With
    ``folds=k`` the threshold is chosen on k-1 folds and scored on the held
    out one, and the k accuracies are averaged.
    """
    if len(pairs.same) == 0:
        raise DataError("cannot evaluate on an empty pair list")
    scores = verification_scores(model, pairs, ratio)
    return verification_accuracy(scores, pairs.same, folds)


def verification_accuracy(scores, same, folds: int = 1) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if folds <= 1:
        return best_threshold_accuracy(scores, same)[0]
    if len(scores) < folds:
        raise ValueError(f"need at least {folds} pairs for {folds}-fold evaluation")
    parts = np.array_split(np.arange(len(scores)), folds)
    accs = []
    for k, test in enumerate(parts):
        train = np.concatenate([p for j, p in enumerate(parts) if j != k])
        _, t = best_threshold_accuracy(scores[train], same[train])
        accs.append(np.mean((scores[test] > t) == same[test]))
    return float(np.mean(accs))


def rank1_accuracy(gallery_emb, gallery_labels, probe_emb, probe_labels) -> float:
    g = _unit(np.asarray(gallery_emb, dtype=np.float64))
    p = _unit(np.asarray(probe_emb, dtype=np.float64))
    nearest = np.argmax(p @ g.T, axis=1)
    return float(np.mean(np.asarray(gallery_labels)[nearest] == np.asarray(probe_labels)))


def eval_identification(model, gallery: Dataset, probes: Dataset, ratio: int = 1) -> float:
    """Rank-1 rate of nearest-gallery-neighbour search by cosine similarity.

    The gallery stays at full resolution; probes are degraded to ``ratio``.
    """
    if len(gallery) == 0 or len(probes) == 0:
        raise DataError("gallery and probes must be non-empty")
    g = model.embed(gallery.images)
    p = model.embed(make_lr_batch(probes.images, ratio))
    return rank1_accuracy(g, gallery.labels, p, probes.labels)
