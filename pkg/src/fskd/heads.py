"""Softmax and CosFace classification heads over a bias-free weight matrix."""

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, cross_entropy, linear, normalize
from .engine.tensor import as_tensor


@dataclass
class MarginHeadParams:
    """Class weights ``W`` (d x n), scale ``s`` and cosine margin ``m``.

    ``W`` is stored unconstrained; its columns are renormalized every time a
    loss or logit is evaluated.
    """

    W: Tensor
    s: float = 64.0
    m: float = 0.35

    def __post_init__(self):
        if not isinstance(self.W, Tensor):
            self.W = Tensor(self.W, requires_grad=True)
        if self.W.ndim != 2:
            raise ValueError(f"W must be d x n, got shape {self.W.shape}")
        if self.s <= 0:
            raise ValueError("scale s must be positive")
        if not 0.0 <= self.m < 1.0:
            raise ValueError("margin m must lie in [0, 1)")

    @classmethod
    def init(cls, dim: int, n_classes: int, seed: int = 0, s: float = 64.0, m: float = 0.35):
        rng = np.random.default_rng(seed)
        # unit columns: the loss only sees W_j / |W_j|, so the gradient on a
        # column scales as 1 / |W_j| and a tiny init makes the class directions
        # jump around at any reasonable learning rate
        w = rng.normal(size=(dim, n_classes))
        w /= np.linalg.norm(w, axis=0, keepdims=True)
        return cls(Tensor(w, requires_grad=True), s, m)

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]


def _check_labels(labels, n_classes: int, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if n < 1:
        raise ValueError("need at least one sample")
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def softmax_loss(embeddings, labels, W) -> Tensor:
    """Mean cross-entropy of raw logits ``x @ W`` (no normalization, no bias)."""
    x, W = as_tensor(embeddings), as_tensor(W)
    labels = _check_labels(labels, W.shape[1], x.shape[0])
    return cross_entropy(linear(x, W), labels)


def cosine_logits(embeddings, W) -> Tensor:
    """cos(theta_j) between each L2-normalized row of x and column of W."""
    x, W = as_tensor(embeddings), as_tensor(W)
    if np.any(np.sum(x.data * x.data, axis=1) == 0.0):
        raise ValueError("cannot normalize a zero-norm embedding")
    return linear(normalize(x, axes=1), normalize(W, axes=0))


def cosface_loss(embeddings, labels, params: MarginHeadParams) -> Tensor:
    """Large margin cosine loss.

    Logits are ``s * (cos(theta_j) - m * [j == y])`` followed by the usual
    mean cross-entropy.
    """
    x = as_tensor(embeddings)
    labels = _check_labels(labels, params.n_classes, x.shape[0])
    cos = cosine_logits(x, params.W)
    margin = np.zeros(cos.shape)
    margin[np.arange(len(labels)), labels] = params.m
    return cross_entropy((cos - margin) * params.s, labels)


def predict_classes(embeddings, params: MarginHeadParams) -> np.ndarray:
    """Arg-max of the margin-free cosine logits."""
    return np.argmax(cosine_logits(embeddings, params.W).data, axis=1)
