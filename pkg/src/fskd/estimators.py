"""scikit-learn style wrappers around the backbone, head and training loop.

``CosFaceNet`` trains one network on images at a fixed resolution setting
(a teacher uses ``ratios=(1,)``). ``DistilledStudent`` trains on the
degraded versions of HR images while matching a fitted teacher's features.
``LowResolution`` is the HR -> LR degradation as a transformer.

Images are uint8 arrays of shape N x H x W x C (or N x H x W for grayscale).
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .backbone import BackboneConfig, build_backbone
from .data.datasets import Dataset
from .data.iterate import ResolutionSetting, standardize
from .data.resize import make_lr_batch
from .distill import DistillConfig, DistillKind
from .heads import MarginHeadParams, cosine_logits
from .training import Schedule, TeacherTaps, TrainState, train


def check_images(X) -> np.ndarray:
    """Validate an image stack and return it as uint8 N x H x W x C."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=None, ensure_all_finite=False)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4:
        raise ValueError(f"expected N x H x W x C images, got shape {X.shape}")
    if X.dtype != np.uint8:
        if np.issubdtype(X.dtype, np.number) and X.size and (X.min() < 0 or X.max() > 255 or np.any(X != np.rint(X))):
            raise ValueError("images must hold integer pixel values in [0, 255]")
        X = X.astype(np.uint8)
    if X.shape[1] != X.shape[2]:
        raise ValueError(f"images must be square, got {X.shape[1]}x{X.shape[2]}")
    return X


class LowResolution(TransformerMixin, BaseEstimator):
    """Bilinear down-then-up degradation by ``ratio`` (1 is the identity)."""

    def __init__(self, ratio=4):
        self.ratio = ratio

    def fit(self, X, y=None):
        check_images(X)
        return self

    def transform(self, X):
        return make_lr_batch(check_images(X), self.ratio)


class CosFaceNet(ClassifierMixin, BaseEstimator):
    """Residual CNN with a CosFace head, trained by SGD with momentum.

    ``predict`` takes the arg-max of the margin-free cosine logits and
    ``transform`` returns the embeddings. Inputs are used as given; wrap the
    estimator after :class:`LowResolution` to evaluate on degraded images.
    """

    def __init__(
        self,
        widths=(16, 32, 64),
        blocks_per_stage=2,
        embedding_dim=128,
        scale=64.0,
        margin=0.35,
        lr=0.05,
        milestones=(12, 17),
        decay=0.1,
        epochs=20,
        batch_size=64,
        momentum=0.9,
        weight_decay=5e-4,
        schedule_unit="epoch",
        resolution_mode="single",
        ratios=(1,),
        is_face=False,
        random_state=0,
    ):
        self.widths = widths
        self.blocks_per_stage = blocks_per_stage
        self.embedding_dim = embedding_dim
        self.scale = scale
        self.margin = margin
        self.lr = lr
        self.milestones = milestones
        self.decay = decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule_unit = schedule_unit
        self.resolution_mode = resolution_mode
        self.ratios = ratios
        self.is_face = is_face
        self.random_state = random_state

    # -- configuration helpers

    def _schedule(self) -> Schedule:
        return Schedule(
            self.lr, self.milestones, self.decay, self.epochs, self.batch_size, self.momentum, self.weight_decay,
            self.schedule_unit,
        )

    def _setting(self) -> ResolutionSetting:
        return ResolutionSetting(self.resolution_mode, self.ratios)

    def _backbone_config(self, X) -> BackboneConfig:
        return BackboneConfig(tuple(self.widths), self.blocks_per_stage, self.embedding_dim, X.shape[1], X.shape[3])

    def _distill(self) -> DistillConfig:
        return DistillConfig(DistillKind.NONE, 0.0)

    def _teacher_taps(self, dataset: Dataset):
        return None

    def _init_state(self, X, n_classes: int) -> TrainState:
        seed = int(self.random_state)
        backbone = build_backbone(self._backbone_config(X), seed)
        head = MarginHeadParams.init(self.embedding_dim, n_classes, seed + 1, self.scale, self.margin)
        return TrainState.create(backbone, head, self._schedule())

    @classmethod
    def from_state(cls, state: TrainState, classes=None, **params):
        """Wrap an already trained :class:`TrainState` as a fitted estimator."""
        cfg = state.backbone.config
        est = cls(
            widths=cfg.block_channel_widths, blocks_per_stage=cfg.blocks_per_stage,
            embedding_dim=cfg.embedding_dim, scale=state.head.s, margin=state.head.m, **params,
        )
        est.state_ = state
        est.backbone_ = state.backbone
        est.head_ = state.head
        est.classes_ = np.arange(state.head.n_classes) if classes is None else np.asarray(classes)
        est.metrics_ = state.metrics
        return est

    # -- estimator API

    def fit(self, X, y, eval_set=None):
        """Train from scratch. ``eval_set=(X_eval, y_eval)`` adds per-epoch accuracy."""
        X = check_images(X)
        y = np.asarray(y).reshape(-1)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} images but {len(y)} labels")
        self.classes_, codes = np.unique(y, return_inverse=True)
        dataset = Dataset(X, codes, is_face=self.is_face)
        self.state_ = self._init_state(X, len(self.classes_))
        return self._run(dataset, eval_set)

    def _run(self, dataset: Dataset, eval_set=None):
        evaluate = None
        if eval_set is not None:
            Xe, ye = check_images(eval_set[0]), np.asarray(eval_set[1])

            def evaluate():
                return float(np.mean(self.predict(Xe) == ye))

        self.backbone_ = self.state_.backbone
        self.head_ = self.state_.head
        train(
            self.state_,
            dataset,
            self._schedule(),
            self._setting(),
            int(self.random_state),
            self._distill(),
            self._teacher_taps(dataset),
            evaluate,
        )
        self.metrics_ = self.state_.metrics
        return self

    def embed(self, X, batch_size: int = 256) -> np.ndarray:
        check_is_fitted(self, "backbone_")
        X = check_images(X)
        out = [self.backbone_.embed(standardize(X[i : i + batch_size])) for i in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.embedding_dim))

    def transform(self, X):
        return self.embed(X)

    def decision_function(self, X) -> np.ndarray:
        """Margin-free cosine logits, one column per class."""
        return cosine_logits(self.embed(X), self.head_.W).data

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class DistilledStudent(CosFaceNet):
    """A :class:`CosFaceNet` trained on LR inputs with feature distillation.

    ``fit`` receives HR images; LR inputs are synthesized per
    ``resolution_mode``/``ratios``. The total objective is the CosFace loss
    plus ``lambda_distill`` times the ``distill`` loss between the frozen
    ``teacher``'s HR taps and the student's LR taps.
    """

    def __init__(
        self,
        teacher=None,
        distill="fskd",
        lambda_distill=5.0,
        flatten_mode="whole_map",
        cache_teacher=True,
        widths=(16, 32, 64),
        blocks_per_stage=2,
        embedding_dim=128,
        scale=64.0,
        margin=0.35,
        lr=0.05,
        milestones=(12, 17),
        decay=0.1,
        epochs=20,
        batch_size=64,
        momentum=0.9,
        weight_decay=5e-4,
        schedule_unit="epoch",
        resolution_mode="single",
        ratios=(4,),
        is_face=False,
        random_state=0,
    ):
        super().__init__(
            widths=widths,
            blocks_per_stage=blocks_per_stage,
            embedding_dim=embedding_dim,
            scale=scale,
            margin=margin,
            lr=lr,
            milestones=milestones,
            decay=decay,
            epochs=epochs,
            batch_size=batch_size,
            momentum=momentum,
            weight_decay=weight_decay,
            schedule_unit=schedule_unit,
            resolution_mode=resolution_mode,
            ratios=ratios,
            is_face=is_face,
            random_state=random_state,
        )
        self.teacher = teacher
        self.distill = distill
        self.lambda_distill = lambda_distill
        self.flatten_mode = flatten_mode
        self.cache_teacher = cache_teacher

    def _distill(self) -> DistillConfig:
        return DistillConfig(self.distill, self.lambda_distill, self.flatten_mode)

    def _teacher_taps(self, dataset: Dataset):
        if DistillKind(self.distill) is DistillKind.NONE:
            return None
        # flips change the HR image per epoch, so cached features would be stale
        cache = self.cache_teacher and not dataset.is_face
        return TeacherTaps(self.teacher.backbone_, dataset if cache else None)

    def fit(self, X, y, eval_set=None):
        if DistillKind(self.distill) is not DistillKind.NONE:
            if self.teacher is None:
                raise ValueError("a fitted teacher is required for distillation")
            check_is_fitted(self.teacher, "backbone_")
            X = check_images(X)
            if self.teacher.backbone_.config != self._backbone_config(X):
                raise ValueError(
                    f"teacher backbone {self.teacher.backbone_.config} does not match student "
                    f"{self._backbone_config(X)}"
                )
        return super().fit(X, y, eval_set)
