"""Feature-direction distillation for low-resolution recognition.

A teacher trained on high-resolution images guides a student that only sees
degraded inputs; the student matches the direction of the teacher's
intermediate features (cosine similarity) rather than their magnitude.
"""

from .backbone import Backbone, BackboneConfig, build_backbone
from .distill import DistillConfig, DistillKind, FlattenMode, distill_loss, fitnet_loss, fskd_loss, normkd_loss
from .estimators import CosFaceNet, DistilledStudent, LowResolution
from .heads import MarginHeadParams, cosface_loss, softmax_loss

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "BackboneConfig",
    "CosFaceNet",
    "DistillConfig",
    "DistillKind",
    "DistilledStudent",
    "FlattenMode",
    "LowResolution",
    "MarginHeadParams",
    "build_backbone",
    "cosface_loss",
    "distill_loss",
    "fitnet_loss",
    "fskd_loss",
    "normkd_loss",
    "softmax_loss",
]
