"""Losses, regularizers, and diagnostics for class-imbalanced segmentation.

The package reproduces, at desk scale, the failure mode of segmentation
training under extreme class imbalance: the rare class's logits shift between
training and test data, so sensitivity collapses while precision and
specificity look healthy. It provides the loss functions and training-time
regularizers that counteract the shift, a small reverse-mode convolutional
net to observe it with, metrics and logit diagnostics to measure it, and a
synthetic data generator plus CLI harness to run the experiments end to end.
"""

from . import data, diagnostics, harness, metrics, net, regularizers
from .core import (
    label_residual,
    log_sum_exp,
    shifted_softmax,
    softmax,
    softmax_vjp,
    validate_one_hot,
    validate_rarity,
)
from .errors import (
    ConfigError,
    DomainError,
    EmptyMaskError,
    FormatError,
    InvalidInputError,
    TrainingDivergence,
)
from .losses import (
    LOSS_KINDS,
    LossConfig,
    LossValue,
    ce_loss,
    combined_ce_loss,
    combined_dsc_loss,
    dsc_loss,
    evaluate_loss,
    fbeta_loss,
    focal_ce_loss,
    focal_dsc_loss,
    focal_weight,
    margin_ce_loss,
    margin_dsc_loss,
    margin_weight,
)

__version__ = "0.1.0"
