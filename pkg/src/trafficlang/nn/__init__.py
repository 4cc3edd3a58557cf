"""A small reverse-mode differentiation engine with the layers the
classifiers need."""
from .ops import (
    bce_loss,
    bidirectional,
    concat,
    conv1d,
    conv_maxpool,
    dense,
    embedding,
    gru_layer,
    lstm_layer,
    maxpool_over_time,
    weighted_sum,
    word_attention,
)
from .optim import OPTIMIZERS, Adam, RMSProp, adam_step, clip_grad_norm, rmsprop_step
from .tensor import Parameter, Tape, Tensor, default_dtype, precision

__all__ = [
    "Adam", "OPTIMIZERS", "Parameter", "RMSProp", "Tape", "Tensor", "adam_step", "bce_loss",
    "bidirectional", "clip_grad_norm", "concat", "conv1d", "conv_maxpool", "default_dtype", "dense", "embedding",
    "gru_layer", "lstm_layer", "maxpool_over_time", "precision", "rmsprop_step", "weighted_sum",
    "word_attention",
]
