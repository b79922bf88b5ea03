from .tensor import Tensor, ShapeError
from .layers import (BiLSTM, ConfigError, Dense, EncoderLayer, LayerNorm, LSTMCell, MLP, Module,
                     MultiHeadSelfAttention)
from .optim import Adam, AdamState, adam_step

__all__ = ["Tensor", "ShapeError", "BiLSTM", "ConfigError", "Dense", "EncoderLayer", "LayerNorm",
           "LSTMCell", "MLP", "Module", "MultiHeadSelfAttention", "Adam", "AdamState", "adam_step"]
