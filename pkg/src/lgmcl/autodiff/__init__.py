"""Dense float64 tensors with tape-based reverse-mode gradients."""

from . import tensor as ops
from .gradcheck import GradCheckResult, check_gradients, check_module, run_op_suite
from .nn import MLP, Embedding, GRUCell, LayerNorm, Linear, Module, gru_cell
from .optim import Adam, AdamState, adam_step
from .rng import SplitMix64, derive_seed, glorot_uniform, make_rng
from .tensor import (
    Parameter,
    StaleTapeError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    bce_with_logits,
    concat,
    cosine_similarity,
    dropout,
    elu,
    embedding_lookup,
    exp,
    gather_last,
    layer_norm,
    leaky_relu,
    log,
    logsumexp,
    l2_normalize,
    matmul,
    segment_sum,
    sigmoid,
    softmax,
    softmax_rows,
    stack,
    tanh,
)

__all__ = [
    "Adam", "AdamState", "Embedding", "GRUCell", "GradCheckResult", "LayerNorm", "Linear", "MLP",
    "Module", "Parameter", "SplitMix64", "StaleTapeError", "Tape", "Tensor", "adam_step", "as_tensor",
    "backward", "bce_with_logits", "check_gradients", "check_module", "concat", "cosine_similarity",
    "derive_seed", "dropout", "elu", "embedding_lookup", "exp", "gather_last", "glorot_uniform",
    "gru_cell", "l2_normalize", "layer_norm", "leaky_relu", "log", "logsumexp", "make_rng", "matmul",
    "ops", "run_op_suite", "segment_sum", "sigmoid", "softmax", "softmax_rows", "stack", "tanh",
]
