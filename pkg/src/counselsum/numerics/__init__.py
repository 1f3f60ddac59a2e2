from .checkpoint import CheckpointError, load_tensors, save_tensors
from .gradcheck import finite_diff_grad, finite_diff_wrt, rel_error
from .layers import (BiLstm, Dense, GruCell, LstmCell, cross_entropy,
                     scaled_dot_attention, uniform_param)
from .optim import OptimizerState, sgd_step
from .rng import Rng
from .tensor import (Tensor, activation, concat, eye, gradients, kron_eye,
                     matmul, pinv_rsqrt, psd_pinv_sqrt, relu, scatter_matrix,
                     sigmoid, softmax, stack_rows, take_at, take_rows, tanh,
                     zero_grads, zeros)

__all__ = [
    "BiLstm", "CheckpointError", "Dense", "GruCell", "LstmCell",
    "OptimizerState", "Rng", "Tensor", "activation", "concat",
    "cross_entropy", "eye", "finite_diff_grad", "finite_diff_wrt",
    "gradients", "kron_eye", "load_tensors", "matmul", "pinv_rsqrt",
    "psd_pinv_sqrt", "rel_error", "relu", "save_tensors",
    "scaled_dot_attention", "scatter_matrix", "sgd_step", "sigmoid",
    "softmax", "stack_rows", "take_at", "take_rows", "tanh",
    "uniform_param", "zero_grads", "zeros",
]
