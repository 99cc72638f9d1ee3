from .tensor import (
    MASK_FILL,
    DimensionError,
    NumericalError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    index,
    layer_norm,
    log,
    log_softmax,
    logsumexp,
    masked_fill,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    square,
    sub,
    sum_,
    tanh,
    transpose,
)
from .nn import Adam, LayerNorm, Linear, Module, clip_grad_norm, parameter, xavier_uniform
from .gradcheck import numerical_gradient, relative_error
