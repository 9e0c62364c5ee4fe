from .tensor import (
    ShapeError,
    Tensor,
    abs_,
    add,
    as_tensor,
    avg_pool2x,
    backward,
    concat,
    conv2d,
    default_dtype,
    gelu,
    get_default_dtype,
    layer_norm,
    log,
    matmul,
    maximum,
    mean,
    mul,
    pad,
    reshape,
    set_default_dtype,
    sigmoid,
    slice_,
    softmax,
    sqrt,
    stack,
    sub,
    sum_,
    tanh,
    topological_order,
    transpose,
)
from .optim import AdamState, adam_step, decay_lr, epoch_decay_factor
from .params import (
    CheckpointError,
    ParamStore,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .gradcheck import gradcheck, numerical_grad, relative_error
