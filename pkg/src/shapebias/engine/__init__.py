from .tensor import (
    FLOAT32,
    FLOAT64,
    NumericalFault,
    ShapeMismatch,
    Tensor,
    dtype_for,
    require_finite,
)
from .layers import (
    BatchNorm2dSpec,
    Conv2dSpec,
    DenseSpec,
    FlattenSpec,
    GlobalAvgPoolSpec,
    Layer,
    LayerSpec,
    MaxPool2dSpec,
    ReluSpec,
    batchnorm2d,
    batchnorm2d_backward,
    build_layer,
    conv2d,
    conv2d_backward,
    conv_output_extent,
    dense,
    dense_backward,
    flatten,
    flatten_backward,
    global_avg_pool,
    global_avg_pool_backward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
    validate_stack,
)
from .optim import LrSchedule, OptimizerState, optimizer_step, schedule_lr
from .gradcheck import (
    GradCheckReport,
    grad_check,
    kink_margins,
    stack_backward,
    stack_forward,
    stack_loss,
)
from .checkpoint import ENGINE_VERSION, load_checkpoint, save_checkpoint
